"""Weighted antitonic (nonincreasing) least squares.

Three routes to the same fit live here: the O(K) pool-adjacent-violators
solver, the left-slope-of-the-least-concave-majorant characterization on the
cumulative sum diagram, and an exhaustive partition oracle for testing.

Zero-weight positions contribute no cost, so the least-squares minimizer is
not unique there.  We return the left slope of the least concave majorant at
the (duplicated) diagram abscissa, which amounts to carrying the block value
of the nearest positive-weight position on the left.  Positions before the
first positive weight get +inf: that is the only assignment under which the
switch relation between the fit and its greatest-argmax inverse stays an
exact equivalence (any finite value would break it for levels above the
first block).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightedSeries:
    """Bin means ``y`` with nonnegative weights ``w``; y is only meaningful where w > 0."""

    y: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        if y.ndim != 1 or w.shape != y.shape or y.size < 1:
            raise ValueError("y and w must be one-dimensional and of equal positive length")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not np.any(w > 0):
            raise ValueError("at least one weight must be positive")

    def __len__(self):
        return self.y.size

    @property
    def mask(self) -> np.ndarray:
        return self.w > 0


@dataclass(frozen=True)
class Block:
    """A pooled block [start, end) of positions sharing one fitted value."""

    start: int
    end: int
    value: float
    weight: float


@dataclass(frozen=True)
class AntitonicFit:
    fitted: np.ndarray
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "fitted", np.asarray(self.fitted, dtype=float))


@dataclass(frozen=True)
class CusumDiagram:
    """Cumulative sum diagram points, origin included; u is nondecreasing."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if u.shape != v.shape or u.ndim != 1 or u.size < 1:
            raise ValueError("u and v must be one-dimensional of equal length")
        if u[0] != 0.0 or v[0] != 0.0:
            raise ValueError("diagram must start at the origin")
        if np.any(np.diff(u) < 0):
            raise ValueError("u must be nondecreasing")

    @staticmethod
    def from_series(series: WeightedSeries) -> "CusumDiagram":
        w = series.w
        total = float(np.sum(w))
        wy = np.where(series.mask, w * np.where(series.mask, series.y, 0.0), 0.0)
        u = np.concatenate(([0.0], np.cumsum(w))) / total
        v = np.concatenate(([0.0], np.cumsum(wy))) / total
        return CusumDiagram(u, v)


def _pava_positive(y, w):
    """Stack PAVA for strictly positive weights.

    Returns a list of (count, sum_w, sum_wy) triples with strictly decreasing
    pooled means.  Means are always formed as ratios of running sums.
    """
    blocks = []  # each entry: [count, sum_w, sum_wy]
    for yk, wk in zip(y, w):
        blocks.append([1, wk, wk * yk])
        while len(blocks) >= 2:
            c2, w2, s2 = blocks[-1]
            c1, w1, s1 = blocks[-2]
            if s1 / w1 >= s2 / w2:
                break
            blocks.pop()
            blocks[-1] = [c1 + c2, w1 + w2, s1 + s2]
    # canonical form: merge adjacent blocks whose pooled means tie exactly
    merged = []
    for blk in blocks:
        if merged and merged[-1][2] / merged[-1][1] == blk[2] / blk[1]:
            prev = merged[-1]
            merged[-1] = [prev[0] + blk[0], prev[1] + blk[1], prev[2] + blk[2]]
        else:
            merged.append(blk)
    return merged


def _expand_blocks(series: WeightedSeries, pos_blocks, pos_index) -> AntitonicFit:
    """Map blocks over the positive-weight subsequence back to all K positions.

    Zero-weight positions attach to the block of the positive position on
    their left; leading zero-weight positions form a degenerate +inf block.
    """
    K = len(series)
    fitted = np.empty(K, dtype=float)
    out_blocks = []
    lead = pos_index[0] if len(pos_index) else K
    if lead > 0:
        fitted[:lead] = math.inf
        out_blocks.append(Block(0, lead, math.inf, 0.0))
    taken = 0
    start = lead
    for i, (count, sw, swy) in enumerate(pos_blocks):
        taken += count
        # block extends through trailing zero-weight positions up to the next
        # positive position (or the end of the series)
        end = pos_index[taken] if taken < len(pos_index) else K
        value = swy / sw
        fitted[start:end] = value
        out_blocks.append(Block(start, end, value, sw))
        start = end
    return AntitonicFit(fitted, tuple(out_blocks))


def pava_antitonic(series: WeightedSeries) -> AntitonicFit:
    """Minimizer of sum_k w_k (y_k - h_k)^2 over h_1 >= ... >= h_K, in O(K)."""
    pos_index = np.flatnonzero(series.mask)
    pos_blocks = _pava_positive(series.y[pos_index], series.w[pos_index])
    return _expand_blocks(series, pos_blocks, pos_index)


def brute_force_antitonic(series: WeightedSeries, max_size: int = 14) -> AntitonicFit:
    """Exhaustive oracle: try every contiguous-block partition, keep the best.

    Enumerates the 2^(P-1) partitions of the positive-weight subsequence,
    pools weighted means per block, discards partitions whose pooled values
    are not nonincreasing, and returns the feasible candidate with minimal
    weighted SSE.  Exact up to floating round-off; refuses K > ``max_size``.
    """
    K = len(series)
    if K > max_size:
        raise ValueError(f"brute force restricted to K <= {max_size}")
    pos_index = np.flatnonzero(series.mask)
    y = series.y[pos_index]
    w = series.w[pos_index]
    P = len(pos_index)
    best = None
    best_sse = math.inf
    for cuts in itertools.product((False, True), repeat=P - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [P]
        means = []
        feasible = True
        for lo, hi in zip(bounds, bounds[1:]):
            sw = float(np.sum(w[lo:hi]))
            swy = float(np.sum(w[lo:hi] * y[lo:hi]))
            m = swy / sw
            if means and m > means[-1]:
                feasible = False
                break
            means.append(m)
        if not feasible:
            continue
        sse = 0.0
        for (lo, hi), m in zip(zip(bounds, bounds[1:]), means):
            sse += float(np.sum(w[lo:hi] * (y[lo:hi] - m) ** 2))
        if best is None or sse < best_sse - 1e-15 * max(1.0, abs(best_sse)):
            best_sse = sse
            best = (bounds, means)
    bounds, means = best
    blocks = []
    for (lo, hi), m in zip(zip(bounds, bounds[1:]), means):
        sw = float(np.sum(w[lo:hi]))
        blocks.append([hi - lo, sw, sw * m])
    # merge exact ties so the block representation is canonical
    merged = []
    for blk in blocks:
        if merged and merged[-1][2] / merged[-1][1] == blk[2] / blk[1]:
            prev = merged[-1]
            merged[-1] = [prev[0] + blk[0], prev[1] + blk[1], prev[2] + blk[2]]
        else:
            merged.append(blk)
    return _expand_blocks(series, merged, pos_index)


def lcm_left_slopes(diagram: CusumDiagram) -> np.ndarray:
    """Left slope of the least concave majorant at each abscissa u_1..u_K.

    Where consecutive abscissas coincide (an empty bin) the slope carried is
    the one of the majorant segment ending there; at a duplicated origin the
    slope is +inf, matching the convention of :func:`pava_antitonic`.
    """
    u = diagram.u
    v = diagram.v
    # collapse duplicated abscissas (their ordinates coincide by construction)
    keep = np.concatenate(([True], np.diff(u) > 0))
    uu = u[keep]
    vv = v[keep]
    hull_u = [uu[0]]
    hull_v = [vv[0]]
    for x, yv in zip(uu[1:], vv[1:]):
        while len(hull_u) >= 2:
            cross = (hull_u[-1] - hull_u[-2]) * (yv - hull_v[-2]) - (hull_v[-1] - hull_v[-2]) * (x - hull_u[-2])
            if cross >= 0:  # hull point is on or below the chord: not a vertex
                hull_u.pop()
                hull_v.pop()
            else:
                break
        hull_u.append(x)
        hull_v.append(yv)
    slopes = np.empty(u.size - 1, dtype=float)
    for j in range(1, u.size):
        t = u[j]
        if t == 0.0:
            slopes[j - 1] = math.inf
            continue
        idx = int(np.searchsorted(hull_u, t, side="left"))
        slopes[j - 1] = (hull_v[idx] - hull_v[idx - 1]) / (hull_u[idx] - hull_u[idx - 1])
    return slopes
