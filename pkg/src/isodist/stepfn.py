"""Piecewise-constant functions on [0, 1] with an explicit continuity side.

A :class:`StepFunction` is the shared representation for every estimator and
cumulative process in this package: left-continuous fits, right-continuous
cumulative sums, and their generalized inverses.  Knots that come from a
regular bin grid carry exact (numerator, denominator) pairs so that equality
tests at bin edges never depend on how ``k / K`` was rounded elsewhere.
"""
from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


class DomainError(ValueError):
    """Raised when an evaluation point falls outside [0, 1]."""


@dataclass(frozen=True)
class StepFunction:
    """A step function on [0, 1].

    Parameters
    ----------
    knots : tuple of float
        Strictly increasing breakpoints.  A left-continuous function has
        knots in the open interval (0, 1); a right-continuous one may carry
        a knot at 1.0 (its last piece then degenerates to the point {1}).
    values : tuple of float
        One value per piece, ``len(knots) + 1`` of them.  A left-continuous
        function takes ``values[i]`` on ``(knots[i-1], knots[i]]``; a
        right-continuous one on ``[knots[i-1], knots[i])``.
    side : Side
        Which piece wins when evaluating exactly at a knot.
    nonincreasing : bool
        When set, the constructor verifies ``values`` is nonincreasing.
    knot_ratios : tuple of (int, int), optional
        Exact rational identities ``knots[i] == num/den`` for grid knots.
    """

    knots: tuple
    values: tuple
    side: Side
    nonincreasing: bool = False
    knot_ratios: tuple = None

    def __post_init__(self):
        knots = tuple(float(t) for t in self.knots)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if len(values) != len(knots) + 1:
            raise ValueError("need exactly one value per piece")
        for a, b in zip(knots, knots[1:]):
            if not a < b:
                raise ValueError("knots must be strictly increasing")
        if knots:
            lo, hi = knots[0], knots[-1]
            if self.side is Side.LEFT and not (0.0 < lo and hi < 1.0):
                raise ValueError("left-continuous knots must lie in (0, 1)")
            if self.side is Side.RIGHT and not (0.0 < lo and hi <= 1.0):
                raise ValueError("right-continuous knots must lie in (0, 1]")
        if self.nonincreasing:
            for a, b in zip(values, values[1:]):
                if b > a:
                    raise ValueError("values are not nonincreasing")
        if self.knot_ratios is not None:
            ratios = tuple((int(n), int(d)) for n, d in self.knot_ratios)
            object.__setattr__(self, "knot_ratios", ratios)
            if len(ratios) != len(knots):
                raise ValueError("need one (num, den) pair per knot")
            for t, (n, d) in zip(knots, ratios):
                if d <= 0 or n / d != t:
                    raise ValueError("knot ratio %d/%d does not match knot %r" % (n, d, t))

    def __call__(self, t):
        return self.eval(t)

    def eval(self, t: float) -> float:
        """Value of the piece containing ``t``, honoring the continuity side."""
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"evaluation point {t!r} outside [0, 1]")
        if self.side is Side.LEFT:
            idx = bisect_left(self.knots, t)
        else:
            idx = bisect_right(self.knots, t)
        return self.values[idx]

    def to_json_dict(self) -> dict:
        return {"side": self.side.value, "knots": list(self.knots), "values": list(self.values)}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @staticmethod
    def from_json_dict(doc: dict) -> "StepFunction":
        return StepFunction(tuple(doc["knots"]), tuple(doc["values"]), Side(doc["side"]))


def grid_points(K: int):
    """The bin grid 0, 1/K, ..., K/K as floats, each computed as k/K."""
    return [k / K for k in range(K + 1)]


def left_step_from_grid(K: int, values: Sequence[float], nonincreasing: bool = False) -> StepFunction:
    """Left-continuous step function constant on (x[k-1], x[k]] with x[k] = k/K.

    ``values[k-1]`` is the value on the k-th bin; knots are the interior grid
    points 1/K .. (K-1)/K, stored together with their exact ratios.
    """
    if len(values) != K:
        raise ValueError("need one value per bin")
    knots = tuple(k / K for k in range(1, K))
    ratios = tuple((k, K) for k in range(1, K))
    return StepFunction(knots, tuple(values), Side.LEFT, nonincreasing=nonincreasing, knot_ratios=ratios)


def right_step_from_grid(K: int, values: Sequence[float]) -> StepFunction:
    """Right-continuous step function constant on [x[k-1], x[k]) with jumps at k/K.

    ``values`` has K + 1 entries: the value at 0 and the value attained at
    every grid point k/K (held on [k/K, (k+1)/K)).
    """
    if len(values) != K + 1:
        raise ValueError("need K + 1 values")
    knots = tuple(k / K for k in range(1, K + 1))
    ratios = tuple((k, K) for k in range(1, K + 1))
    return StepFunction(knots, tuple(values), Side.RIGHT, knot_ratios=ratios)


def generalized_inverse(h: StepFunction, a: float) -> float:
    """Greatest t in [0, 1] with h(t) >= a, and 0 when no such t exists.

    ``h`` must be a nonincreasing left-continuous step function; left
    continuity makes the supremum attained, so the scan over pieces is exact.
    """
    if h.side is not Side.LEFT:
        raise ValueError("generalized inverse is defined for left-continuous functions")
    if not h.nonincreasing:
        raise ValueError("function must be flagged nonincreasing")
    a = float(a)
    values = h.values
    if values[-1] >= a:
        return 1.0
    # last piece index with value >= a; values are nonincreasing
    lo, hi = 0, len(values)  # search first index with value < a
    while lo < hi:
        mid = (lo + hi) // 2
        if values[mid] >= a:
            lo = mid + 1
        else:
            hi = mid
    if lo == 0:
        return 0.0
    return h.knots[lo - 1]


def extend_g(mu: Callable[[float], float], a: float, tol: float = 1e-12) -> float:
    """Inverse of a strictly decreasing continuous ``mu`` on [0, 1], extended.

    Returns 0 for a > mu(0) and 1 for a < mu(1); in between the root of
    mu(x) = a is bracketed by bisection down to ``tol``.
    """
    a = float(a)
    top = float(mu(0.0))
    bot = float(mu(1.0))
    if a > top:
        return 0.0
    if a < bot:
        return 1.0
    if a == top:
        return 0.0
    if a == bot:
        return 1.0
    lo, hi = 0.0, 1.0
    # invariant: mu(lo) > a > mu(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mu(mid) >= a:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
