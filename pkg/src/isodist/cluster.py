"""Simulated distributed storage: allocation, per-server bin summaries, merging.

The merged regressogram must not depend on how observations were spread
across servers.  Plain float accumulation cannot deliver that bit-for-bit
(grouping changes rounding), so each per-server cell keeps its sum as a short
error-free expansion: the leading component is the correctly rounded cell sum
(the number that goes on the wire), and the residual components let the
central server reconstruct the exact bin total before rounding once.  The
ledger counts the protocol-level 2*L*K scalars; residuals are bookkeeping for
float determinism, not part of the transfer accounting.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .models import Dataset, rng_from
from .stepfn import DomainError


class AllocPolicy(str, Enum):
    CONTIGUOUS = "contiguous"
    ROUND_ROBIN = "roundrobin"
    RANDOM_UNIFORM = "random"
    BY_POPULATION = "bypop"


@dataclass(frozen=True)
class Allocation:
    server_of: np.ndarray  # 1-based server index per observation
    n_servers: int
    policy: AllocPolicy

    def __post_init__(self):
        srv = np.asarray(self.server_of, dtype=np.int64)
        object.__setattr__(self, "server_of", srv)
        if self.n_servers < 1:
            raise ValueError("need at least one server")
        if srv.size and (srv.min() < 1 or srv.max() > self.n_servers):
            raise ValueError("server indices must lie in 1..L")


def allocate(N: int, L: int, policy: AllocPolicy, seed=None, pops=None) -> Allocation:
    """Assign N observations to L servers; deterministic given (policy, seed)."""
    if L < 1:
        raise ValueError("need at least one server")
    policy = AllocPolicy(policy)
    if policy is AllocPolicy.CONTIGUOUS:
        base = N // L
        srv = np.empty(N, dtype=np.int64)
        head = base * (L - 1)
        srv[:head] = np.repeat(np.arange(1, L, dtype=np.int64), base)
        srv[head:] = L
    elif policy is AllocPolicy.ROUND_ROBIN:
        srv = (np.arange(N, dtype=np.int64) % L) + 1
    elif policy is AllocPolicy.RANDOM_UNIFORM:
        if seed is None:
            raise ValueError("random allocation needs a seed")
        srv = rng_from(seed, 101).integers(1, L + 1, size=N, dtype=np.int64)
    elif policy is AllocPolicy.BY_POPULATION:
        if pops is None:
            raise ValueError("by-population allocation needs population labels")
        srv = ((np.asarray(pops, dtype=np.int64) - 1) % L) + 1
    else:  # pragma: no cover
        raise ValueError(f"unknown policy {policy!r}")
    return Allocation(srv, L, policy)


# ---------------------------------------------------------------------------
# binning


def bin_index(x: float, K: int) -> int:
    """Bin k with x in ((k-1)/K, k/K], decided in exact rational arithmetic.

    x == 0 goes to bin 1: a probability-zero event under a continuous design,
    but the function must be total.
    """
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"covariate {x!r} outside [0, 1]")
    if x == 0.0:
        return 1
    return math.ceil(Fraction(x) * K)


_SPLIT = 134217729.0  # 2**27 + 1, Veltkamp splitter


def bin_indices(x: np.ndarray, K: int) -> np.ndarray:
    """Vectorized :func:`bin_index` using an exact two-product for x*K."""
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0.0) | (xa > 1.0)):
        raise DomainError("covariates outside [0, 1]")
    if K > 1 << 26:
        return np.array([bin_index(v, K) for v in xa], dtype=np.int64)
    c = _SPLIT * xa
    hi = c - (c - xa)
    lo = xa - hi
    p = xa * K
    err = (hi * K - p) + lo * K  # x*K == p + err exactly
    kc = np.ceil(p)

    def le_int(target):
        d = p - target
        return (d < 0) | ((d == 0) & (err <= 0))

    k = np.where(le_int(kc - 1.0), kc - 1.0, np.where(le_int(kc), kc, kc + 1.0)).astype(np.int64)
    k[xa == 0.0] = 1
    tiny = (xa > 0.0) & (xa < 2.0**-1000)
    if np.any(tiny):  # Veltkamp split can round near the subnormal range
        for i in np.flatnonzero(tiny):
            k[i] = bin_index(float(xa[i]), K)
    if k.size and (k.min() < 1 or k.max() > K):  # pragma: no cover
        raise RuntimeError("bin index out of range")
    return k


# ---------------------------------------------------------------------------
# communication ledger


PHASES = ("summaries", "global_transfer", "bdse_transfer")


@dataclass
class CommLedger:
    """Scalars moved between servers per estimation strategy."""

    scalars_moved: dict = field(default_factory=lambda: {p: 0 for p in PHASES})
    per_server: dict = field(default_factory=lambda: {p: {} for p in PHASES})
    empty_server_events: int = 0

    def _add(self, phase: str, server: int, count: int):
        self.scalars_moved[phase] += count
        srv = self.per_server[phase]
        srv[server] = srv.get(server, 0) + count

    def record_summaries(self, L: int, K: int):
        for server in range(1, L + 1):
            self._add("summaries", server, 2 * K)

    def record_global(self, shard_sizes):
        for server, size in enumerate(shard_sizes, start=1):
            self._add("global_transfer", server, 2 * int(size))

    def record_bdse(self, servers, n_queries: int = 1):
        for server in servers:
            self._add("bdse_transfer", int(server), int(n_queries))

    def total(self) -> int:
        return sum(self.scalars_moved.values())

    def to_json_dict(self) -> dict:
        return {
            "scalars_moved": dict(self.scalars_moved),
            "per_server": {p: {str(k): v for k, v in d.items()} for p, d in self.per_server.items()},
            "empty_server_events": self.empty_server_events,
            "total": self.total(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# summaries and merging


def _exact_partials(vals) -> tuple:
    """Non-overlapping float components whose exact sum equals sum(vals).

    parts[0] is math.fsum(vals), i.e. the correctly rounded total; the loop
    peels off the exact residual until it vanishes (a sum of floats that
    rounds to zero is exactly zero, so termination is a proof, not a hope).
    """
    parts = [math.fsum(vals)]
    while True:
        residual = math.fsum(list(vals) + [-p for p in parts])
        if residual == 0.0:
            return tuple(parts)
        parts.append(residual)


@dataclass(frozen=True)
class BinSummaryMatrix:
    """Per-server bin response sums T and counts C, plus exact residues."""

    T: np.ndarray  # L x K, wire values (correctly rounded cell sums)
    C: np.ndarray  # L x K, int counts
    partials: dict  # (server, bin) -> exact expansion of the cell sum
    n_total: int

    @property
    def L(self) -> int:
        return self.T.shape[0]

    @property
    def K(self) -> int:
        return self.T.shape[1]

    def to_csv(self, path):
        """Wire format: one row per (server, bin) cell."""
        with open(path, "w") as fh:
            fh.write("server,bin,T,C\n")
            for l in range(1, self.L + 1):
                for k in range(1, self.K + 1):
                    fh.write("%d,%d,%.17g,%d\n" % (l, k, self.T[l - 1, k - 1], self.C[l - 1, k - 1]))


def local_summaries(dataset: Dataset, allocation: Allocation, K: int, ledger: CommLedger = None) -> BinSummaryMatrix:
    """Per-server (T, C): response sums and counts per bin.

    Cells are reduced in ascending (server, bin) order; every server's work
    touches only its own shard, so servers could run concurrently.
    """
    if allocation.server_of.size != dataset.n:
        raise ValueError("allocation does not cover the dataset")
    L = allocation.n_servers
    bins = bin_indices(dataset.x, K)
    srv = allocation.server_of
    order = np.lexsort((bins, srv))
    s_sorted = srv[order]
    b_sorted = bins[order]
    y_sorted = dataset.y[order]
    T = np.zeros((L, K), dtype=float)
    C = np.zeros((L, K), dtype=np.int64)
    partials = {}
    n = dataset.n
    starts = np.flatnonzero(np.concatenate(([True], (np.diff(s_sorted) != 0) | (np.diff(b_sorted) != 0))))
    bounds = np.append(starts, n)
    for i in range(starts.size):
        lo, hi = bounds[i], bounds[i + 1]
        l, k = int(s_sorted[lo]), int(b_sorted[lo])
        parts = _exact_partials(y_sorted[lo:hi].tolist())
        T[l - 1, k - 1] = parts[0]
        C[l - 1, k - 1] = hi - lo
        partials[(l, k)] = parts
    if ledger is not None:
        ledger.record_summaries(L, K)
    return BinSummaryMatrix(T, C, partials, n)


@dataclass(frozen=True)
class Regressogram:
    """Merged central summary: weights w_k and bin means ybar_k on the grid k/K."""

    K: int
    w: np.ndarray
    ybar: np.ndarray  # NaN on empty bins
    counts: np.ndarray
    xbar: np.ndarray  # grid points k/K, k = 1..K

    def equal_bits(self, other: "Regressogram") -> bool:
        return (
            self.K == other.K
            and self.w.tobytes() == other.w.tobytes()
            and self.ybar.tobytes() == other.ybar.tobytes()
            and self.counts.tobytes() == other.counts.tobytes()
        )

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("bin,xbar,w,ybar,count\n")
            for k in range(self.K):
                fh.write(
                    "%d,%.17g,%.17g,%.17g,%d\n"
                    % (k + 1, self.xbar[k], self.w[k], self.ybar[k], self.counts[k])
                )


def merge_summaries(bins: BinSummaryMatrix, N: int, ledger: CommLedger = None) -> Regressogram:
    """Central merge: ybar_k = sum_l T_lk / sum_l C_lk, w_k = sum_l C_lk / N.

    Per-bin numerators are rebuilt from the exact cell expansions in
    ascending server order and rounded once, so any two allocations of the
    same dataset merge to bit-identical regressograms.
    """
    if int(bins.C.sum()) != N:
        raise ValueError("counts do not sum to N")
    K = bins.K
    counts = bins.C.sum(axis=0)
    ybar = np.full(K, np.nan)
    for k in range(1, K + 1):
        chunks = []
        for l in range(1, bins.L + 1):
            parts = bins.partials.get((l, k))
            if parts:
                chunks.extend(parts)
        if chunks:
            ybar[k - 1] = math.fsum(chunks) / counts[k - 1]
    w = counts / N
    xbar = np.array([k / K for k in range(1, K + 1)])
    return Regressogram(K, w, ybar, counts, xbar)


def regressogram_from_data(dataset: Dataset, allocation: Allocation, K: int, ledger: CommLedger = None) -> Regressogram:
    return merge_summaries(local_summaries(dataset, allocation, K, ledger), dataset.n, ledger)
