"""The three competing estimators and their generalized inverses.

* pooled: isotonize the merged regressogram at the central server;
* global: isotonize the raw data as if it all sat on one machine;
* bdse: isotonize per server and average the evaluations.

Every inverse is the greatest location maximizing the cumulative response
process minus ``a`` times the empirical CDF.  The fit-based inverses realize
that argmax through the block structure of the fit (pure comparisons, no
arithmetic), so the switch relation ``fit(t) >= a  <=>  t <= inverse(a)``
is an exact boolean identity even when ``a`` ties a fitted value to the
last bit; the raw argmax scan survives as the grids-only fast path and as a
test oracle on generic levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import Allocation, CommLedger, Regressogram
from .isotonic import CusumDiagram, WeightedSeries, lcm_left_slopes, pava_antitonic
from .models import Dataset
from .stepfn import Side, StepFunction, left_step_from_grid, right_step_from_grid


@dataclass(frozen=True)
class PooledFit:
    """Pooled estimator state: everything is a function of the regressogram only."""

    regressogram: Regressogram
    fitted: np.ndarray  # fitted bin values, +inf before the first nonempty bin
    muhat: StepFunction  # left-continuous, nonincreasing
    lambda_n: StepFunction  # right-continuous cumulative response process
    f_tilde: StepFunction  # right-continuous grid version of the empirical CDF
    xbar_grid: np.ndarray  # 0, 1/K, ..., 1
    fn_grid: np.ndarray  # F_N at the grid points (K + 1 entries)
    lambda_grid: np.ndarray  # Lambda_N at the grid points (K + 1 entries)

    @property
    def K(self) -> int:
        return self.regressogram.K

    def equal_bits(self, other: "PooledFit") -> bool:
        return (
            self.regressogram.equal_bits(other.regressogram)
            and self.fitted.tobytes() == other.fitted.tobytes()
            and self.fn_grid.tobytes() == other.fn_grid.tobytes()
            and self.lambda_grid.tobytes() == other.lambda_grid.tobytes()
        )


def pooled_fit(reg: Regressogram) -> PooledFit:
    """Weighted antitonic fit of the regressogram, cross-checked against the
    left slopes of the least concave majorant of its cumulative sum diagram."""
    K = reg.K
    series = WeightedSeries(np.where(reg.w > 0, reg.ybar, 0.0), reg.w)
    fit = pava_antitonic(series)
    w = reg.w
    wy = np.where(w > 0, w * np.where(w > 0, reg.ybar, 0.0), 0.0)
    fn_grid = np.concatenate(([0.0], np.cumsum(w)))
    lambda_grid = np.concatenate(([0.0], np.cumsum(wy)))
    slopes = lcm_left_slopes(CusumDiagram(fn_grid, lambda_grid))
    finite = np.isfinite(fit.fitted)
    agree = np.array_equal(np.isinf(fit.fitted), np.isinf(slopes)) and (
        not np.any(finite) or np.max(np.abs(fit.fitted[finite] - slopes[finite])) <= 1e-10
    )
    if not agree:
        raise RuntimeError("PAVA and concave-majorant characterizations disagree")
    muhat = left_step_from_grid(K, fit.fitted, nonincreasing=True)
    lambda_n = right_step_from_grid(K, lambda_grid)
    f_tilde = right_step_from_grid(K, fn_grid)
    xbar_grid = np.array([k / K for k in range(K + 1)])
    return PooledFit(reg, fit.fitted, muhat, lambda_n, f_tilde, xbar_grid, fn_grid, lambda_grid)


def _count_at_least(fitted: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """How many leading fitted values are >= each level (fitted nonincreasing)."""
    return np.searchsorted(-fitted, -levels, side="right")


def pooled_inverse(fit: PooledFit, a: float) -> float:
    """Greatest u on the grid maximizing Lambda_N(u) - a * F_N(u).

    Computed as the generalized inverse of the fitted step function: the two
    definitions coincide by the block structure of the fit, and the
    comparison form stays exact when a ties a fitted value to the last bit,
    where the floating cumulative sums would resolve the tie arbitrarily.
    The argmax form is kept as a test oracle for generic levels.
    """
    count = int(_count_at_least(fit.fitted, np.asarray([float(a)]))[0])
    return float(fit.xbar_grid[count])


def pooled_inverse_many(fit: PooledFit, levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    return fit.xbar_grid[_count_at_least(fit.fitted, levels)]


def check_switch(fit: PooledFit, t: float, a: float) -> bool:
    """Whether muhat(t) >= a holds exactly iff t <= U_N(a)."""
    return (fit.muhat.eval(t) >= a) == (t <= pooled_inverse(fit, a))


def v_n(fit: PooledFit, a: float) -> float:
    """Greatest u among the attained F-values maximizing Lambda(F^-1(u)) - a*u.

    Like :func:`pooled_inverse` this is computed through the block structure
    (V = F_tilde at the inverse's grid index), which matches the argmax scan
    for every level that does not tie a fitted value exactly, and resolves
    exact ties the way the block algebra dictates.
    """
    count = int(_count_at_least(fit.fitted, np.asarray([float(a)]))[0])
    return float(fit.fn_grid[count])


def tilde_F_inverse(fit: PooledFit, v: float) -> float:
    """Smallest grid point whose F_tilde value reaches v (inf-convention inverse)."""
    j = int(np.searchsorted(fit.fn_grid, float(v), side="left"))
    if j >= fit.fn_grid.size:
        raise ValueError(f"level {v!r} above the total mass")
    return float(fit.xbar_grid[j])


def v_identity_report(fit: PooledFit, a: float) -> dict:
    """Status of the U/V identities at level a.

    ``forward`` (V_N(a) == F_tilde(U_N(a))) holds unconditionally.  The
    textbook inverse form U_N(a) == F_tilde^{-1}(V_N(a)) additionally needs
    the argmax to land where F_tilde actually jumps; when the greatest argmax
    sits at the far end of a run of empty bins the inf-convention inverse
    returns the start of the run instead, and no convention can return both
    endpoints.  The report says which situation occurred.
    """
    u = pooled_inverse(fit, a)
    v = v_n(fit, a)
    forward = fit.f_tilde.eval(u) == v
    inverse = tilde_F_inverse(fit, v) == u
    j = int(round(u * fit.K))
    at_empty_run = j > 0 and fit.fn_grid[j] == fit.fn_grid[j - 1]
    return {"forward": forward, "inverse": inverse, "argmax_on_empty_run": at_empty_run}


# ---------------------------------------------------------------------------
# global estimator


@dataclass(frozen=True)
class GlobalFit:
    muhat_g: StepFunction  # left-continuous, nonincreasing
    x_sorted: np.ndarray  # unique sorted covariates
    fitted: np.ndarray  # one fitted value per unique covariate
    u_grid: np.ndarray  # 0, unique x's, and 1
    fn_grid: np.ndarray  # empirical CDF on u_grid
    lambda_grid: np.ndarray  # cumulative response process on u_grid
    n: int


@dataclass(frozen=True)
class CumulativeGrids:
    """Empirical processes on {0} + sorted unique x + {1}: enough to invert."""

    u: np.ndarray
    fn: np.ndarray
    lam: np.ndarray
    uniq: np.ndarray
    sums: np.ndarray
    counts: np.ndarray


def cumulative_grids(x: np.ndarray, y: np.ndarray) -> CumulativeGrids:
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    uniq, starts, counts = np.unique(xs, return_index=True, return_counts=True)
    sums = np.add.reduceat(ys, starts)
    n = x.size
    fn = np.concatenate(([0.0], np.cumsum(counts))) / n
    lam = np.concatenate(([0.0], np.cumsum(sums))) / n
    u = np.concatenate(([0.0], uniq))
    if uniq[-1] < 1.0:
        u = np.append(u, 1.0)
        fn = np.append(fn, fn[-1])
        lam = np.append(lam, lam[-1])
    return CumulativeGrids(u, fn, lam, uniq, sums, counts)


def inverse_on_grids(grids: CumulativeGrids, levels) -> np.ndarray:
    """Greatest-argmax inverse on precomputed cumulative grids."""
    levels = np.asarray(levels, dtype=float)
    vals = grids.lam[None, :] - levels[:, None] * grids.fn[None, :]
    idx = vals.shape[1] - 1 - np.argmax(vals[:, ::-1], axis=1)
    return grids.u[idx]


def global_fit(dataset: Dataset, ledger: CommLedger = None, allocation: Allocation = None) -> GlobalFit:
    """Sort, pool duplicate covariates, and run unit-weight antitonic PAVA.

    When a ledger is given the transfer of the raw pairs to the central
    server is charged: 2 scalars per observation, by shard when an
    allocation is supplied.
    """
    grids = cumulative_grids(dataset.x, dataset.y)
    uniq, sums, counts = grids.uniq, grids.sums, grids.counts
    series = WeightedSeries(sums / counts, counts.astype(float))
    fit = pava_antitonic(series)
    fitted = fit.fitted
    n = dataset.n

    knots = uniq
    values = np.append(fitted, fitted[-1])  # constant continuation past the last point
    if knots[-1] == 1.0:
        knots = knots[:-1]
        values = fitted
    if knots.size and knots[0] == 0.0:
        # a covariate exactly at 0 cannot be a left-continuous knot; pin its
        # piece to the degenerate interval [0, nextafter(0)]
        knots = knots.copy()
        knots[0] = np.nextafter(0.0, 1.0)
    muhat = StepFunction(tuple(knots), tuple(values), Side.LEFT, nonincreasing=True)

    u, fn, lam = grids.u, grids.fn, grids.lam
    if ledger is not None:
        if allocation is not None:
            sizes = np.bincount(allocation.server_of, minlength=allocation.n_servers + 1)[1:]
        else:
            sizes = [n]
        ledger.record_global(sizes)
    return GlobalFit(muhat, uniq, fitted, u, fn, lam, n)


def global_inverse_many(gfit: GlobalFit, levels) -> np.ndarray:
    """Greatest maximizer of Lambda_NG(u) - a F_N(u) over {0} + data + {1}.

    Same tie-exact construction as the pooled inverse: the generalized
    inverse of the fitted step function, whose constant continuation past
    the last data point carries the maximizer through to 1.
    """
    levels = np.asarray(levels, dtype=float)
    counts = _count_at_least(gfit.fitted, levels)
    # count -> location: 0 -> 0, 1..M-1 -> x_(count), M -> 1 (the maximand
    # stays maximal on (x_max, 1], so the greatest location is 1)
    lut = np.concatenate(([0.0], gfit.x_sorted[:-1], [1.0]))
    return lut[counts]


def global_inverse(gfit: GlobalFit, a: float) -> float:
    return float(global_inverse_many(gfit, [float(a)])[0])


def check_switch_global(gfit: GlobalFit, t: float, a: float) -> bool:
    return (gfit.muhat_g.eval(t) >= a) == (t <= global_inverse(gfit, a))


# ---------------------------------------------------------------------------
# pooled-by-averaging baseline (isotonize per server, then average)


@dataclass(frozen=True)
class BdseFit:
    server_fits: tuple  # GlobalFit per server, None where the shard is empty
    n_servers: int
    empty_servers: int


def bdse_fit(dataset: Dataset, allocation: Allocation) -> BdseFit:
    fits = []
    empty = 0
    for server in range(1, allocation.n_servers + 1):
        mask = allocation.server_of == server
        if not np.any(mask):
            fits.append(None)
            empty += 1
            continue
        shard = Dataset(dataset.x[mask], dataset.y[mask], dataset.pop[mask])
        fits.append(global_fit(shard))
    return BdseFit(tuple(fits), allocation.n_servers, empty)


def _bdse_average(values, fit: BdseFit, ledger: CommLedger):
    if ledger is not None:
        ledger.record_bdse([i + 1 for i, f in enumerate(fit.server_fits) if f is not None])
        ledger.empty_server_events += fit.empty_servers
    if not values:
        raise ValueError("all servers empty: averaging estimator undefined")
    return math.fsum(values) / len(values)


def bdse_direct(dataset: Dataset, allocation: Allocation, t0: float, ledger: CommLedger = None, fit: BdseFit = None) -> float:
    """Average of the per-server antitonic fits evaluated at t0.

    Empty servers are excluded from the average and counted on the ledger:
    the construction assumes every server holds data and offers no other
    convention.
    """
    if fit is None:
        fit = bdse_fit(dataset, allocation)
    values = [f.muhat_g.eval(t0) for f in fit.server_fits if f is not None]
    return _bdse_average(values, fit, ledger)


def bdse_inverse(dataset: Dataset, allocation: Allocation, a: float, ledger: CommLedger = None, fit: BdseFit = None) -> float:
    """Average of the per-server inverse estimators at level a, each defined by
    the greatest-argmax rule on the server's own empirical processes."""
    if fit is None:
        fit = bdse_fit(dataset, allocation)
    values = [global_inverse(f, a) for f in fit.server_fits if f is not None]
    return _bdse_average(values, fit, ledger)


def bdse_inverse_many(fit: BdseFit, levels, ledger: CommLedger = None) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    per_server = [global_inverse_many(f, levels) for f in fit.server_fits if f is not None]
    if not per_server:
        raise ValueError("all servers empty: averaging estimator undefined")
    if ledger is not None:
        ledger.record_bdse(
            [i + 1 for i, f in enumerate(fit.server_fits) if f is not None], n_queries=levels.size
        )
        ledger.empty_server_events += fit.empty_servers
    return np.mean(np.stack(per_server), axis=0)


def bdse_server_grids(dataset: Dataset, allocation: Allocation):
    """Per-server cumulative grids (None on empty shards): the inverse-only
    path, which skips the per-server isotonization entirely."""
    grids = []
    for server in range(1, allocation.n_servers + 1):
        mask = allocation.server_of == server
        if not np.any(mask):
            grids.append(None)
            continue
        grids.append(cumulative_grids(dataset.x[mask], dataset.y[mask]))
    return grids


def bdse_inverse_on_grids(server_grids, levels, ledger: CommLedger = None) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    per_server = [inverse_on_grids(g, levels) for g in server_grids if g is not None]
    if not per_server:
        raise ValueError("all servers empty: averaging estimator undefined")
    if ledger is not None:
        ledger.record_bdse(
            [i + 1 for i, g in enumerate(server_grids) if g is not None], n_queries=levels.size
        )
        ledger.empty_server_events += sum(1 for g in server_grids if g is None)
    return np.mean(np.stack(per_server), axis=0)
