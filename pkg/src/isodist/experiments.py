"""Monte Carlo harness: scaled-risk sweeps, limit-distribution checks, the
superefficiency sweep for the averaging baseline, and tail diagnostics.

Every replication derives its streams from (base seed, cell index,
replication index), so reruns reproduce each number bit for bit and the
worker pool size never changes a result: results are stored per replication
index and reduced in index order.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .chernoff import (
    ChernoffConfig,
    limit_scale_direct,
    limit_scale_inverse,
    sample_chernoff,
    two_sample_ks,
)
from .cluster import AllocPolicy, CommLedger, allocate, regressogram_from_data
from .estimators import (
    bdse_direct,
    bdse_fit,
    bdse_inverse_on_grids,
    bdse_server_grids,
    global_fit,
    global_inverse_many,
    pooled_fit,
    pooled_inverse_many,
)
from .models import (
    LinearMu,
    ModelSpec,
    PerturbedMu,
    generate_dataset,
    growing_mixture_model,
)
from .stepfn import extend_g

ESTIMATORS = ("pooled", "global", "bdse")


def bins_rule(N: int, rule="n13logn") -> int:
    """Default bin count: ceil(N^(1/3) log N), safely above the N^(1/3) rate."""
    if isinstance(rule, int):
        return rule
    if rule == "n13logn":
        return int(math.ceil(N ** (1.0 / 3.0) * math.log(N)))
    raise ValueError(f"unknown bin rule {rule!r}")


def default_levels(model: ModelSpec, count: int = 41, trim: float = 0.05) -> np.ndarray:
    """Levels spanning the range of mu, trimmed away from the boundary regimes."""
    top = float(model.mu(0.0))
    bot = float(model.mu(1.0))
    span = top - bot
    return np.linspace(bot + trim * span, top - trim * span, count)


@dataclass(frozen=True)
class ExperimentConfig:
    model: Optional[ModelSpec] = None
    family: Optional[dict] = None  # e.g. {"name": "growing_mixture", "sigma": 0.3}
    estimators: tuple = ESTIMATORS
    n_values: tuple = (1000,)
    k_rule: object = "n13logn"
    servers: int = 8
    alloc: AllocPolicy = AllocPolicy.CONTIGUOUS
    t_points: tuple = ()
    a_levels: tuple = ()
    reps: int = 200
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if (self.model is None) == (self.family is None):
            raise ValueError("exactly one of model / family must be given")
        if self.reps < 1:
            raise ValueError("need at least one replication")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "t_points", tuple(float(t) for t in self.t_points))
        object.__setattr__(self, "a_levels", tuple(float(a) for a in self.a_levels))
        object.__setattr__(self, "alloc", AllocPolicy(self.alloc))

    def resolve_model(self, N: int) -> ModelSpec:
        if self.model is not None:
            return self.model
        name = self.family.get("name")
        if name == "growing_mixture":
            return growing_mixture_model(N, sigma=self.family.get("sigma", 0.3))
        raise ValueError(f"unknown model family {name!r}")

    def to_doc(self) -> dict:
        doc = {
            "family": self.family,
            "estimators": list(self.estimators),
            "n_values": list(self.n_values),
            "k_rule": self.k_rule,
            "servers": self.servers,
            "alloc": self.alloc.value,
            "t_points": list(self.t_points),
            "a_levels": list(self.a_levels),
            "reps": self.reps,
            "seed": self.seed,
        }
        if self.model is not None:
            doc["model"] = self.model.to_dict()
        return doc


def _rep_estimates(cfg: ExperimentConfig, n_idx: int, rep: int):
    """One replication: every estimator consumes the identical dataset and
    allocation.  Returns ({(estimator, kind, target_index): estimate},
    ledger, {estimator: error_repr})."""
    N = cfg.n_values[n_idx]
    model = cfg.resolve_model(N)
    K = bins_rule(N, cfg.k_rule)
    data = generate_dataset(
        model, N, np.random.SeedSequence(entropy=cfg.seed, spawn_key=(n_idx, rep, 0))
    )
    alloc = allocate(
        N,
        cfg.servers,
        cfg.alloc,
        seed=np.random.SeedSequence(entropy=cfg.seed, spawn_key=(n_idx, rep, 1)),
        pops=data.pop,
    )
    t_points = np.asarray(cfg.t_points, dtype=float)
    a_levels = np.asarray(cfg.a_levels, dtype=float)
    ledger = CommLedger()
    estimates = {}
    failures = {}
    for est in cfg.estimators:
        try:
            direct = inv = None
            if est == "pooled":
                reg = regressogram_from_data(data, alloc, K, ledger)
                fit = pooled_fit(reg)
                if t_points.size:
                    direct = np.array([fit.muhat.eval(t) for t in t_points])
                if a_levels.size:
                    inv = pooled_inverse_many(fit, a_levels)
            elif est == "global":
                gfit = global_fit(data, ledger, alloc)
                if t_points.size:
                    direct = np.array([gfit.muhat_g.eval(t) for t in t_points])
                if a_levels.size:
                    inv = global_inverse_many(gfit, a_levels)
            else:
                if t_points.size:
                    bfit = bdse_fit(data, alloc)
                    direct = np.array(
                        [bdse_direct(data, alloc, t, ledger=ledger, fit=bfit) for t in t_points]
                    )
                if a_levels.size:
                    grids = bdse_server_grids(data, alloc)
                    inv = bdse_inverse_on_grids(grids, a_levels, ledger)
        except Exception as exc:  # noqa: BLE001 - estimator failures are recorded, not fatal
            failures[est] = repr(exc)
            continue
        if direct is not None:
            for i in range(t_points.size):
                estimates[(est, "direct", i)] = float(direct[i])
        if inv is not None:
            for i in range(a_levels.size):
                estimates[(est, "inverse", i)] = float(inv[i])
    return estimates, ledger, failures


def _rep_worker(args):
    cfg, n_idx, rep = args
    return _rep_estimates(cfg, n_idx, rep)


def _run_reps(cfg: ExperimentConfig, n_idx: int):
    jobs = [(cfg, n_idx, rep) for rep in range(cfg.reps)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_rep_worker, jobs, chunksize=max(1, cfg.reps // (4 * cfg.jobs))))
    return [_rep_worker(j) for j in jobs]


@dataclass(frozen=True)
class RiskRow:
    estimator: str
    N: int
    servers: int
    K: int
    kind: str  # "direct" or "inverse"
    target: float
    mse: float
    scaled: float  # N^(2/3) * mse
    se_scaled: float
    reps_used: int
    failures: int


@dataclass
class RiskReport:
    rows: list
    ledger: CommLedger
    config: dict

    def row(self, estimator: str, N: int, kind: str, target: float) -> RiskRow:
        for r in self.rows:
            if (r.estimator, r.N, r.kind, r.target) == (estimator, N, kind, target):
                return r
        raise KeyError((estimator, N, kind, target))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("estimator,N,m,K,target,value,se\n")
            for r in self.rows:
                fh.write(
                    "%s,%d,%d,%d,%s@%.17g,%.17g,%.17g\n"
                    % (r.estimator, r.N, r.servers, r.K, r.kind, r.target, r.scaled, r.se_scaled)
                )

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "ledger": self.ledger.to_json_dict(),
            "rows": [vars(r).copy() for r in self.rows],
        }


def _absorb_ledger(total: CommLedger, one: CommLedger):
    for phase, count in one.scalars_moved.items():
        total.scalars_moved[phase] += count
    total.empty_server_events += one.empty_server_events


def mc_risk(cfg: ExperimentConfig) -> RiskReport:
    """Monte Carlo risk of the configured estimators at each N and target."""
    rows = []
    total_ledger = CommLedger()
    for n_idx, N in enumerate(cfg.n_values):
        K = bins_rule(N, cfg.k_rule)
        model = cfg.resolve_model(N)
        t_points = np.asarray(cfg.t_points, dtype=float)
        a_levels = np.asarray(cfg.a_levels, dtype=float)
        truths = {
            "direct": np.asarray(model.mu(t_points), dtype=float) if t_points.size else t_points,
            "inverse": np.array([extend_g(model.mu, a) for a in a_levels]),
        }
        targets = {"direct": t_points, "inverse": a_levels}
        per_key = {}
        fail_count = {}
        for estimates, ledger, failures in _run_reps(cfg, n_idx):
            _absorb_ledger(total_ledger, ledger)
            for est in failures:
                fail_count[est] = fail_count.get(est, 0) + 1
            for (est, kind, i), value in estimates.items():
                per_key.setdefault((est, kind, i), []).append((value - truths[kind][i]) ** 2)
        scale = N ** (2.0 / 3.0)
        for (est, kind, i), errs in sorted(per_key.items()):
            errs = np.asarray(errs)
            mse = float(np.mean(errs))
            se = float(np.std(errs, ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else math.nan
            rows.append(
                RiskRow(
                    est,
                    N,
                    cfg.servers,
                    K,
                    kind,
                    float(targets[kind][i]),
                    mse,
                    scale * mse,
                    scale * se,
                    int(errs.size),
                    fail_count.get(est, 0),
                )
            )
    return RiskReport(rows, total_ledger, cfg.to_doc())


# ---------------------------------------------------------------------------
# limit-distribution check


@dataclass(frozen=True)
class LimitLawResult:
    kind: str
    estimator: str
    N: int
    ks: float
    scale: float
    samples: np.ndarray


def limit_law_check(
    cfg: ExperimentConfig,
    t: float = None,
    a: float = None,
    estimator: str = "pooled",
    reference: np.ndarray = None,
    chernoff_cfg: ChernoffConfig = None,
):
    """Two-sample KS distance between standardized estimator samples and the
    Brownian-argmax reference law.

    Direct samples are N^(1/3) (muhat(t) - mu(t)) divided by the direct
    limit scale; inverse samples use U_N(a) - g(a) and the inverse scale.
    Returns one :class:`LimitLawResult` per requested kind.
    """
    if t is None and a is None:
        raise ValueError("need a point t, a level a, or both")
    N = cfg.n_values[0]
    model = cfg.resolve_model(N)
    if reference is None:
        if chernoff_cfg is None:
            chernoff_cfg = ChernoffConfig(count=100_000, seed=cfg.seed + 90_001)
        reference = sample_chernoff(chernoff_cfg)
    run = replace(
        cfg,
        estimators=(estimator,),
        t_points=(t,) if t is not None else (),
        a_levels=(a,) if a is not None else (),
        n_values=(N,),
    )
    results = _run_reps(run, 0)
    rate = N ** (1.0 / 3.0)
    out = []
    if t is not None:
        truth = float(model.mu(t))
        vals = np.array([est[(estimator, "direct", 0)] for est, _, f in results if not f])
        scale = limit_scale_direct(model, t)
        std = rate * (vals - truth) / scale
        out.append(LimitLawResult("direct", estimator, N, two_sample_ks(std, reference), scale, std))
    if a is not None:
        g = float(extend_g(model.mu, a))
        vals = np.array([est[(estimator, "inverse", 0)] for est, _, f in results if not f])
        scale = limit_scale_inverse(model, g)
        std = rate * (vals - g) / scale
        out.append(LimitLawResult("inverse", estimator, N, two_sample_ks(std, reference), scale, std))
    return out


# ---------------------------------------------------------------------------
# superefficiency sweep


@dataclass(frozen=True)
class SweepRow:
    estimator: str
    m: int  # shard count; 0 for the shard-free pooled/global runs
    inner_slope: float
    offset_frac: float
    scaled: float
    se_scaled: float


@dataclass
class SweepReport:
    rows: list
    pruned: list  # (inner_slope, offset_frac, reason)
    summary: dict
    config: dict

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("estimator,m,inner_slope,offset_frac,scaled_mse,se\n")
            for r in self.rows:
                fh.write(
                    "%s,%d,%.17g,%.17g,%.17g,%.17g\n"
                    % (r.estimator, r.m, r.inner_slope, r.offset_frac, r.scaled, r.se_scaled)
                )


def _variant_models(base: ModelSpec, x0, eps0, c_grid, offsets, flat_frac):
    """Perturbed-model grid around the base; infeasible corners are pruned.

    Feasibility means the perturbed function exists and all its difference
    quotients stay inside the model's (C3, C4) band.
    """
    variants = []
    pruned = []
    w = flat_frac * eps0
    for c in c_grid:
        for frac in offsets:
            delta = frac * (eps0 - w)
            try:
                mu = PerturbedMu(base.mu, x0, eps0, c, flat_halfwidth=w, crossing_offset=delta)
                slopes = [abs(s) for s in mu.segment_slopes]
                if min(slopes) <= base.constants.c3 or max(slopes) >= base.constants.c4:
                    raise ValueError(
                        f"segment slopes {slopes} leave ({base.constants.c3}, {base.constants.c4})"
                    )
            except ValueError as exc:
                pruned.append((float(c), float(frac), str(exc)))
                continue
            variants.append((float(c), float(frac), replace(base, mu=mu)))
    return variants, pruned


def _scaled_inverse_risk(model, N, K, L, a0, reps, seed, estimator):
    """N^(2/3) MSE of one inverse estimator at level a0 under the given model."""
    cfg = ExperimentConfig(
        model=model,
        estimators=(estimator,),
        n_values=(N,),
        k_rule=K,
        servers=L,
        alloc=AllocPolicy.CONTIGUOUS,
        a_levels=(a0,),
        reps=reps,
        seed=seed,
    )
    report = mc_risk(cfg)
    row = report.rows[0]
    return row.scaled, row.se_scaled


def superefficiency_sweep(
    base: ModelSpec,
    x0: float,
    eps0: float,
    c_grid,
    m_grid,
    N: int,
    reps: int,
    seed: int = 0,
    offsets=(-0.7, 0.0, 0.7),
    flat_frac: float = 0.15,
    k_rule="n13logn",
) -> SweepReport:
    """Worst-case scaled risk over a grid of local perturbations of the base.

    For each shard count m the averaging estimator is fit on m equal shards
    of homogeneous data; the pooled and global estimators see the same models
    but are shard-free, so their risks are computed once.  The grid pairs an
    inner-slope axis with a crossing-offset axis: the offset displaces the
    crossing inside the perturbation window, which makes the window walls
    unequally steep around the estimand.  That is the axis along which
    averaging accumulates bias that no amount of per-server data hides,
    while the flatness axis alone produces symmetric errors that averaging
    happily removes.
    """
    if not isinstance(base.mu, LinearMu):
        raise ValueError("sweep expects a linear base regression function")
    a0 = float(base.mu(x0))
    K = bins_rule(N, k_rule)
    variants, pruned = _variant_models(base, x0, eps0, c_grid, offsets, flat_frac)
    if not variants:
        raise ValueError("every grid point was pruned as infeasible")
    rows = []
    base_slope = abs(base.mu.slope)
    for vi, (c, frac, model) in enumerate(variants):
        for est in ("pooled", "global"):
            scaled, se = _scaled_inverse_risk(model, N, K, 1, a0, reps, seed + 7919 * vi, est)
            rows.append(SweepRow(est, 0, c, frac, scaled, se))
        for m in m_grid:
            scaled, se = _scaled_inverse_risk(model, N, K, int(m), a0, reps, seed + 7919 * vi, "bdse")
            rows.append(SweepRow("bdse", int(m), c, frac, scaled, se))

    def worst(est, m=None):
        vals = [r for r in rows if r.estimator == est and (m is None or r.m == m)]
        top = max(vals, key=lambda r: r.scaled)
        return {"scaled": top.scaled, "inner_slope": top.inner_slope, "offset_frac": top.offset_frac}

    def fixed(est, m=None):
        for r in rows:
            if r.estimator == est and (m is None or r.m == m):
                if r.inner_slope == base_slope and r.offset_frac == 0.0:
                    return r.scaled
        return math.nan

    summary = {
        "bdse_worst": {int(m): worst("bdse", int(m)) for m in m_grid},
        "pooled_worst": worst("pooled"),
        "global_worst": worst("global"),
        "pooled_fixed": fixed("pooled"),
        "global_fixed": fixed("global"),
        "bdse_fixed": {int(m): fixed("bdse", int(m)) for m in m_grid},
    }
    gf = summary["global_fixed"]
    summary["bdse_over_global_fixed"] = {
        m: (v / gf if gf == gf and gf > 0 else math.nan) for m, v in summary["bdse_fixed"].items()
    }
    config = {
        "x0": x0,
        "eps0": eps0,
        "c_grid": [float(c) for c in c_grid],
        "offsets": [float(o) for o in offsets],
        "flat_frac": flat_frac,
        "m_grid": [int(m) for m in m_grid],
        "N": N,
        "K": K,
        "reps": reps,
        "seed": seed,
        "model": base.to_dict(),
    }
    return SweepReport(rows, pruned, summary, config)


def homogeneous_base(sigma: float = 0.3, constants=None) -> ModelSpec:
    """Single uniform population with a linear mu: the sweep's base model.

    The slope band is wide on purpose: the perturbation grid needs room for
    one steep window wall, which is what starves the averaging estimator.
    """
    from .models import Constants, uniform_model

    if constants is None:
        constants = Constants(c1=0.5, c2=2.0, c3=0.5, c4=4.0, c5=2.0)
    return uniform_model(sigma, constants=constants)


# ---------------------------------------------------------------------------
# tail diagnostic


@dataclass
class TailReport:
    a: float
    N: int
    x_grid: np.ndarray
    frequencies: np.ndarray
    reference: np.ndarray  # const / (N x^3), const fit at the smallest populated x
    slope: float  # log-log OLS slope over the mid range
    mid_range: tuple
    monotone: bool
    config: dict

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,exceedance,reference\n")
            for x, f, r in zip(self.x_grid, self.frequencies, self.reference):
                fh.write("%.17g,%.17g,%.17g\n" % (x, f, r))


def tail_diagnostic(
    cfg: ExperimentConfig,
    a: float,
    x_grid,
    mid_band=(0.08, 0.4),
) -> TailReport:
    """Empirical exceedance of |U_N(a) - g(a)| against the polynomial envelope.

    The constant of the reference curve const/(N x^3) is fit at the smallest
    grid point with a positive frequency; the log-log slope is an OLS fit
    over the grid points whose frequency falls inside ``mid_band``.  This is
    a diagnostic: the envelope is an upper bound with an unknown constant,
    not a law.
    """
    x_grid = np.asarray(sorted(float(x) for x in x_grid))
    N = cfg.n_values[0]
    model = cfg.resolve_model(N)
    g = float(extend_g(model.mu, a))
    run = replace(cfg, estimators=("pooled",), t_points=(), a_levels=(a,), n_values=(N,))
    results = _run_reps(run, 0)
    errors = np.abs(np.array([est[("pooled", "inverse", 0)] for est, _, f in results if not f]) - g)
    freq = np.array([float(np.mean(errors >= x)) for x in x_grid])
    populated = np.flatnonzero(freq > 0)
    if populated.size:
        x0 = x_grid[populated[0]]
        const = freq[populated[0]] * N * x0**3
    else:
        const = math.nan
    reference = const / (N * x_grid**3)
    in_band = (freq >= mid_band[0]) & (freq <= mid_band[1])
    if int(np.sum(in_band)) >= 2:
        lx = np.log(x_grid[in_band])
        lf = np.log(freq[in_band])
        slope = float(np.polyfit(lx, lf, 1)[0])
    else:
        slope = math.nan
    monotone = bool(np.all(np.diff(freq) <= 0))
    return TailReport(
        float(a),
        N,
        x_grid,
        freq,
        reference,
        slope,
        tuple(mid_band),
        monotone,
        {**run.to_doc(), "x_grid": [float(x) for x in x_grid]},
    )
