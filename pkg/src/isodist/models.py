"""Data-generating models for monotone regression over heterogeneous sub-populations.

A model bundles a strictly decreasing regression function, a list of
sub-populations (covariate density, noise level, sample share), and the
constants that bound densities and slopes.  Densities shipped here all have
closed-form CDF and quantile so sampling is plain inverse-CDF transforms.
Generation is keyed by a counter-based RNG so that replication r of an
experiment draws the same stream regardless of execution order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np


def rng_from(seed, *path) -> np.random.Generator:
    """Philox generator keyed by (seed, *path); order-independent and splittable."""
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
        if path:
            ss = np.random.SeedSequence(entropy=ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(p) for p in path))
    else:
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# covariate densities


@dataclass(frozen=True)
class UniformDensity:
    def pdf(self, u):
        return np.ones_like(np.asarray(u, dtype=float))

    def cdf(self, u):
        return np.asarray(u, dtype=float)

    def quantile(self, p):
        return np.asarray(p, dtype=float)

    def to_dict(self):
        return {"family": "uniform"}


@dataclass(frozen=True)
class LinearDensity:
    """Density a + b*u on [0, 1]; requires a + b/2 == 1 and positivity."""

    a: float
    b: float

    def __post_init__(self):
        if abs(self.a + self.b / 2 - 1.0) > 1e-12:
            raise ValueError("linear density must integrate to one")
        if self.a <= 0 or self.a + self.b <= 0:
            raise ValueError("linear density must be positive on [0, 1]")

    def pdf(self, u):
        return self.a + self.b * np.asarray(u, dtype=float)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return self.a * u + 0.5 * self.b * u * u

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if self.b == 0.0:
            return p / self.a
        # stable root of a*x + b*x^2/2 = p
        return 2.0 * p / (self.a + np.sqrt(self.a * self.a + 2.0 * self.b * p))

    def to_dict(self):
        return {"family": "linear", "a": self.a, "b": self.b}


Density = Union[UniformDensity, LinearDensity]


def mix_linear(d0: Density, d1: Density, eps: float) -> LinearDensity:
    """(1-eps)*d0 + eps*d1 for uniform/linear components, closed under mixing."""

    def coef(d):
        if isinstance(d, UniformDensity):
            return 1.0, 0.0
        return d.a, d.b

    a0, b0 = coef(d0)
    a1, b1 = coef(d1)
    return LinearDensity((1 - eps) * a0 + eps * a1, (1 - eps) * b0 + eps * b1)


def density_from_dict(doc: dict) -> Density:
    fam = doc["family"]
    if fam == "uniform":
        return UniformDensity()
    if fam == "linear":
        return LinearDensity(doc["a"], doc["b"])
    raise ValueError(f"unknown density family {fam!r}")


# ---------------------------------------------------------------------------
# monotone regression functions


class CornerError(ValueError):
    """Derivative requested at a corner of a piecewise-linear function."""


@dataclass(frozen=True)
class LinearMu:
    intercept: float
    slope: float

    def __post_init__(self):
        if self.slope >= 0:
            raise ValueError("regression function must be strictly decreasing")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.intercept + self.slope * x
        return float(out) if out.ndim == 0 else out

    def derivative(self, t: float) -> float:
        return self.slope

    def inverse(self, a: float) -> float:
        return (a - self.intercept) / self.slope

    @property
    def is_c1(self) -> bool:
        return True

    def to_dict(self):
        return {"family": "linear", "intercept": self.intercept, "slope": self.slope}


def _piecewise_eval(x, xs, ys):
    x = np.asarray(x, dtype=float)
    out = np.interp(x, xs, ys)
    return float(out) if out.ndim == 0 else out


def _piecewise_derivative(t, xs, ys):
    t = float(t)
    if t in xs:
        i = xs.index(t)
        left = (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]) if i > 0 else None
        right = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) if i + 1 < len(xs) else None
        if left is not None and right is not None and left == right:
            return left
        if left is None:
            return right
        if right is None:
            return left
        raise CornerError(f"derivative undefined at corner t={t!r}")
    i = int(np.searchsorted(xs, t)) - 1
    return (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])


@dataclass(frozen=True)
class PerturbedMu:
    """A linear base reshaped inside (x0 - eps0, x0 + eps0) by three segments.

    The middle segment has slope ``-inner_slope`` and half-width
    ``flat_halfwidth`` around the point where the function crosses the level
    ``base(x0)``; ``crossing_offset`` moves that crossing off x0, which makes
    the two outer segments unequally steep.  Outside the window the function
    coincides with the base exactly (same code path).
    """

    base: LinearMu
    x0: float
    eps0: float
    inner_slope: float
    flat_halfwidth: float = None
    crossing_offset: float = 0.0

    def __post_init__(self):
        if self.flat_halfwidth is None:
            object.__setattr__(self, "flat_halfwidth", self.eps0 / 2.0)
        w, d, e = self.flat_halfwidth, self.crossing_offset, self.eps0
        if not (0 < w and w + abs(d) < e):
            raise ValueError("flat part plus offset must fit in the window")
        if not (0 < self.x0 - e and self.x0 + e < 1):
            raise ValueError("window must sit inside (0, 1)")
        if self.inner_slope <= 0:
            raise ValueError("inner slope magnitude must be positive")
        xs, ys = self._table()
        for (xa, ya), (xb, yb) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
            if (yb - ya) / (xb - xa) >= 0:
                raise ValueError("perturbed function is not strictly decreasing")

    def _table(self):
        s = -self.base.slope
        c = self.inner_slope
        a0 = self.base(self.x0)
        xi = self.x0 + self.crossing_offset
        w = self.flat_halfwidth
        lo = self.x0 - self.eps0
        hi = self.x0 + self.eps0
        xs = (lo, xi - w, xi + w, hi)
        ys = (a0 + s * self.eps0, a0 + c * w, a0 - c * w, a0 - s * self.eps0)
        return xs, ys

    def __call__(self, x):
        xs, ys = self._table()
        x_arr = np.asarray(x, dtype=float)
        inside = (x_arr > xs[0]) & (x_arr < xs[-1])
        out = np.where(inside, np.interp(x_arr, xs, ys), self.base(x_arr))
        return float(out) if out.ndim == 0 else out

    def derivative(self, t: float) -> float:
        xs, ys = self._table()
        t = float(t)
        if t < xs[0] or t > xs[-1]:
            return self.base.slope
        if self.is_c1:
            return self.base.slope
        full_x = list(xs)
        full_y = list(ys)
        return _piecewise_derivative(t, full_x, full_y) if xs[0] < t < xs[-1] else self._edge(t)

    def _edge(self, t):
        xs, ys = self._table()
        outer = (ys[1] - ys[0]) / (xs[1] - xs[0]) if t == xs[0] else (ys[3] - ys[2]) / (xs[3] - xs[2])
        if outer == self.base.slope:
            return outer
        raise CornerError(f"derivative undefined at corner t={t!r}")

    @property
    def segment_slopes(self):
        xs, ys = self._table()
        return tuple((yb - ya) / (xb - xa) for (xa, ya), (xb, yb) in zip(zip(xs, ys), zip(xs[1:], ys[1:])))

    @property
    def is_c1(self) -> bool:
        # degenerate construction: all segments carry the base slope and the
        # function is the base itself (up to interpolation round-off)
        return all(math.isclose(s, self.base.slope, rel_tol=1e-9) for s in self.segment_slopes)

    def inverse(self, a: float) -> float:
        xs, ys = self._table()
        if a >= ys[0]:
            return self.base.inverse(a)
        if a <= ys[-1]:
            return self.base.inverse(a)
        for (xa, ya), (xb, yb) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
            if yb <= a <= ya:
                return xa + (a - ya) * (xb - xa) / (yb - ya)
        raise RuntimeError("unreachable")

    def to_dict(self):
        return {
            "family": "perturbed",
            "base": self.base.to_dict(),
            "x0": self.x0,
            "eps0": self.eps0,
            "inner_slope": self.inner_slope,
            "flat_halfwidth": self.flat_halfwidth,
            "crossing_offset": self.crossing_offset,
        }


@dataclass(frozen=True)
class TabulatedMu:
    """Piecewise-linear strictly decreasing function through a table on [0, 1]."""

    x: tuple
    y: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        y = tuple(float(v) for v in self.y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if len(x) != len(y) or len(x) < 2 or x[0] != 0.0 or x[-1] != 1.0:
            raise ValueError("table must span [0, 1]")
        if any(b <= a for a, b in zip(x, x[1:])):
            raise ValueError("table abscissas must increase")
        if any(yb >= ya for ya, yb in zip(y, y[1:])):
            raise ValueError("table must be strictly decreasing")

    def __call__(self, t):
        return _piecewise_eval(t, self.x, self.y)

    def derivative(self, t: float) -> float:
        interior = list(self.x)
        return _piecewise_derivative(float(t), interior, list(self.y))

    @property
    def is_c1(self) -> bool:
        slopes = {(yb - ya) / (xb - xa) for (xa, ya), (xb, yb) in zip(zip(self.x, self.y), zip(self.x[1:], self.y[1:]))}
        return len(slopes) == 1

    def to_dict(self):
        return {"family": "tabulated", "x": list(self.x), "y": list(self.y)}


MonotoneFn = Union[LinearMu, PerturbedMu, TabulatedMu]


def mu_from_dict(doc: dict) -> MonotoneFn:
    fam = doc["family"]
    if fam == "linear":
        return LinearMu(doc["intercept"], doc["slope"])
    if fam == "perturbed":
        return PerturbedMu(
            mu_from_dict(doc["base"]),
            doc["x0"],
            doc["eps0"],
            doc["inner_slope"],
            doc.get("flat_halfwidth"),
            doc.get("crossing_offset", 0.0),
        )
    if fam == "tabulated":
        return TabulatedMu(tuple(doc["x"]), tuple(doc["y"]))
    raise ValueError(f"unknown regression family {fam!r}")


# ---------------------------------------------------------------------------
# model specification


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"  # +/- sd with equal probability: bounded, all moments finite


@dataclass(frozen=True)
class PopulationSpec:
    density: Density
    sd: float
    share: float

    def __post_init__(self):
        if self.sd < 0:
            raise ValueError("noise sd must be nonnegative")
        if not (0 < self.share <= 1):
            raise ValueError("share must lie in (0, 1]")


@dataclass(frozen=True)
class Constants:
    c1: float = 0.5
    c2: float = 2.0
    c3: float = 0.5
    c4: float = 2.0
    c5: float = 2.0


@dataclass(frozen=True)
class LimitSpec:
    """Declared limit of the mixture: f_inf is ``density``, and the limiting
    conditional second moment is ``noise_sd**2 * f_inf(u)``."""

    density: Density
    noise_sd: float


@dataclass(frozen=True)
class ModelSpec:
    mu: MonotoneFn
    pops: tuple
    noise: NoiseKind = NoiseKind.GAUSSIAN
    constants: Constants = Constants()
    limit: Optional[LimitSpec] = None

    def __post_init__(self):
        pops = tuple(self.pops)
        object.__setattr__(self, "pops", pops)
        if not pops:
            raise ValueError("need at least one population")
        total = math.fsum(p.share for p in pops)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"shares sum to {total!r}, not 1")

    @property
    def m(self) -> int:
        return len(self.pops)

    def f_x(self, u):
        u = np.asarray(u, dtype=float)
        out = sum(p.share * p.density.pdf(u) for p in self.pops)
        return float(out) if np.ndim(out) == 0 else out

    def sigma_x_sq(self, u):
        u = np.asarray(u, dtype=float)
        out = sum(p.share * p.sd**2 * p.density.pdf(u) for p in self.pops)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        doc = {
            "mu": self.mu.to_dict(),
            "populations": [
                {"density": p.density.to_dict(), "sd": p.sd, "share": p.share} for p in self.pops
            ],
            "noise": self.noise.value,
            "constants": vars(self.constants).copy(),
        }
        if self.limit is not None:
            doc["limit"] = {"density": self.limit.density.to_dict(), "noise_sd": self.limit.noise_sd}
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "ModelSpec":
        pops = tuple(
            PopulationSpec(density_from_dict(p["density"]), p["sd"], p["share"])
            for p in doc["populations"]
        )
        limit = None
        if doc.get("limit"):
            limit = LimitSpec(density_from_dict(doc["limit"]["density"]), doc["limit"]["noise_sd"])
        return ModelSpec(
            mu_from_dict(doc["mu"]),
            pops,
            NoiseKind(doc.get("noise", "gaussian")),
            Constants(**doc.get("constants", {})),
            limit,
        )


def uniform_model(sigma: float, mu: MonotoneFn = None, constants: Constants = Constants()) -> ModelSpec:
    """Single uniform population with constant noise sd; the workhorse model."""
    if mu is None:
        mu = LinearMu(1.0, -1.0)
    return ModelSpec(mu, (PopulationSpec(UniformDensity(), sigma, 1.0),), constants=constants)


def growing_mixture_model(N: int, sigma: float = 0.3, mu: MonotoneFn = None) -> ModelSpec:
    """Growing-m mixture family: m = floor(N^(1/4)) populations with densities
    (1 - eps_j) * f0 + eps_j * f1, eps_j decreasing to 0, so that the mixture
    density converges to f0 (uniform) and the limit second moment is
    sigma^2 * f0(u)."""
    if mu is None:
        mu = LinearMu(1.0, -1.0)
    m = max(1, int(math.floor(N ** 0.25)))
    f1 = LinearDensity(0.5, 1.0)
    base_count = N // m
    pops = []
    for j in range(1, m + 1):
        eps_j = 1.0 / (2.0 * j)
        dens = mix_linear(UniformDensity(), f1, eps_j)
        count = base_count if j < m else N - base_count * (m - 1)
        pops.append(PopulationSpec(dens, sigma, count / N))
    return ModelSpec(
        mu,
        tuple(pops),
        constants=Constants(c1=0.4, c2=1.6, c3=0.5, c4=2.0, c5=1.5),
        limit=LimitSpec(UniformDensity(), sigma),
    )


def f_infinity(model: ModelSpec, u):
    """Pointwise limit of the mixture density, or the current mixture when no
    limit family is declared."""
    if model.limit is not None:
        out = model.limit.density.pdf(np.asarray(u, dtype=float))
        return float(out) if np.ndim(out) == 0 else out
    return model.f_x(u)


def sigma_infinity_sq(model: ModelSpec, u):
    """Pointwise limit of sum_j (n_j/N) sigma_j^2(u) f_j(u)."""
    if model.limit is not None:
        out = model.limit.noise_sd**2 * model.limit.density.pdf(np.asarray(u, dtype=float))
        return float(out) if np.ndim(out) == 0 else out
    return model.sigma_x_sq(u)


# ---------------------------------------------------------------------------
# data generation


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    pop: np.ndarray  # 1-based population labels

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "pop", np.asarray(self.pop, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.x.size

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,y,pop\n")
            for xi, yi, pi in zip(self.x, self.y, self.pop):
                fh.write("%.17g,%.17g,%d\n" % (xi, yi, pi))

    @staticmethod
    def from_csv(path) -> "Dataset":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        return Dataset(data["x"], data["y"], data["pop"].astype(np.int64))


class AssumptionViolation(ValueError):
    pass


def population_counts(model: ModelSpec, N: int):
    """Largest-remainder rounding of N * share_j; deterministic, sums to N."""
    raw = [N * p.share for p in model.pops]
    base = [int(math.floor(r)) for r in raw]
    short = N - sum(base)
    order = sorted(range(model.m), key=lambda j: (-(raw[j] - base[j]), j))
    for j in order[:short]:
        base[j] += 1
    return base


def generate_dataset(model: ModelSpec, N: int, seed) -> Dataset:
    """N pairs (X, Y) with population labels, deterministic given the seed.

    Draws are inverse-CDF transforms of uniforms; the noise is conditionally
    centered with the population's variance.  Raises a validation error
    naming A4 when some population would receive no observations at this N.
    """
    if N < 1:
        raise ValueError("N must be positive")
    counts = population_counts(model, N)
    if min(counts) < 1:
        raise AssumptionViolation(
            "A4: population shares leave at least one sub-sample empty at N=%d" % N
        )
    rng = rng_from(seed)
    xs, ys, pops = [], [], []
    for j, (p, nj) in enumerate(zip(model.pops, counts), start=1):
        xj = p.density.quantile(rng.random(nj))
        if model.noise is NoiseKind.GAUSSIAN:
            eps = rng.standard_normal(nj) * p.sd
        else:
            eps = p.sd * (2.0 * (rng.random(nj) < 0.5) - 1.0)
        xs.append(xj)
        ys.append(np.asarray(model.mu(xj), dtype=float) + eps)
        pops.append(np.full(nj, j, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(pops))


# ---------------------------------------------------------------------------
# assumption validation


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: Optional[bool]  # None means informational only
    margin: Optional[float]
    detail: str
    hard: bool = True  # soft checks report pass/fail but should not abort runs


@dataclass(frozen=True)
class Thresholds:
    """Finite-N surrogates for the asymptotic conditions; reported, not enforced."""

    bins: float = 2.0  # flag K * N^(-1/3) below this
    lam: float = 0.5  # flag lambda * N^(1/3) * (log N)^(-3) below this


def validate_assumptions(model: ModelSpec, N: int, K: int, thresholds: Thresholds = Thresholds()):
    """Pass/fail per assumption with the measured margin.

    Asymptotic smallness conditions are reported as their finite-N ratios
    against configurable thresholds: this is a report, never an enforcement.
    """
    cs = model.constants
    grid = np.linspace(0.0, 1.0, 10_001)
    checks = []

    fx = model.f_x(grid)
    fmin, fmax = float(np.min(fx)), float(np.max(fx))
    checks.append(
        AssumptionCheck(
            "A1",
            bool(fmin > cs.c1 and fmax <= cs.c2),
            min(fmin - cs.c1, cs.c2 - fmax),
            f"mixture density range [{fmin:.4g}, {fmax:.4g}] vs ({cs.c1}, {cs.c2}]",
        )
    )

    sd_max = max(p.sd for p in model.pops)
    checks.append(AssumptionCheck("A2", True, sd_max, f"conditional sd bounded by {sd_max:.4g}"))

    tgrid = np.linspace(0.0, 1.0, 201)
    mu_vals = np.asarray(model.mu(tgrid), dtype=float)
    dt = tgrid[:, None] - tgrid[None, :]
    dm = mu_vals[:, None] - mu_vals[None, :]
    off = ~np.eye(tgrid.size, dtype=bool)
    quot = np.abs(dm[off] / dt[off])
    qmin, qmax = float(np.min(quot)), float(np.max(quot))
    checks.append(
        AssumptionCheck(
            "A3",
            bool(qmin > cs.c3 and qmax < cs.c4),
            min(qmin - cs.c3, cs.c4 - qmax),
            f"difference quotients in [{qmin:.4g}, {qmax:.4g}] vs ({cs.c3}, {cs.c4})",
        )
    )

    sup_mu = float(np.max(np.abs(mu_vals)))
    checks.append(
        AssumptionCheck(
            "F1",
            bool(sup_mu <= cs.c5),
            cs.c5 - sup_mu,
            f"sup |mu| = {sup_mu:.4g} vs bound {cs.c5}",
        )
    )

    bins_ratio = K * N ** (-1.0 / 3.0)
    checks.append(
        AssumptionCheck(
            "A4-bins",
            bool(bins_ratio >= thresholds.bins),
            bins_ratio,
            f"K * N^(-1/3) = {bins_ratio:.4g} (threshold {thresholds.bins})",
        )
    )
    lam = min(p.share for p in model.pops)
    lam_ratio = lam * N ** (1.0 / 3.0) / math.log(N) ** 3
    checks.append(
        AssumptionCheck(
            "A4-lambda",
            bool(lam_ratio >= thresholds.lam),
            lam_ratio,
            f"lambda * N^(1/3) * (log N)^(-3) = {lam_ratio:.4g} (threshold {thresholds.lam}; "
            "the (log N)^3 factor keeps this ratio tiny at any desk-scale N, so the flag is soft)",
            hard=False,
        )
    )

    fj_sup = max(float(np.max(p.density.pdf(grid))) for p in model.pops)
    checks.append(AssumptionCheck("At0", True, fj_sup, f"population densities bounded by {fj_sup:.4g}"))

    lip = 0.0
    for p in model.pops:
        if isinstance(p.density, LinearDensity):
            lip = max(lip, abs(p.density.b))
    checks.append(
        AssumptionCheck("At1", True, lip, f"density Lipschitz constants bounded by {lip:.4g}; sigma_j^2 constant")
    )

    if model.limit is not None:
        finf = f_infinity(model, grid)
        gap_f = float(np.max(np.abs(fx - finf)))
        checks.append(AssumptionCheck("At2", None, gap_f, f"sup |f_X - f_inf| = {gap_f:.4g} at this N"))
        sinf = sigma_infinity_sq(model, grid)
        gap_s = float(np.max(np.abs(model.sigma_x_sq(grid) - sinf)))
        inf_min = float(np.min(sinf))
        checks.append(
            AssumptionCheck(
                "At3",
                bool(inf_min > 0),
                gap_s,
                f"sup |sigma_X^2 - sigma_inf^2| = {gap_s:.4g}; min sigma_inf^2 = {inf_min:.4g}",
            )
        )
    else:
        checks.append(AssumptionCheck("At2", None, None, "no limit family declared: f_inf taken as current f_X"))
        checks.append(AssumptionCheck("At3", None, None, "no limit family declared: sigma_inf^2 taken as current sigma_X^2"))

    checks.append(
        AssumptionCheck(
            "At4",
            True,
            None,
            f"{model.noise.value} noise has all conditional moments bounded",
        )
    )

    c1_flag = getattr(model.mu, "is_c1", False)
    checks.append(
        AssumptionCheck(
            "At5",
            bool(c1_flag),
            None,
            "mu continuously differentiable" if c1_flag else "mu has corners: limit-law scale undefined there",
        )
    )
    return checks
