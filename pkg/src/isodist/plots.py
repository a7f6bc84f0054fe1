"""Figure rendering for the report-producing CLI paths.

Every function takes a report object and a target path, renders with the Agg
backend, and returns the path it wrote.  Figures sit next to the delimited
output of the same run; they are a convenience view, never the data of
record.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (6.4, 4.2),
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 9,
        "legend.fontsize": 8,
    }
)

_COLORS = {"pooled": "#1f77b4", "global": "#2ca02c", "bdse": "#d62728"}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def save_step_figure(step, path, title="fitted step function"):
    xs = [0.0] + list(step.knots) + [1.0]
    fig, ax = plt.subplots()
    finite = [v for v in step.values if np.isfinite(v)]
    top = max(finite) if finite else 1.0
    ys = [v if np.isfinite(v) else top + 0.5 for v in step.values]
    ax.step(xs, ys + [ys[-1]], where="post")
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    ax.set_title(title)
    return _finish(fig, path)


def save_inverse_figure(levels, locations, path):
    fig, ax = plt.subplots()
    ax.step(levels, locations, where="post")
    ax.set_xlabel("level a")
    ax.set_ylabel("inverse location")
    ax.set_title("generalized inverse estimate")
    return _finish(fig, path)


def save_risk_figure(report, path):
    fig, ax = plt.subplots()
    series = {}
    for r in report.rows:
        series.setdefault((r.estimator, r.kind, r.target), []).append((r.N, r.scaled, r.se_scaled))
    for (est, kind, target), pts in sorted(series.items()):
        pts.sort()
        ns = [p[0] for p in pts]
        vals = [p[1] for p in pts]
        errs = [p[2] for p in pts]
        ax.errorbar(
            ns,
            vals,
            yerr=errs,
            marker="o",
            capsize=3,
            color=_COLORS.get(est),
            linestyle="-" if kind == "inverse" else "--",
            label=f"{est} {kind}@{target:g}",
        )
    ax.set_xscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel(r"N$^{2/3}$ MSE")
    ax.set_title("scaled Monte Carlo risk")
    ax.legend()
    return _finish(fig, path)


def save_sweep_figure(report, path):
    fig, ax = plt.subplots()
    ms = sorted(report.summary["bdse_worst"])
    worst = [report.summary["bdse_worst"][m]["scaled"] for m in ms]
    fixed = [report.summary["bdse_fixed"][m] for m in ms]
    ax.plot(ms, worst, "o-", color=_COLORS["bdse"], label="bdse worst over grid")
    ax.plot(ms, fixed, "s--", color=_COLORS["bdse"], alpha=0.6, label="bdse at base model")
    ax.axhline(report.summary["pooled_worst"]["scaled"], color=_COLORS["pooled"], label="pooled worst")
    ax.axhline(report.summary["global_worst"]["scaled"], color=_COLORS["global"], label="global worst")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("shards m")
    ax.set_ylabel(r"N$^{2/3}$ MSE")
    ax.set_title("worst-case inverse risk across the perturbation grid")
    ax.legend()
    return _finish(fig, path)


def save_tail_figure(report, path):
    fig, ax = plt.subplots()
    pos = report.frequencies > 0
    ax.loglog(report.x_grid[pos], report.frequencies[pos], "o-", label="empirical exceedance")
    ax.loglog(report.x_grid, report.reference, "--", label=r"fit of const/(N x$^3$)")
    ax.set_xlabel("x")
    ax.set_ylabel(r"P(|U$_N$(a) $-$ g(a)| $\geq$ x)")
    ax.set_title(f"tail diagnostic, log-log slope {report.slope:.2f}")
    ax.legend()
    return _finish(fig, path)


def save_limit_figure(results, reference, path):
    fig, axes = plt.subplots(1, len(results), squeeze=False)
    lo, hi = np.quantile(reference, [0.001, 0.999])
    bins = np.linspace(lo, hi, 40)
    for ax, res in zip(axes[0], results):
        ax.hist(reference, bins=bins, density=True, alpha=0.4, label="reference argmax law")
        ax.hist(res.samples, bins=bins, density=True, histtype="step", label=f"{res.kind} samples")
        ax.set_title(f"{res.estimator} {res.kind}: KS={res.ks:.3f}")
        ax.legend()
    return _finish(fig, path)


def save_chernoff_figure(samples, path):
    fig, ax = plt.subplots()
    ax.hist(samples, bins=80, density=True)
    ax.set_xlabel("z")
    ax.set_ylabel("density")
    ax.set_title("Brownian argmax samples")
    return _finish(fig, path)
