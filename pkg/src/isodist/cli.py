"""Command-line front end.

Subcommands: gen, fit, invert, mse, dist, sweep, tail, ledger, validate.
Every artifact-producing run writes a manifest (resolved config, its digest,
the seed, library versions, output list) so the run can be reproduced from
the manifest alone; no timestamps, so reruns are byte-identical.

Exit codes: 0 success, 1 validation or self-check failure, 2 usage errors.
The environment variable ISODIST_SEED overrides every other seed source.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, plots
from .chernoff import ChernoffConfig, sample_chernoff
from .cluster import AllocPolicy, CommLedger, allocate, local_summaries, merge_summaries
from .estimators import check_switch, pooled_fit, pooled_inverse_many
from .experiments import (
    ExperimentConfig,
    bins_rule,
    default_levels,
    homogeneous_base,
    limit_law_check,
    mc_risk,
    superefficiency_sweep,
    tail_diagnostic,
)
from .models import (
    Dataset,
    ModelSpec,
    generate_dataset,
    growing_mixture_model,
    uniform_model,
    validate_assumptions,
)

ENV_SEED = "ISODIST_SEED"


class UsageError(ValueError):
    pass


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def load_model_doc(doc: dict, N: int = None) -> ModelSpec:
    """A model document is either a full specification or a family tag."""
    if "mu" in doc:
        return ModelSpec.from_dict(doc)
    if doc.get("type") == "growing_mixture_family":
        if N is None:
            raise UsageError("the mixture family needs a sample size to resolve")
        return growing_mixture_model(N, sigma=doc.get("sigma", 0.3))
    raise UsageError("unrecognized model document")


def _resolve_seed(args, default=0):
    env = os.environ.get(ENV_SEED)
    if env is not None:
        return int(env)
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return default


def _digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, subcommand: str, config: dict, seed, outputs):
    # output names are stored relative to the run directory so that two runs
    # of the same configuration produce byte-identical manifests
    doc = {
        "tool": "isodist",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "config_sha256": _digest(config),
        "outputs": sorted(os.path.basename(str(o)) for o in outputs),
        "versions": {"python": platform.python_version(), "numpy": np.__version__},
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    out = _out_dir(args)
    doc = _load_json(args.model)
    seed = _resolve_seed(args)
    model = load_model_doc(doc, args.n)
    data = generate_dataset(model, args.n, seed)
    path = out / "dataset.csv"
    data.to_csv(path)
    write_manifest(out, "gen", {"model": doc, "n": args.n}, seed, [path])
    return 0


def cmd_validate(args) -> int:
    doc = _load_json(args.model)
    model = load_model_doc(doc, args.n)
    K = args.k if args.k else bins_rule(args.n)
    checks = validate_assumptions(model, args.n, K)
    hard_fail = False
    for c in checks:
        status = "INFO" if c.passed is None else ("PASS" if c.passed else ("FAIL" if c.hard else "WARN"))
        hard_fail = hard_fail or (c.passed is False and c.hard)
        margin = "" if c.margin is None else f" margin={c.margin:.6g}"
        print(f"{status:4s} {c.name:10s}{margin}  {c.detail}")
    if args.out:
        out = _out_dir(args)
        path = out / "assumptions.json"
        with open(path, "w") as fh:
            json.dump(
                [{"name": c.name, "passed": c.passed, "margin": c.margin, "detail": c.detail} for c in checks],
                fh,
                indent=2,
            )
        write_manifest(out, "validate", {"model": doc, "n": args.n, "k": K}, None, [path])
    return 1 if hard_fail else 0


def _fit_pipeline(args):
    data = Dataset.from_csv(args.data)
    K = args.k if args.k else bins_rule(data.n)
    seed = _resolve_seed(args)
    alloc = allocate(data.n, args.servers, AllocPolicy(args.alloc), seed=seed, pops=data.pop)
    ledger = CommLedger()
    bins = local_summaries(data, alloc, K, ledger)
    reg = merge_summaries(bins, data.n, ledger)
    fit = pooled_fit(reg)
    return data, K, alloc, ledger, bins, reg, fit, seed


def _switch_self_check(fit, seed) -> bool:
    """The gate before writing: the switch relation on a 100-point grid."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(17,))))
    finite = fit.fitted[np.isfinite(fit.fitted)]
    ts = np.concatenate([rng.choice(fit.xbar_grid[1:], 5), rng.uniform(1e-6, 1.0, 5)])
    levels = np.concatenate(
        [
            rng.choice(finite, 5) if finite.size else np.zeros(5),
            rng.normal(np.mean(finite) if finite.size else 0.0, 1.0, 3),
            [np.min(finite) - 1.0, np.max(finite) + 1.0] if finite.size else [0.0, 1.0],
        ]
    )
    return all(check_switch(fit, float(t), float(a)) for t in ts for a in levels)


def cmd_fit(args) -> int:
    out = _out_dir(args)
    data, K, alloc, ledger, bins, reg, fit, seed = _fit_pipeline(args)
    if not _switch_self_check(fit, seed):
        print("self-check failed: switch relation violated; nothing written", file=sys.stderr)
        return 1
    outputs = []
    path = out / "muhat.json"
    with open(path, "w") as fh:
        fh.write(fit.muhat.to_json())
        fh.write("\n")
    outputs.append(path)
    reg_path = out / "regressogram.csv"
    reg.to_csv(reg_path)
    outputs.append(reg_path)
    wire_path = out / "summaries.csv"
    bins.to_csv(wire_path)
    outputs.append(wire_path)
    led_path = out / "ledger.json"
    with open(led_path, "w") as fh:
        fh.write(ledger.to_json())
        fh.write("\n")
    outputs.append(led_path)
    if not args.no_plot:
        outputs.append(plots.save_step_figure(fit.muhat, out / "fit.png"))
    config = {"data": str(args.data), "k": K, "servers": args.servers, "alloc": args.alloc}
    write_manifest(out, "fit", config, seed, outputs)
    return 0


def cmd_invert(args) -> int:
    out = _out_dir(args)
    data, K, alloc, ledger, bins, reg, fit, seed = _fit_pipeline(args)
    if args.levels:
        levels = np.array([float(v) for v in args.levels.split(",")])
    elif args.model:
        model = load_model_doc(_load_json(args.model), data.n)
        levels = default_levels(model)
    else:
        finite = fit.fitted[np.isfinite(fit.fitted)]
        span = float(np.max(finite) - np.min(finite)) or 1.0
        levels = np.linspace(np.min(finite) + 0.05 * span, np.max(finite) - 0.05 * span, 41)
    locations = pooled_inverse_many(fit, levels)
    outputs = []
    path = out / "inverse.csv"
    with open(path, "w") as fh:
        fh.write("a,u\n")
        for a, u in zip(levels, locations):
            fh.write("%.17g,%.17g\n" % (a, u))
    outputs.append(path)
    led_path = out / "ledger.json"
    with open(led_path, "w") as fh:
        fh.write(ledger.to_json())
        fh.write("\n")
    outputs.append(led_path)
    if not args.no_plot:
        outputs.append(plots.save_inverse_figure(levels, locations, out / "invert.png"))
    config = {"data": str(args.data), "k": K, "servers": args.servers, "alloc": args.alloc, "levels": levels.tolist()}
    write_manifest(out, "invert", config, seed, outputs)
    return 0


def experiment_from_doc(doc: dict, seed_override=None, jobs=None) -> ExperimentConfig:
    kw = dict(doc)
    model_doc = kw.pop("model", None)
    if model_doc is not None and "mu" in model_doc:
        kw["model"] = ModelSpec.from_dict(model_doc)
    elif model_doc is not None:
        if model_doc.get("type") != "growing_mixture_family":
            raise UsageError("experiment model must be a full specification or a growing_mixture_family tag")
        kw["family"] = {"name": "growing_mixture", "sigma": model_doc.get("sigma", 0.3)}
    if seed_override is not None:
        kw["seed"] = seed_override
    if jobs is not None:
        kw["jobs"] = jobs
    kw = {k: v for k, v in kw.items() if k in ExperimentConfig.__dataclass_fields__}
    if "n_values" in kw:
        kw["n_values"] = tuple(kw["n_values"])
    for key in ("estimators", "t_points", "a_levels"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return ExperimentConfig(**kw)


def cmd_mse(args) -> int:
    out = _out_dir(args)
    doc = _load_json(args.experiment)
    seed = _resolve_seed(args, default=doc.get("seed", 0))
    cfg = experiment_from_doc(doc, seed_override=seed, jobs=args.jobs)
    report = mc_risk(cfg)
    outputs = []
    csv_path = out / "risk.csv"
    report.to_csv(csv_path)
    outputs.append(csv_path)
    json_path = out / "risk.json"
    with open(json_path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
    outputs.append(json_path)
    if not args.no_plot:
        outputs.append(plots.save_risk_figure(report, out / "risk.png"))
    write_manifest(out, "mse", report.config, seed, outputs)
    return 0


def cmd_dist(args) -> int:
    out = _out_dir(args)
    if args.what == "chernoff":
        seed = _resolve_seed(args)
        cfg = ChernoffConfig(half_width=args.half_width, step=args.step, count=args.samples, seed=seed)
        z = sample_chernoff(cfg)
        outputs = []
        if args.quantiles:
            qs = np.linspace(0.005, 0.995, 199)
            path = out / "chernoff_quantiles.csv"
            with open(path, "w") as fh:
                fh.write("p,quantile\n")
                for p, q in zip(qs, np.quantile(z, qs)):
                    fh.write("%.17g,%.17g\n" % (p, q))
        else:
            path = out / "chernoff_samples.csv"
            with open(path, "w") as fh:
                fh.write("z\n")
                for v in z:
                    fh.write("%.17g\n" % v)
        outputs.append(path)
        if not args.no_plot:
            outputs.append(plots.save_chernoff_figure(z, out / "chernoff.png"))
        config = {
            "what": "chernoff",
            "half_width": args.half_width,
            "step": args.step,
            "samples": args.samples,
            "quantiles": bool(args.quantiles),
        }
        write_manifest(out, "dist", config, seed, outputs)
        return 0
    # limit-law comparison
    doc = _load_json(args.experiment)
    seed = _resolve_seed(args, default=doc.get("seed", 0))
    cfg = experiment_from_doc(doc, seed_override=seed, jobs=args.jobs)
    reference = sample_chernoff(ChernoffConfig(count=args.samples, seed=seed + 90_001))
    results = limit_law_check(cfg, t=args.t, a=args.a, estimator=args.estimator, reference=reference)
    outputs = []
    path = out / "limitlaw.csv"
    with open(path, "w") as fh:
        fh.write("kind,estimator,N,ks,scale\n")
        for r in results:
            fh.write("%s,%s,%d,%.17g,%.17g\n" % (r.kind, r.estimator, r.N, r.ks, r.scale))
    outputs.append(path)
    for r in results:
        spath = out / f"limitlaw_{r.kind}_samples.csv"
        with open(spath, "w") as fh:
            fh.write("standardized\n")
            for v in r.samples:
                fh.write("%.17g\n" % v)
        outputs.append(spath)
    if not args.no_plot:
        outputs.append(plots.save_limit_figure(results, reference, out / "limitlaw.png"))
    write_manifest(out, "dist", {**cfg.to_doc(), "t": args.t, "a": args.a}, seed, outputs)
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    seed = _resolve_seed(args)
    base = homogeneous_base(sigma=args.sigma)
    report = superefficiency_sweep(
        base,
        x0=args.x0,
        eps0=args.eps0,
        c_grid=[float(v) for v in args.c_grid.split(",")],
        m_grid=[int(v) for v in args.m_grid.split(",")],
        N=args.n,
        reps=args.reps,
        seed=seed,
        offsets=[float(v) for v in args.offsets.split(",")],
        flat_frac=args.flat_frac,
    )
    outputs = []
    csv_path = out / "sweep.csv"
    report.to_csv(csv_path)
    outputs.append(csv_path)
    json_path = out / "sweep.json"
    with open(json_path, "w") as fh:
        json.dump({"summary": report.summary, "pruned": report.pruned, "config": report.config}, fh, indent=2, sort_keys=True)
    outputs.append(json_path)
    if not args.no_plot:
        outputs.append(plots.save_sweep_figure(report, out / "sweep.png"))
    write_manifest(out, "sweep", report.config, seed, outputs)
    return 0


def cmd_tail(args) -> int:
    out = _out_dir(args)
    seed = _resolve_seed(args)
    cfg = ExperimentConfig(
        model=uniform_model(args.sigma),
        estimators=("pooled",),
        n_values=(args.n,),
        servers=args.servers,
        reps=args.reps,
        seed=seed,
        jobs=args.jobs,
    )
    x_grid = [float(v) for v in args.x_grid.split(",")] if args.x_grid else np.geomspace(0.01, 0.3, 15).tolist()
    report = tail_diagnostic(cfg, a=args.a, x_grid=x_grid)
    outputs = []
    csv_path = out / "tail.csv"
    report.to_csv(csv_path)
    outputs.append(csv_path)
    if not args.no_plot:
        outputs.append(plots.save_tail_figure(report, out / "tail.png"))
    summary = {"slope": report.slope, "monotone": report.monotone, "mid_range": list(report.mid_range)}
    json_path = out / "tail.json"
    with open(json_path, "w") as fh:
        json.dump({**summary, "config": report.config}, fh, indent=2, sort_keys=True)
    outputs.append(json_path)
    write_manifest(out, "tail", report.config, seed, outputs)
    if not report.monotone:
        print("warning: exceedance frequencies not monotone", file=sys.stderr)
    return 0


def cmd_ledger(args) -> int:
    path = Path(args.out) / "ledger.json"
    if not path.exists():
        print(f"no ledger at {path}", file=sys.stderr)
        return 1
    doc = json.loads(path.read_text())
    for phase, count in sorted(doc["scalars_moved"].items()):
        print(f"{phase:16s} {count}")
    print(f"{'total':16s} {doc['total']}")
    if doc.get("empty_server_events"):
        print(f"empty-server events: {doc['empty_server_events']}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isodist",
        description="Distributed isotonic regression simulator: fit, invert, and compare estimators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, plot=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if plot:
            p.add_argument("--no-plot", action="store_true", help="skip figure rendering")

    p = sub.add_parser("gen", help="generate a dataset from a model document")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    add_common(p, plot=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("validate", help="report the model assumptions at a given size")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate, seed=None)

    for name, fn in (("fit", cmd_fit), ("invert", cmd_invert)):
        p = sub.add_parser(name, help=f"{name} the pooled estimator from a dataset CSV")
        p.add_argument("--data", required=True, help="dataset CSV from gen")
        p.add_argument("--k", type=int, default=None, help="bin count (default: ceil(N^(1/3) log N))")
        p.add_argument("--servers", type=int, default=8)
        p.add_argument("--alloc", choices=[a.value for a in AllocPolicy], default="contiguous")
        if name == "invert":
            p.add_argument("--levels", default=None, help="comma-separated levels")
            p.add_argument("--model", default=None, help="model document for default levels")
        add_common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("mse", help="Monte Carlo risk report from an experiment document")
    p.add_argument("--experiment", required=True)
    p.add_argument("--jobs", type=int, default=1)
    add_common(p)
    p.set_defaults(func=cmd_mse)

    p = sub.add_parser("dist", help="reference distribution sampling and limit-law checks")
    p.add_argument("what", choices=["chernoff", "limit"])
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--half-width", type=float, default=3.0, dest="half_width")
    p.add_argument("--step", type=float, default=0.005)
    p.add_argument("--quantiles", action="store_true")
    p.add_argument("--experiment", default=None)
    p.add_argument("--estimator", default="pooled")
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)
    add_common(p)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("sweep", help="superefficiency sweep over a perturbation grid")
    p.add_argument("--n", type=int, default=32_000)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--x0", type=float, default=0.5)
    p.add_argument("--eps0", type=float, default=0.1)
    p.add_argument("--c-grid", default="0.85,1.0,1.15", dest="c_grid")
    p.add_argument("--offsets", default="-0.7,0.0,0.7")
    p.add_argument("--flat-frac", type=float, default=0.15, dest="flat_frac")
    p.add_argument("--m-grid", default="4,16,64", dest="m_grid")
    add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tail", help="tail diagnostic for the pooled inverse estimator")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--servers", type=int, default=8)
    p.add_argument("--x-grid", default=None, dest="x_grid")
    p.add_argument("--jobs", type=int, default=1)
    add_common(p)
    p.set_defaults(func=cmd_tail)

    p = sub.add_parser("ledger", help="print the communication ledger of a previous run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ledger)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
