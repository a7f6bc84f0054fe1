import math

import numpy as np
import pytest

from isodist.cluster import AllocPolicy
from isodist.experiments import (
    ExperimentConfig,
    bins_rule,
    default_levels,
    homogeneous_base,
    limit_law_check,
    mc_risk,
    superefficiency_sweep,
    tail_diagnostic,
)
from isodist.models import uniform_model


def small_cfg(**kw):
    base = dict(
        model=uniform_model(0.3),
        estimators=("pooled", "global", "bdse"),
        n_values=(400,),
        k_rule="n13logn",
        servers=4,
        alloc=AllocPolicy.CONTIGUOUS,
        t_points=(0.5,),
        a_levels=(0.5,),
        reps=40,
        seed=5,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_bins_rule(self):
        assert bins_rule(27_000) == 307
        assert bins_rule(1000, 64) == 64

    def test_default_levels(self):
        model = uniform_model(0.3)
        levels = default_levels(model)
        assert levels.size == 41
        assert levels[0] == pytest.approx(0.05) and levels[-1] == pytest.approx(0.95)

    def test_model_xor_family(self):
        with pytest.raises(ValueError):
            ExperimentConfig(model=None, family=None)
        with pytest.raises(ValueError):
            ExperimentConfig(model=uniform_model(0.1), family={"name": "growing_mixture"})

    def test_family_resolution(self):
        cfg = ExperimentConfig(family={"name": "growing_mixture", "sigma": 0.4}, n_values=(10_000,))
        model = cfg.resolve_model(10_000)
        assert model.m == 10

    def test_unknown_estimator(self):
        with pytest.raises(ValueError):
            small_cfg(estimators=("pooled", "nonsense"))


class TestMcRisk:
    def test_bitwise_reproducible(self):
        cfg = small_cfg(reps=15)
        r1 = mc_risk(cfg)
        r2 = mc_risk(cfg)
        for a, b in zip(r1.rows, r2.rows):
            assert a == b
        assert r1.ledger.scalars_moved == r2.ledger.scalars_moved

    def test_ledger_totals(self):
        cfg = small_cfg(reps=10, estimators=("pooled", "global", "bdse"))
        report = mc_risk(cfg)
        N = 400
        K = bins_rule(N)
        assert report.ledger.scalars_moved["summaries"] == 10 * 2 * cfg.servers * K
        assert report.ledger.scalars_moved["global_transfer"] == 10 * 2 * N
        # direct path charges one scalar per server per query point, and the
        # inverse path another
        assert report.ledger.scalars_moved["bdse_transfer"] == 10 * cfg.servers * 2

    def test_noiseless_direct_risk_tiny(self):
        cfg = small_cfg(model=uniform_model(0.0), reps=10, estimators=("pooled",))
        report = mc_risk(cfg)
        row = report.row("pooled", 400, "direct", 0.5)
        K = bins_rule(400)
        assert row.mse <= (2.0 / K) ** 2

    def test_rows_cover_targets(self):
        cfg = small_cfg(reps=5, t_points=(0.3, 0.7), a_levels=(0.4,))
        report = mc_risk(cfg)
        kinds = {(r.estimator, r.kind, r.target) for r in report.rows}
        assert len(kinds) == 3 * 3
        assert all(r.reps_used == 5 and r.failures == 0 for r in report.rows)

    def test_se_shrinks_with_replications(self):
        r1 = mc_risk(small_cfg(reps=400, estimators=("global",), t_points=(), a_levels=(0.5,)))
        r2 = mc_risk(small_cfg(reps=800, estimators=("global",), t_points=(), a_levels=(0.5,)))
        ratio = r1.rows[0].se_scaled / r2.rows[0].se_scaled
        assert ratio == pytest.approx(math.sqrt(2.0), rel=0.10)

    def test_parallel_matches_serial(self):
        serial = mc_risk(small_cfg(reps=12, jobs=1))
        parallel = mc_risk(small_cfg(reps=12, jobs=3))
        for a, b in zip(serial.rows, parallel.rows):
            assert a == b

    def test_csv_and_json(self, tmp_path):
        report = mc_risk(small_cfg(reps=4))
        path = tmp_path / "risk.csv"
        report.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "estimator,N,m,K,target,value,se"
        doc = report.to_json_dict()
        assert {"config", "ledger", "rows"} <= set(doc)


class TestLimitLaw:
    def test_smoke_both_kinds(self, chernoff_ref):
        cfg = small_cfg(n_values=(3000,), reps=120, estimators=("pooled",))
        out = limit_law_check(cfg, t=0.5, a=0.5, reference=chernoff_ref)
        kinds = {r.kind for r in out}
        assert kinds == {"direct", "inverse"}
        for r in out:
            assert r.samples.size == 120
            assert r.ks < 0.5
            assert r.scale == pytest.approx((2 * 0.3) ** (2 / 3), rel=1e-9)

    def test_global_estimator_supported(self, chernoff_ref):
        cfg = small_cfg(n_values=(2000,), reps=60)
        (res,) = limit_law_check(cfg, a=0.5, estimator="global", reference=chernoff_ref)
        assert res.estimator == "global" and res.ks < 0.5


class TestSweep:
    def test_smoke_and_summary_shape(self):
        base = homogeneous_base(sigma=0.3)
        report = superefficiency_sweep(
            base,
            x0=0.5,
            eps0=0.1,
            c_grid=(0.8, 1.0),
            m_grid=(2, 4),
            N=800,
            reps=12,
            seed=3,
            offsets=(0.0, 0.5),
        )
        assert {r.estimator for r in report.rows} == {"pooled", "global", "bdse"}
        assert set(report.summary["bdse_worst"]) == {2, 4}
        assert report.summary["pooled_fixed"] > 0
        assert not math.isnan(report.summary["bdse_over_global_fixed"][2])

    def test_infeasible_points_pruned(self):
        base = homogeneous_base(sigma=0.3)
        report = superefficiency_sweep(
            base,
            x0=0.5,
            eps0=0.1,
            c_grid=(0.40001, 1.0),  # at the lower slope bound: pruned
            m_grid=(2,),
            N=500,
            reps=5,
            seed=1,
            offsets=(0.0, 0.9),  # 0.9 of the slack makes outer slopes too steep
        )
        assert report.pruned
        reasons = {p[2] for p in report.pruned}
        assert any("slope" in r or "window" in r for r in reasons)

    def test_rejects_nonlinear_base(self):
        base = homogeneous_base()
        from dataclasses import replace
        from isodist.models import TabulatedMu

        bad = replace(base, mu=TabulatedMu((0.0, 1.0), (1.0, 0.0)))
        with pytest.raises(ValueError):
            superefficiency_sweep(bad, 0.5, 0.1, (1.0,), (2,), 100, 2)


class TestTail:
    def test_shape_and_monotonicity(self):
        cfg = small_cfg(n_values=(2000,), reps=300, estimators=("pooled",), t_points=(), a_levels=())
        x_grid = np.geomspace(0.005, 0.3, 12)
        report = tail_diagnostic(cfg, a=0.5, x_grid=x_grid)
        assert report.monotone
        assert np.all(np.diff(report.frequencies) <= 0)
        assert report.frequencies[-1] == 0.0  # beyond the largest observed error
        assert math.isfinite(report.slope)

    def test_reference_curve_anchored_at_smallest_x(self):
        cfg = small_cfg(n_values=(1500,), reps=150, estimators=("pooled",))
        x_grid = [0.01, 0.05, 0.1]
        report = tail_diagnostic(cfg, a=0.5, x_grid=x_grid)
        k = np.flatnonzero(report.frequencies > 0)[0]
        assert report.reference[k] == pytest.approx(report.frequencies[k], rel=1e-12)
