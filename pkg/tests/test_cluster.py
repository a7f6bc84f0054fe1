import math
from fractions import Fraction

import numpy as np
import pytest

from isodist.cluster import (
    AllocPolicy,
    Allocation,
    CommLedger,
    _exact_partials,
    allocate,
    bin_index,
    bin_indices,
    local_summaries,
    merge_summaries,
    regressogram_from_data,
)
from isodist.models import Dataset, generate_dataset, uniform_model
from isodist.stepfn import DomainError

POLICIES = (
    AllocPolicy.CONTIGUOUS,
    AllocPolicy.ROUND_ROBIN,
    AllocPolicy.RANDOM_UNIFORM,
    AllocPolicy.BY_POPULATION,
)


class TestAllocate:
    def test_contiguous_equal_blocks(self):
        assert allocate(6, 3, "contiguous").server_of.tolist() == [1, 1, 2, 2, 3, 3]

    def test_contiguous_remainder_to_last(self):
        assert allocate(7, 3, "contiguous").server_of.tolist() == [1, 1, 2, 2, 3, 3, 3]

    def test_round_robin(self):
        assert allocate(5, 2, "roundrobin").server_of.tolist() == [1, 2, 1, 2, 1]

    def test_random_uniform_counts(self):
        N, L = 10_000, 7
        alloc = allocate(N, L, "random", seed=5)
        counts = np.bincount(alloc.server_of, minlength=L + 1)[1:]
        sd = math.sqrt(N * (1 / L) * (1 - 1 / L))
        assert np.all(np.abs(counts - N / L) <= 4 * sd)

    def test_random_is_deterministic(self):
        a = allocate(100, 3, "random", seed=9).server_of
        b = allocate(100, 3, "random", seed=9).server_of
        assert np.array_equal(a, b)

    def test_by_population(self):
        pops = np.array([1, 2, 3, 4, 5])
        alloc = allocate(5, 2, "bypop", pops=pops)
        assert alloc.server_of.tolist() == [1, 2, 1, 2, 1]

    def test_rejects_bad_server_count(self):
        with pytest.raises(ValueError):
            allocate(5, 0, "contiguous")


class TestBinIndex:
    def test_right_closed_interval(self):
        assert bin_index(0.25, 4) == 1

    def test_right_endpoint(self):
        assert bin_index(1.0, 4) == 4

    def test_just_past_boundary(self):
        assert bin_index(0.2500001, 4) == 2

    def test_zero_goes_to_first_bin(self):
        assert bin_index(0.0, 4) == 1

    def test_domain_error(self):
        with pytest.raises(DomainError):
            bin_index(1.5, 4)

    def test_vectorized_matches_scalar_on_adversarial_points(self, rng):
        for K in (1, 3, 4, 7, 64, 306, 1023):
            pts = [rng.random(200)]
            edges = np.array([k / K for k in range(K + 1)])
            pts.append(edges)
            pts.append(np.nextafter(edges, 2.0))
            pts.append(np.nextafter(edges, -1.0))
            x = np.clip(np.concatenate(pts), 0.0, 1.0)
            vec = bin_indices(x, K)
            scalar = np.array([bin_index(float(v), K) for v in x])
            assert np.array_equal(vec, scalar)

    def test_exact_rational_boundaries(self):
        # float(1/3) sits just below the exact third: both it and its
        # successor must land deterministically by rational comparison
        x_lo = 1 / 3
        assert Fraction(x_lo) < Fraction(1, 3)
        assert bin_index(x_lo, 3) == 1
        x_hi = np.nextafter(x_lo, 1.0)
        assert Fraction(x_hi) > Fraction(1, 3)
        assert bin_index(float(x_hi), 3) == 2
        assert bin_indices(np.array([x_lo, x_hi]), 3).tolist() == [1, 2]


class TestExactPartials:
    def test_exact_sum(self, rng):
        vals = list(rng.normal(size=500) * 10.0 ** rng.integers(-8, 8, size=500))
        parts = _exact_partials(vals)
        assert sum(Fraction(v) for v in vals) == sum(Fraction(p) for p in parts)
        assert parts[0] == math.fsum(vals)

    def test_cancellation(self):
        vals = [1e16, 1.0, -1e16]
        parts = _exact_partials(vals)
        assert sum(Fraction(p) for p in parts) == 1


class TestSummaries:
    def test_single_point(self):
        data = Dataset([0.3], [2.0], [1])
        alloc = allocate(1, 1, "contiguous")
        bins = local_summaries(data, alloc, 2)
        assert bins.T.tolist() == [[2.0, 0.0]]
        assert bins.C.tolist() == [[1, 0]]

    def test_two_servers_additive(self):
        data = Dataset([0.3, 0.3], [2.0, 2.0], [1, 1])
        alloc = Allocation(np.array([1, 2]), 2, AllocPolicy.CONTIGUOUS)
        bins = local_summaries(data, alloc, 2)
        assert bins.T.sum(axis=0).tolist() == [4.0, 0.0]
        assert bins.C.sum(axis=0).tolist() == [2, 0]

    def test_shard_sizes_recount(self, rng):
        model = uniform_model(0.4)
        data = generate_dataset(model, 1000, 3)
        alloc = allocate(1000, 5, "random", seed=8)
        bins = local_summaries(data, alloc, 16)
        for server in range(1, 6):
            assert bins.C[server - 1].sum() == int(np.sum(alloc.server_of == server))

    def test_ledger_counts(self):
        data = generate_dataset(uniform_model(0.1), 64, 0)
        ledger = CommLedger()
        local_summaries(data, allocate(64, 8, "roundrobin"), 64, ledger)
        assert ledger.scalars_moved["summaries"] == 2 * 8 * 64
        assert ledger.per_server["summaries"][3] == 2 * 64


class TestMerge:
    def test_singleton_bins(self):
        data = Dataset([0.2, 0.7], [2.0, 4.0], [1, 1])
        reg = regressogram_from_data(data, allocate(2, 1, "contiguous"), 2)
        assert reg.ybar.tolist() == [2.0, 4.0]
        assert reg.w.tolist() == [0.5, 0.5]

    def test_everything_in_first_bin(self):
        data = Dataset([0.05, 0.08, 0.01], [1.0, 2.0, 3.0], [1, 1, 1])
        reg = regressogram_from_data(data, allocate(3, 2, "roundrobin"), 10)
        assert reg.w[0] == pytest.approx(1.0)
        assert np.all(reg.w[1:] == 0)
        assert np.all(np.isnan(reg.ybar[1:]))

    def test_bin_means_match_raw_recomputation_bitwise(self, rng):
        model = uniform_model(0.6)
        data = generate_dataset(model, 2000, 17)
        K = 32
        reg = regressogram_from_data(data, allocate(2000, 7, "random", seed=1), K)
        raw_bins = bin_indices(data.x, K)
        for k in range(1, K + 1):
            members = data.y[raw_bins == k]
            if members.size:
                assert reg.ybar[k - 1] == math.fsum(members.tolist()) / members.size
            else:
                assert math.isnan(reg.ybar[k - 1])

    def test_conservation(self, rng):
        data = generate_dataset(uniform_model(0.5), 3000, 23)
        reg = regressogram_from_data(data, allocate(3000, 6, "contiguous"), 40)
        assert math.fsum(reg.w.tolist()) == pytest.approx(1.0, abs=1e-12)
        total = math.fsum((reg.counts[k] * reg.ybar[k] for k in range(reg.K) if reg.counts[k]))
        assert total == pytest.approx(math.fsum(data.y.tolist()), rel=1e-9)

    def _all_policy_regressograms(self, data, L, K):
        out = []
        for policy in POLICIES:
            alloc = allocate(data.n, L, policy, seed=99, pops=data.pop)
            out.append(regressogram_from_data(data, alloc, K))
        return out

    def test_allocation_invariance_bit_for_bit(self):
        model = uniform_model(0.8)
        for trial in range(10):
            data = generate_dataset(model, 600, 1000 + trial)
            regs = self._all_policy_regressograms(data, 5, 24)
            for other in regs[1:]:
                assert regs[0].equal_bits(other)

    def test_allocation_invariance_under_cancellation(self):
        # magnitudes chosen so that naive float accumulation would disagree
        # across groupings; the exact merge must not care
        rng = np.random.Generator(np.random.Philox(4))
        n = 400
        x = rng.random(n)
        y = rng.normal(size=n) * np.choose(rng.integers(0, 3, n), [1.0, 1e14, 1e-14])
        data = Dataset(x, y, np.ones(n, dtype=int))
        regs = self._all_policy_regressograms(data, 7, 8)
        for other in regs[1:]:
            assert regs[0].equal_bits(other)

    def test_merge_validates_total(self):
        data = Dataset([0.5], [1.0], [1])
        bins = local_summaries(data, allocate(1, 1, "contiguous"), 2)
        with pytest.raises(ValueError):
            merge_summaries(bins, 2)


class TestLedgerExport:
    def test_json_shape(self):
        ledger = CommLedger()
        ledger.record_summaries(2, 3)
        ledger.record_global([5, 7])
        ledger.record_bdse([1, 2], n_queries=3)
        doc = ledger.to_json_dict()
        assert doc["scalars_moved"]["summaries"] == 12
        assert doc["scalars_moved"]["global_transfer"] == 24
        assert doc["scalars_moved"]["bdse_transfer"] == 6
        assert doc["total"] == 42
