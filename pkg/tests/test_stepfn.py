import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isodist.stepfn import (
    DomainError,
    Side,
    StepFunction,
    extend_g,
    generalized_inverse,
    grid_points,
    left_step_from_grid,
    right_step_from_grid,
)


def naive_eval(f, t):
    """Per-piece membership scan: the oracle for eval."""
    bounds = [0.0] + list(f.knots) + [1.0]
    for i, v in enumerate(f.values):
        lo, hi = bounds[i], bounds[i + 1]
        if f.side is Side.LEFT:
            inside = (lo < t <= hi) or (i == 0 and t == 0.0)
        else:
            inside = (lo <= t < hi) or (i == len(f.values) - 1 and t == hi)
        if inside:
            return v
    raise AssertionError("uncovered point")


class TestEval:
    def test_left_takes_piece_ending_at_knot(self):
        f = StepFunction((0.5,), (2.0, 1.0), Side.LEFT)
        assert f.eval(0.5) == 2.0

    def test_right_takes_piece_starting_at_knot(self):
        f = StepFunction((0.5,), (2.0, 1.0), Side.RIGHT)
        assert f.eval(0.5) == 1.0

    def test_constant(self):
        f = StepFunction((), (7.0,), Side.LEFT)
        assert f.eval(0.3) == 7.0

    def test_domain_error(self):
        f = StepFunction((), (7.0,), Side.LEFT)
        with pytest.raises(DomainError):
            f.eval(1.2)
        with pytest.raises(DomainError):
            f.eval(-0.1)

    @pytest.mark.parametrize("side", [Side.LEFT, Side.RIGHT])
    def test_matches_naive_scan_on_dense_grid(self, side, rng):
        knots = tuple(sorted(rng.uniform(0.01, 0.99, size=6)))
        values = tuple(rng.normal(size=7))
        f = StepFunction(knots, values, side)
        grid = np.concatenate([np.linspace(0, 1, 10_000), np.array(knots)])
        for t in grid:
            assert f.eval(t) == naive_eval(f, float(t))

    def test_knot_validation(self):
        with pytest.raises(ValueError):
            StepFunction((0.5, 0.5), (1.0, 0.5, 0.2), Side.LEFT)
        with pytest.raises(ValueError):
            StepFunction((1.0,), (1.0, 0.5), Side.LEFT)  # no knot at 1 for left
        with pytest.raises(ValueError):
            StepFunction((0.3,), (1.0,), Side.LEFT)  # value count mismatch
        with pytest.raises(ValueError):
            StepFunction((0.3,), (0.5, 1.0), Side.LEFT, nonincreasing=True)


class TestGeneralizedInverse:
    def test_empty_set_convention(self):
        h = StepFunction((), (5.0,), Side.LEFT, nonincreasing=True)
        assert generalized_inverse(h, 6.0) == 0.0

    def test_whole_domain(self):
        h = StepFunction((), (5.0,), Side.LEFT, nonincreasing=True)
        assert generalized_inverse(h, 4.0) == 1.0

    def test_two_piece_against_grid_scan(self):
        h = StepFunction((0.4,), (3.0, 1.0), Side.LEFT, nonincreasing=True)
        grid = np.concatenate([np.linspace(0, 1, 200_001), [0.4]])
        expected = max(t for t in grid if h.eval(t) >= 2.0)
        got = generalized_inverse(h, 2.0)
        assert got == 0.4
        assert got == expected

    def test_requires_flags(self):
        f = StepFunction((0.4,), (3.0, 1.0), Side.RIGHT)
        with pytest.raises(ValueError):
            generalized_inverse(f, 1.0)
        g = StepFunction((0.4,), (3.0, 1.0), Side.LEFT)
        with pytest.raises(ValueError):
            generalized_inverse(g, 1.0)

    @given(
        st.lists(st.floats(0.01, 0.99), min_size=0, max_size=6, unique=True),
        st.lists(st.floats(-5, 5), min_size=1, max_size=7),
        st.floats(-6, 6),
    )
    def test_switch_property(self, knots, raw_values, a):
        knots = tuple(sorted(knots))
        values = tuple(sorted(raw_values, reverse=True))[: len(knots) + 1]
        if len(values) != len(knots) + 1:
            values = values + (values[-1],) * (len(knots) + 1 - len(values))
        h = StepFunction(knots, values, Side.LEFT, nonincreasing=True)
        u = generalized_inverse(h, a)
        # the equivalence is a statement about t in (0, 1]: at t = 0 the
        # empty-set convention makes the right side vacuously true
        grid = list(knots) + [1.0, 0.5 * (knots[0] if knots else 1.0)]
        for t in grid:
            assert (h.eval(t) >= a) == (t <= u)

    def test_nonincreasing_in_level(self, rng):
        knots = tuple(sorted(rng.uniform(0.05, 0.95, size=5)))
        values = tuple(sorted(rng.normal(size=6), reverse=True))
        h = StepFunction(knots, values, Side.LEFT, nonincreasing=True)
        levels = np.sort(rng.normal(size=40))
        out = [generalized_inverse(h, a) for a in levels]
        assert all(b <= a for a, b in zip(out, out[1:]))


class TestExtendG:
    def test_above_range(self):
        assert extend_g(lambda x: 1 - x, 1.5) == 0.0

    def test_below_range(self):
        assert extend_g(lambda x: 1 - x, -0.5) == 1.0

    def test_bisection(self):
        assert abs(extend_g(lambda x: 1 - x, 0.25) - 0.75) <= 1e-12

    def test_endpoints(self):
        assert extend_g(lambda x: 1 - x, 1.0) == 0.0
        assert extend_g(lambda x: 1 - x, 0.0) == 1.0


class TestGridHelpers:
    def test_grid_points(self):
        assert grid_points(4) == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_left_grid_carries_ratios(self):
        f = left_step_from_grid(3, [3.0, 2.0, 1.0], nonincreasing=True)
        assert f.knot_ratios == ((1, 3), (2, 3))
        assert f.eval(1 / 3) == 3.0
        assert f.eval(1.0) == 1.0

    def test_right_grid(self):
        f = right_step_from_grid(2, [0.0, 0.5, 1.0])
        assert f.eval(0.0) == 0.0
        assert f.eval(0.5) == 0.5
        assert f.eval(1.0) == 1.0
        assert f.eval(0.75) == 0.5

    def test_json_round_trip(self):
        f = left_step_from_grid(3, [3.0, 2.0, 1.0])
        doc = json.loads(f.to_json())
        g = StepFunction.from_json_dict(doc)
        assert g.knots == f.knots and g.values == f.values and g.side == f.side
