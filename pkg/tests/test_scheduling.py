import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ltngan.scheduling import (
    AdaptiveWeights,
    Backtracker,
    LambdaSchedule,
    adaptive_weight_update,
    band_at,
    clip,
    lambda_at,
    weight_multiplier,
)

GAUSSIAN = LambdaSchedule("linear_ramp", 0.05, 0.30, 80)


class TestLambda:
    @pytest.mark.parametrize("epoch, expected", [(0, 0.05), (40, 0.175), (80, 0.30), (100, 0.30)])
    def test_ramp(self, epoch, expected):
        assert lambda_at(GAUSSIAN, epoch) == pytest.approx(expected, abs=1e-12)

    def test_constant(self):
        s = LambdaSchedule("constant", 0.1, 0.9, 0)
        assert [s(e) for e in (0, 5, 500)] == [0.1, 0.1, 0.1]

    def test_errors(self):
        with pytest.raises(ValueError):
            lambda_at(LambdaSchedule("linear_ramp", 0.1, 0.2, 0), 3)
        with pytest.raises(ValueError):
            GAUSSIAN(-1)
        with pytest.raises(ValueError):
            LambdaSchedule("cosine")
        with pytest.raises(ValueError):
            LambdaSchedule("constant", -0.1)

    @given(st.floats(0, 10), st.floats(0, 10), st.integers(1, 200), st.integers(0, 400))
    def test_within_endpoints(self, a, b, k, e):
        out = LambdaSchedule("linear_ramp", a, b, k)(e)
        assert min(a, b) - 1e-12 <= out <= max(a, b) + 1e-12

    @given(st.floats(0, 5), st.floats(0, 5), st.integers(1, 200), st.integers(0, 300))
    def test_monotone_when_rising(self, a, extra, k, e):
        s = LambdaSchedule("linear_ramp", a, a + extra, k)
        assert s(e) <= s(e + 1) + 1e-12


class TestClip:
    @pytest.mark.parametrize("x, expected", [(5, 1), (0.5, 0.5), (-1, 0)])
    def test_examples(self, x, expected):
        assert clip(x, 0, 1) == expected

    def test_reversed_bounds(self):
        with pytest.raises(ValueError):
            clip(0.5, 1, 0)


class TestAdaptiveWeights:
    @pytest.mark.parametrize("s, expected", [(0.2, 1.1), (0.9, 0.95), (0.5, 1.01)])
    def test_case_table(self, s, expected):
        assert adaptive_weight_update(s, 1.0, eta=0.1, momentum=0.0) == pytest.approx(expected, abs=1e-12)

    def test_fixed_point_at_target(self):
        assert adaptive_weight_update(0.6, 2.5, eta=0.1, momentum=0.0) == pytest.approx(2.5, abs=1e-12)

    def test_boundaries_as_printed(self):
        eta = 0.1
        assert weight_multiplier(0.3 - 1e-9, eta) == pytest.approx(1 + eta)
        assert weight_multiplier(0.3, eta) == pytest.approx(1 + 0.3 * eta)
        assert weight_multiplier(0.8, eta) == pytest.approx(1 - 0.2 * eta)
        assert weight_multiplier(0.8 + 1e-9, eta) == pytest.approx(1 - 0.5 * eta)

    def test_momentum_blend(self):
        # target 1.1, blended 0.7 * 1 + 0.3 * 1.1
        assert adaptive_weight_update(0.1, 1.0, eta=0.1, momentum=0.7) == pytest.approx(1.03, abs=1e-12)

    def test_clip_applies_before_blend(self):
        assert adaptive_weight_update(0.1, 10.0, momentum=0.0) == 10.0
        assert adaptive_weight_update(0.95, 0.1, momentum=0.0) == 0.1

    def test_bounds_over_random_sequences(self):
        rng = np.random.default_rng(0)
        aw = AdaptiveWeights()
        w = rng.uniform(aw.w_min, aw.w_max, size=100_000)
        for _ in range(20):
            s = rng.uniform(size=w.size)
            w = aw.update(s, w)
            assert w.min() >= aw.w_min and w.max() <= aw.w_max

    def test_validation(self):
        with pytest.raises(ValueError):
            AdaptiveWeights(momentum=1.0)
        with pytest.raises(ValueError):
            AdaptiveWeights(eta=0.0)
        with pytest.raises(ValueError):
            AdaptiveWeights(w_min=2.0, w_max=1.0)


class TestBand:
    def test_endpoints(self):
        assert band_at(0, 150) == pytest.approx(0.30)
        assert band_at(149, 150) == pytest.approx(0.15)
        assert band_at(0, 1) == 0.15

    def test_monotone(self):
        bands = [band_at(e, 50) for e in range(50)]
        assert all(a >= b for a, b in zip(bands, bands[1:]))


class TestBacktracker:
    def test_restores_after_drop(self):
        bt = Backtracker(threshold=0.15)
        for e in range(5):
            assert bt.maybe_backtrack(e, 0.8, {"e": e}) is None
        snap = bt.maybe_backtrack(5, 0.5, {"e": 5})
        assert snap is not None and snap.satisfaction == 0.8

    def test_prefers_best_recorded(self):
        bt = Backtracker(threshold=0.15)
        for e, s in enumerate([0.7, 0.9, 0.8, 0.8, 0.8]):
            bt.maybe_backtrack(e, s, {"e": e})
        assert bt.maybe_backtrack(5, 0.4, {}).state == {"e": 1}

    def test_monotone_never_restores(self):
        bt = Backtracker()
        assert all(bt.maybe_backtrack(e, s, {}) is None for e, s in enumerate(np.linspace(0, 1, 60)))

    def test_disabled(self):
        bt = Backtracker(enabled=False)
        for e in range(5):
            bt.maybe_backtrack(e, 0.9, {})
        assert bt.maybe_backtrack(5, 0.0, {}) is None
        assert len(bt.buffer) == 0

    @given(st.lists(st.floats(0, 1), max_size=200))
    def test_buffer_never_exceeds_capacity(self, sats):
        bt = Backtracker()
        for e, s in enumerate(sats):
            bt.maybe_backtrack(e, s, {})
            assert len(bt.buffer) <= 20
