import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ltngan import metrics as M
from ltngan.datasets import GRID_CENTERS, RingGeometry
from ltngan.neural import Mlp, MlpSpec

# (mean_error, std_error, printed statistical quality) for the five LTN rows
TABLE2_ROWS = [
    ("full_ltn_gan", 0.431, 0.719, 0.465),
    ("ltn_no_constraints", 0.327, 0.670, 0.501),
    ("ltn_high_constraint", 0.030, 0.673, 0.587),
    ("ltn_fast_scheduling", 0.043, 0.527, 0.637),
    ("ltn_slow_scheduling", 0.946, 0.508, 0.408),
]


def on_radius(r, n):
    theta = np.linspace(-np.pi, np.pi, n, endpoint=False)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


class TestGaussian:
    @pytest.mark.parametrize("name, mean_error, std_error, expected", TABLE2_ROWS)
    def test_table_rows(self, name, mean_error, std_error, expected):
        assert M.statistical_quality(mean_error, std_error) == pytest.approx(expected, abs=1e-3)

    def test_exact_moments(self):
        x = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
        out = M.gaussian_metrics(x)
        assert out["statistical_quality"] == pytest.approx(1.0)
        assert 0 <= out["adherence_proxy"] <= 1

    @given(st.floats(0, 10), st.floats(0, 10), st.floats(1e-3, 1))
    def test_strictly_decreasing(self, m, s, bump):
        q = M.statistical_quality(m, s)
        assert M.statistical_quality(m + bump, s) < q
        assert M.statistical_quality(m, s + bump) < q

    def test_proxy_noted_in_report(self):
        report = M.dataset_metrics("gaussian", np.random.default_rng(0).normal(size=(50, 2)))
        assert any("adherence_proxy" in n for n in report.notes)
        assert "statistical_quality" in report.table()


class TestGrid:
    def test_all_on_centers(self):
        out = M.grid_metrics(np.repeat(GRID_CENTERS, 250, axis=0))
        assert out["grid_cluster"] == 1.0 and out["in_targets"] == 1000 and out["coverage"] == 1.0

    def test_one_cell(self):
        assert M.grid_metrics(np.repeat(GRID_CENTERS[:1], 10, axis=0))["coverage"] == 0.25

    @pytest.mark.parametrize("hits, cluster", [(607, 0.607), (1000, 1.0)])
    def test_ratio_identity(self, hits, cluster):
        far = np.full((1000 - hits, 2), 5.0)
        x = np.vstack([np.repeat(GRID_CENTERS, hits // 4 + 1, axis=0)[:hits], far])
        out = M.grid_metrics(x)
        assert out["in_targets"] == hits
        assert out["grid_cluster"] == pytest.approx(cluster, abs=1e-12)

    @given(st.integers(2, 60), st.integers(0, 2**32 - 1))
    def test_identity_random(self, n, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, size=(n, 2))
        out = M.grid_metrics(x, tolerance=0.3)
        assert out["in_targets"] / n == pytest.approx(out["grid_cluster"], abs=1e-12)

    def test_bad_tolerance(self):
        with pytest.raises(ValueError):
            M.grid_metrics(GRID_CENTERS, tolerance=0)


class TestRing:
    @pytest.mark.parametrize("n_in, n_out, expected", [(291, 188, 0.785), (265, 217, 0.900)])
    def test_table_balance(self, n_in, n_out, expected):
        assert round(M.ring_balance(n_in, n_out), 3) == expected
        x = np.vstack([on_radius(1.0, n_in), on_radius(2.0, n_out)])
        assert round(M.ring_metrics(x)["balance"], 3) == expected

    @given(st.integers(1, 10_000))
    def test_balance_extremes(self, n):
        assert M.ring_balance(n, n) == 1.0
        assert M.ring_balance(n, 0) == 0.0

    def test_all_dead_zone(self):
        out = M.ring_metrics(on_radius(1.5, 40), RingGeometry(band=0.15))
        assert out["ring_adherence"] == 0 and out["dead_zone_avoidance"] == 0

    def test_fractions_bounded(self):
        x = np.random.default_rng(1).uniform(-3, 3, size=(500, 2))
        out = M.ring_metrics(x)
        for k in ("ring_adherence", "balance", "dead_zone_avoidance"):
            assert 0.0 <= out[k] <= 1.0 and isinstance(out[k], float)


class TestDiversity:
    def test_identical(self):
        assert M.diversity(np.ones((5, 2))) == 0.0

    def test_two_points(self):
        assert M.diversity(np.array([[0.0, 0.0], [3.0, 4.0]])) == pytest.approx(5.0)

    def test_unit_square(self):
        x = np.random.default_rng(2).uniform(size=(10_000, 2))
        assert M.diversity(x) == pytest.approx(0.5214, abs=0.01)

    def test_deterministic(self):
        x = np.random.default_rng(3).uniform(size=(3000, 2))
        assert M.diversity(x, max_pairs=10_000) == M.diversity(x, max_pairs=10_000)


class TestMnist:
    def test_templates_self_correlation(self):
        t = np.random.default_rng(4).uniform(size=(10, 784))
        assert M.template_dependence(t, np.arange(10), t) == pytest.approx(1.0)

    def test_black_images_have_no_coverage(self):
        assert M.pixel_coverage(np.zeros((20, 784))) == 0.0

    def test_recognition_matches_direct_evaluation(self):
        rng = np.random.default_rng(5)
        clf = Mlp(MlpSpec((784, 16, 10), output_activation="softmax"), rng)
        x = rng.uniform(size=(30, 784))
        y = rng.integers(0, 10, size=30)
        direct = np.mean(np.argmax(clf(x, train=False).data, axis=1) == y)
        assert M.classifier_accuracy(clf, x, y) == direct
        out = M.mnist_metrics(x, y, clf, np.zeros((10, 784)))
        assert 0 <= out["quality"] <= out["digit_recognition"]

    def test_unknown_dataset(self):
        with pytest.raises(ValueError):
            M.dataset_metrics("cifar", np.zeros((2, 2)))
