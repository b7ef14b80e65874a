import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ltngan import autodiff as ad
from ltngan import training as T
from ltngan.neural import Adam

LOGIC_FIELDS = {
    "variant",
    "use_logic",
    "lambda_kind",
    "lambda_start",
    "lambda_end",
    "lambda_ramp",
    "backtracking",
}


def tiny(dataset="gaussian", variant="full_ltn_gan", **kw):
    base = dict(epochs=2, n_data=64, batch_size=16, eval_every=1, eval_samples=64, seed=3)
    return T.default_config(dataset, variant, **{**base, **kw})


class TestLosses:
    def test_perfect_discriminator(self):
        loss, _, _ = T.discriminator_loss(ad.Node(np.ones(8)), ad.Node(np.zeros(8)), 1.0, 0.0)
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_uninformed_discriminator(self):
        loss, _, _ = T.discriminator_loss(ad.Node(np.full(8, 0.5)), ad.Node(np.full(8, 0.5)), 1.0, 0.0)
        assert loss.item() == pytest.approx(2 * math.log(2), abs=1e-5)
        assert loss.item() == pytest.approx(1.38629, abs=1e-5)

    def test_smoothed_real_term(self):
        _, real, _ = T.discriminator_loss(ad.Node(np.full(4, 0.9)), ad.Node(np.full(4, 0.1)), 0.9, 0.1)
        assert real.item() == pytest.approx(0.32508, abs=1e-5)

    def test_weighted_objective(self):
        assert T.generator_objective(1.0, 0.5, 2.0, 0.6, 0.1, 0.3).item() == pytest.approx(1.25)

    def test_zero_weights_reduce_to_adversarial(self):
        assert T.generator_objective(0.7, 0.9, 3.0, 1.0, 0.0, 0.0).item() == 0.7

    def test_satisfied_logic_adds_nothing(self):
        assert T.generator_objective(0.7, 0.0, None, 1.0, 5.0, 0.0).item() == pytest.approx(0.7)


class TestAccuracy:
    @pytest.mark.parametrize(
        "real, fake, expected",
        [(np.ones(4), np.zeros(4), 1.0), (np.full(4, 0.5), np.full(4, 0.5), 0.5), (np.zeros(4), np.ones(4), 0.0)],
    )
    def test_examples(self, real, fake, expected):
        assert T.discriminator_accuracy(real, fake) == expected

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.lists(st.floats(0, 1), min_size=1, max_size=20))
    def test_bounded(self, real, fake):
        assert 0.0 <= T.discriminator_accuracy(np.array(real), np.array(fake)) <= 1.0


class TestConfig:
    def test_roundtrip(self):
        for ds in T.DATASETS:
            cfg = T.default_config(ds)
            assert T.TrainConfig.from_json(cfg.to_json()) == cfg

    def test_unknown_key_lists_valid_keys(self):
        with pytest.raises(T.ConfigError, match="valid keys") as info:
            T.TrainConfig.from_dict({"epochz": 3})
        assert "epochs" in str(info.value)

    @pytest.mark.parametrize(
        "kw", [dict(epochs=0), dict(batch_size=0), dict(alpha=-1.0), dict(n_data=4), dict(ring_head="square")]
    )
    def test_invalid(self, kw):
        with pytest.raises(T.ConfigError):
            T.default_config("ring", **kw)

    def test_unknown_dataset_and_variant(self):
        with pytest.raises(T.ConfigError, match="gaussian"):
            T.default_config("cifar")
        with pytest.raises(T.ConfigError, match="full_ltn_gan"):
            T.default_config("grid", "nope")

    @pytest.mark.parametrize("dataset", T.DATASETS)
    def test_baseline_differs_only_in_logic_fields(self, dataset):
        base = T.default_config(dataset, "baseline_gan").to_dict()
        full = T.default_config(dataset, "full_ltn_gan").to_dict()
        assert {k for k in base if base[k] != full[k]} <= LOGIC_FIELDS

    def test_dataset_defaults(self):
        assert [T.default_config(d).epochs for d in ("gaussian", "grid", "ring")] == [100, 120, 150]
        m = T.default_config("mnist")
        assert (m.max_steps, m.batch_size, m.alpha, m.beta, m.lambda_start) == (5, 64, 0.6, 0.3, 0.1)
        assert (m.real_label, m.fake_label) == (1.0, 0.0)
        g = T.default_config("gaussian")
        assert (g.real_label, g.fake_label, g.lr) == (0.9, 0.1, 0.001)
        assert g.g_hidden == (128, 128) and g.d_hidden == (128, 128)

    def test_lambda_presets(self):
        cfg = T.apply_lambda_preset(T.default_config("ring"), "ramp_strong")
        assert (cfg.lambda_start, cfg.lambda_end) == (2.0, 10.0)
        with pytest.raises(T.ConfigError):
            T.apply_lambda_preset(cfg, "ramp_gentle_typo")

    def test_coerce(self):
        assert T.coerce_value("epochs", "3") == 3
        assert T.coerce_value("use_logic", "false") is False
        assert T.coerce_value("g_hidden", "8,8") == (8, 8)
        with pytest.raises(T.ConfigError):
            T.coerce_value("epochs", "many")


class TestGenerator:
    @pytest.mark.parametrize("dataset", ["gaussian", "grid", "ring"])
    def test_output_shape(self, dataset):
        cfg = T.default_config(dataset)
        gen = T.Generator(cfg, np.random.default_rng(0))
        z, _ = gen.sample_latent(16, np.random.default_rng(1))
        assert gen(z, train=True, rng=np.random.default_rng(2)).shape == (16, 2)

    def test_ring_head_stays_in_the_annulus(self):
        cfg = T.default_config("ring")
        gen = T.Generator(cfg, np.random.default_rng(0))
        z = np.random.default_rng(1).normal(size=(500, 2)) * 10
        r = np.linalg.norm(gen(z, train=False).data, axis=1)
        geo = cfg.ring_geometry()
        assert r.min() >= geo.r_inner - geo.band - 1e-12 and r.max() <= geo.r_outer + geo.band + 1e-12

    def test_polar_head_option(self):
        cfg = T.default_config("ring", ring_head="polar")
        gen = T.Generator(cfg, np.random.default_rng(0))
        r = np.linalg.norm(gen(np.random.default_rng(1).normal(size=(200, 2)), train=False).data, axis=1)
        assert r.max() <= cfg.ring_r_max

    def test_grid_head_near_centers(self):
        gen = T.Generator(T.default_config("grid"), np.random.default_rng(0))
        x = gen(np.random.default_rng(1).normal(size=(100, 2)), train=False).data
        assert np.all(np.abs(x) <= 0.5 + 0.02 + 1e-12)

    def test_template_fade(self):
        gen = T.Generator(T.default_config("mnist", latent_dim=4, g_hidden=(8,), d_hidden=(8,)), np.random.default_rng(0))
        assert gen.template_weight(0) == 1.0
        assert gen.template_weight(10) == 0.5
        assert gen.template_weight(40) == 0.0

    @pytest.mark.parametrize("dataset", ["gaussian", "grid", "ring"])
    def test_full_objective_gradient(self, dataset):
        cfg = T.default_config(dataset, g_dropout=0.0, d_dropout=0.0, g_hidden=(8, 8), d_hidden=(8,))
        rng = np.random.default_rng(4)
        gen, disc = T.Generator(cfg, rng), T.Discriminator(cfg, rng)
        logic = T.build_logic(cfg, rng)
        z, _ = gen.sample_latent(16, rng, train=False)

        def loss():
            fake = gen(z, train=False)
            d, _ = disc(fake, train=False)
            adv = ad.bce_loss(d, np.full(16, cfg.real_label))
            return T.generator_objective(adv, logic.evaluate(fake).loss, None, cfg.alpha, 0.5, 0.0)

        assert ad.finite_difference_check(loss, gen.parameters()) < 1e-4


class TestSteps:
    def setup(self, dataset="grid"):
        cfg = tiny(dataset)
        rngs = T.make_streams(0)
        gen, disc = T.Generator(cfg, rngs["init_g"]), T.Discriminator(cfg, rngs["init_d"])
        logic = T.build_logic(cfg, rngs["predicate"])
        return cfg, rngs, gen, disc, logic

    def test_generator_step_leaves_discriminator_and_predicates_alone(self):
        cfg, rngs, gen, disc, logic = self.setup()
        before = [p.data.copy() for p in disc.parameters() + logic.parameters()]
        opt = Adam(gen.parameters(), lr=cfg.lr)
        T.generator_step(gen, disc, opt, 16, cfg, 1.0, logic, rngs["latent"], rngs["dropout"])
        for p, b in zip(disc.parameters() + logic.parameters(), before):
            assert not np.any(p.grad)
            np.testing.assert_array_equal(p.data, b)
        assert all(p.requires_grad for p in disc.parameters())

    def test_discriminator_step_leaves_generator_alone(self):
        cfg, rngs, gen, disc, _ = self.setup()
        before = [p.data.copy() for p in gen.parameters()]
        real = np.random.default_rng(0).normal(size=(16, 2))
        T.discriminator_step(gen, disc, Adam(disc.parameters()), real, cfg, rngs["latent"], rngs["dropout"])
        for p, b in zip(gen.parameters(), before):
            assert not np.any(p.grad)
            np.testing.assert_array_equal(p.data, b)

    def test_non_finite_loss_aborts(self):
        cfg, rngs, gen, disc, _ = self.setup("gaussian")
        real = np.full((16, 2), np.nan)
        with pytest.raises(T.TrainingError, match="non-finite"):
            T.discriminator_step(gen, disc, Adam(disc.parameters()), real, cfg, rngs["latent"], rngs["dropout"])


class TestTrain:
    @pytest.mark.parametrize("dataset", ["gaussian", "grid", "ring"])
    def test_smoke(self, dataset, tmp_path):
        result = T.train(tiny(dataset, epochs=1), tmp_path)
        rows = T.read_runlog(tmp_path / "runlog.csv")
        assert len(rows) == 1
        assert all(rows[0][c] != "" for c in ("loss_g", "loss_d", "s_logic", "lambda"))
        for name in ("manifest.json", "metrics.csv", "samples_epoch1.csv", "generator.ckpt"):
            assert (tmp_path / name).exists()
        rec = result.records[0]
        assert 0.0 <= rec.s_logic <= 1.0
        assert rec.loss_logic == pytest.approx(1.0 - rec.s_logic, abs=1e-12)

    def test_baseline_logs_zero_satisfaction(self):
        result = T.train(tiny("gaussian", "baseline_gan", epochs=1))
        assert result.records[0].s_logic == 0.0 and result.logic is None

    def test_determinism(self, tmp_path):
        cfg = tiny("ring")
        T.train(cfg, tmp_path / "a")
        T.train(cfg, tmp_path / "b")
        for name in ("runlog.csv", "metrics.csv", "samples_epoch2.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_trajectory(self):
        a = T.train(tiny("gaussian", seed=1)).records[-1].loss_g
        b = T.train(tiny("gaussian", seed=2)).records[-1].loss_g
        assert a != b

    def test_ring_logs_band_and_weights(self):
        result = T.train(tiny("ring", epochs=3))
        bands = [r.band for r in result.records]
        assert bands[0] == pytest.approx(0.30) and bands[-1] == pytest.approx(0.15)
        assert set(result.records[-1].rule_weights) == set(result.logic.kb.names)

    def test_max_steps(self):
        result = T.train(tiny("gaussian", epochs=5, max_steps=3))
        assert len(result.records) == 1

    def test_mnist_smoke(self, mnist_dir, tmp_path):
        cfg = T.default_config("mnist", g_hidden=(32,), d_hidden=(32,), latent_dim=8, classifier_epochs=1)
        result = T.train(cfg, tmp_path)
        assert len(result.records) == 1
        assert 0.0 <= result.records[0].s_logic <= 1.0
        assert 0.0 <= result.evaluations[-1]["digit_recognition"] <= 1.0
        assert (tmp_path / "samples_epoch1.pgm").exists()
