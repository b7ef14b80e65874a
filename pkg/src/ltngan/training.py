"""GAN training with a fuzzy-logic penalty on the generator.

Per mini-batch: one discriminator update on detached fakes, then one generator
update on a fresh latent batch with

    L_G = alpha * L_adv + lambda(e) * (1 - S_logic) + beta * L_aux

followed by one calibration step for any learned predicates.

Run log columns (one row per epoch, ``epoch`` counts completed epochs):

    epoch, loss_g, loss_g_adv, loss_d, d_accuracy, s_logic, loss_logic,
    lambda, aux_accuracy, backtracked, band, sat:<rule>..., weight:<rule>...

``aux_accuracy`` and ``band`` are blank where they do not apply.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import autodiff as ad
from . import metrics as M
from . import predicates as P
from .autodiff import Node
from .datasets import GRID_CENTERS, RingGeometry, class_templates, load_mnist, sample_real, write_pgm_montage, write_points_csv
from .neural import Adam, Mlp, MlpSpec, polar_to_cartesian, save_checkpoint, scaled_polar, set_trainable
from .scheduling import AdaptiveWeights, Backtracker, LambdaSchedule, band_at

DATASETS = ("gaussian", "grid", "ring", "mnist")
STREAMS = ("init_g", "init_d", "data", "latent", "dropout", "predicate", "eval")
N_CLASSES = 10


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

LAMBDA_PRESETS: dict[str, dict[str, tuple[str, float, float, int]]] = {
    "gaussian": {"ramp": ("linear_ramp", 0.05, 0.30, 80)},
    "grid": {
        "ramp_long": ("linear_ramp", 0.5, 2.0, 100),
        "ramp_short": ("linear_ramp", 0.1, 0.5, 50),
        "fixed": ("constant", 0.5, 0.5, 0),
    },
    "ring": {
        "ramp_gentle": ("linear_ramp", 0.01, 0.2, 100),
        "ramp_strong": ("linear_ramp", 2.0, 10.0, 100),
        "ramp_short": ("linear_ramp", 0.1, 0.5, 50),
    },
    "mnist": {
        "fixed": ("constant", 0.1, 0.1, 0),
        "ramp_short": ("linear_ramp", 0.05, 0.25, 60),
        "ramp_long": ("linear_ramp", 0.1, 0.5, 100),
    },
}


@dataclass
class TrainConfig:
    dataset: str = "gaussian"
    variant: str = "full_ltn_gan"
    epochs: int = 100
    batch_size: int = 32
    n_data: int = 1024
    max_steps: int = 0  # 0 means no cap
    seed: int = 0
    lr: float = 0.001
    alpha: float = 1.0
    beta: float = 0.0
    lambda_kind: str = "linear_ramp"
    lambda_start: float = 0.05
    lambda_end: float = 0.30
    lambda_ramp: int = 80
    real_label: float = 0.9
    fake_label: float = 0.1
    use_logic: bool = True
    forall_p: float = 2.0
    exists_p: float = P.MAX_EXISTS_P
    predicate_lr: float = 0.005
    adaptive_weights: bool = False
    hierarchical_weights: bool = True
    simple_constraints: bool = False
    band_tightening: bool = True
    band_start: float = 0.30
    band_end: float = 0.15
    backtracking: bool = False
    backtrack_threshold: float = 0.15
    latent_dim: int = 2
    latent_noise: float = 0.1
    g_hidden: tuple[int, ...] = (128, 128)
    d_hidden: tuple[int, ...] = (128, 128)
    g_dropout: float = 0.1
    d_dropout: float = 0.3
    ring_r_max: float = 3.0
    ring_head: str = "annular"
    grid_perturbation: float = 0.02
    use_templates: bool = True
    template_fade_epochs: int = 20
    classifier_epochs: int = 3
    eval_every: int = 10
    eval_samples: int = 1000
    grid_tolerance: float = M.GRID_TOLERANCE
    data_dir: str = ""

    def __post_init__(self):
        self.g_hidden = tuple(int(h) for h in self.g_hidden)
        self.d_hidden = tuple(int(h) for h in self.d_hidden)

    def validate(self) -> "TrainConfig":
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; choose from {list(DATASETS)}")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be nonnegative")
        if self.dataset != "mnist" and self.n_data < self.batch_size:
            raise ConfigError("n_data must be at least batch_size")
        if self.ring_head not in ("annular", "polar"):
            raise ConfigError(f"ring_head must be 'annular' or 'polar', got {self.ring_head!r}")
        try:
            self.schedule()
            self.ring_geometry()
        except ValueError as err:
            raise ConfigError(str(err)) from None
        return self

    def schedule(self) -> LambdaSchedule:
        return LambdaSchedule(self.lambda_kind, self.lambda_start, self.lambda_end, self.lambda_ramp)

    def ring_geometry(self, band: float | None = None) -> RingGeometry:
        return RingGeometry(1.0, 2.0, self.band_end if band is None else band)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["g_hidden"] = list(self.g_hidden)
        out["d_hidden"] = list(self.d_hidden)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        unknown = set(data) - set(config_keys())
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}; valid keys: {config_keys()}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def config_keys() -> list[str]:
    return [f.name for f in fields(TrainConfig)]


def coerce_value(key: str, text: str) -> Any:
    """Parse a ``key=value`` override into the field's type."""
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    if key not in kinds:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {config_keys()}")
    kind = str(kinds[key])
    try:
        if kind == "bool":
            if text.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("1", "true", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind.startswith("tuple"):
            return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


DATASET_DEFAULTS: dict[str, dict[str, Any]] = {
    "gaussian": dict(epochs=100),
    "grid": dict(
        epochs=120,
        lambda_start=0.5,
        lambda_end=2.0,
        lambda_ramp=100,
        g_dropout=0.0,
    ),
    "ring": dict(
        epochs=150,
        lambda_start=0.01,
        lambda_end=0.2,
        lambda_ramp=100,
        adaptive_weights=True,
        backtracking=True,
    ),
    "mnist": dict(
        epochs=1,
        max_steps=5,
        batch_size=64,
        lambda_kind="constant",
        lambda_start=0.1,
        lambda_end=0.1,
        lambda_ramp=0,
        alpha=0.6,
        beta=0.3,
        real_label=1.0,
        fake_label=0.0,
        backtracking=True,
        latent_dim=100,
        latent_noise=0.0,
        g_hidden=(256, 512, 1024),
        d_hidden=(512, 256),
        g_dropout=0.0,
    ),
}


def _no_logic(c: TrainConfig) -> dict:
    return dict(use_logic=False, lambda_kind="constant", lambda_start=0.0, lambda_end=0.0, backtracking=False)


def _monitor_only(c: TrainConfig) -> dict:
    return dict(lambda_kind="constant", lambda_start=0.0, lambda_end=0.0)


def _scale_lambda(factor: float) -> Callable[[TrainConfig], dict]:
    return lambda c: dict(lambda_start=c.lambda_start * factor, lambda_end=c.lambda_end * factor)


_SHARED_2D = {
    "baseline_gan": _no_logic,
    "full_ltn_gan": lambda c: {},
    "ltn_no_constraints": _monitor_only,
    "ltn_high_constraint": lambda c: dict(lambda_end=c.lambda_end * 3.0),
    "ltn_fast_scheduling": lambda c: dict(lambda_ramp=max(1, c.lambda_ramp // 4)),
    "ltn_slow_scheduling": lambda c: dict(lambda_ramp=c.lambda_ramp * 2),
}

VARIANTS: dict[str, dict[str, Callable[[TrainConfig], dict]]] = {
    "gaussian": dict(_SHARED_2D),
    "grid": dict(_SHARED_2D),
    "ring": {
        "baseline_gan": _no_logic,
        "full_ltn_gan": lambda c: {},
        "no_constraints": _monitor_only,
        "no_hierarchical_weights": lambda c: dict(hierarchical_weights=False, adaptive_weights=False),
        "no_progressive_phases": lambda c: dict(
            band_tightening=False, lambda_kind="constant", lambda_start=c.lambda_end
        ),
        "simple_constraints": lambda c: dict(simple_constraints=True),
    },
    "mnist": {
        "baseline_gan": _no_logic,
        "full_ltn_gan": lambda c: {},
        "no_ltn_constraints": _monitor_only,
        "no_templates": lambda c: dict(use_templates=False),
        "weak_ltn": _scale_lambda(0.5),
        "strong_ltn": _scale_lambda(2.0),
    },
}

ALIASES = {"full_ltn": "full_ltn_gan", "baseline": "baseline_gan", "ltn": "full_ltn_gan"}


def resolve_variant(dataset: str, variant: str) -> str:
    if dataset not in VARIANTS:
        raise ConfigError(f"unknown dataset {dataset!r}; choose from {list(DATASETS)}")
    name = ALIASES.get(variant, variant)
    if name not in VARIANTS[dataset]:
        raise ConfigError(f"unknown variant {variant!r} for {dataset}; choose from {list(VARIANTS[dataset])}")
    return name


def default_config(dataset: str = "gaussian", variant: str = "full_ltn_gan", **overrides) -> TrainConfig:
    """Dataset defaults, then the variant's delta, then explicit overrides."""
    name = resolve_variant(dataset, variant)
    cfg = TrainConfig(dataset=dataset, variant=name, **DATASET_DEFAULTS[dataset])
    delta = VARIANTS[dataset][name](cfg)
    cfg = TrainConfig(**{**cfg.to_dict(), **delta, **overrides})
    return cfg.validate()


def apply_lambda_preset(cfg: TrainConfig, preset: str) -> TrainConfig:
    table = LAMBDA_PRESETS[cfg.dataset]
    if preset not in table:
        raise ConfigError(f"unknown lambda preset {preset!r} for {cfg.dataset}; choose from {list(table)}")
    kind, start, end, ramp = table[preset]
    return TrainConfig(
        **{**cfg.to_dict(), "lambda_kind": kind, "lambda_start": start, "lambda_end": end, "lambda_ramp": ramp}
    )


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


def one_hot(labels: np.ndarray, n: int = N_CLASSES) -> np.ndarray:
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), labels] = 1.0
    return out


class Generator:
    """Dataset-specific generator: MLP body plus an output head.

    Heads: linear (Gaussian), cell selector plus bounded offset (Grid),
    ring selector plus bounded radial offset or tanh-scaled polar coordinates (Ring), sigmoid image with an optional
    class-template blend (MNIST).
    """

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator, templates: np.ndarray | None = None):
        self.cfg = cfg
        self.dataset = cfg.dataset
        self.templates = templates
        if self.dataset == "mnist":
            in_dim = cfg.latent_dim + N_CLASSES
            spec = MlpSpec((in_dim, *cfg.g_hidden, 784), output_activation="sigmoid", use_batchnorm=True)
            self.body = Mlp(spec, rng)
            self.blend = Mlp(MlpSpec((in_dim, 1)), rng)
        else:
            out = {"grid": 4 + 2, "ring": 4 if cfg.ring_head == "annular" else 2}.get(self.dataset, 2)
            spec = MlpSpec((cfg.latent_dim, *cfg.g_hidden, out), dropout_rate=cfg.g_dropout)
            self.body = Mlp(spec, rng)
            self.blend = None

    def sample_latent(self, n: int, rng: np.random.Generator, train: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
        z = rng.standard_normal((n, self.cfg.latent_dim))
        if self.dataset == "mnist":
            labels = rng.integers(0, N_CLASSES, size=n)
            return np.hstack([z, one_hot(labels)]), labels
        if train and self.cfg.latent_noise > 0:
            z = z + self.cfg.latent_noise * rng.standard_normal(z.shape)
        return z, None

    def template_weight(self, epoch: int) -> float:
        if not self.cfg.use_templates or self.cfg.template_fade_epochs <= 0:
            return 0.0
        return max(0.0, 1.0 - epoch / self.cfg.template_fade_epochs)

    def __call__(self, z, labels=None, train: bool = True, rng: np.random.Generator | None = None, epoch: int = 0) -> Node:
        raw = self.body(z, train=train, rng=rng)
        if self.dataset == "gaussian":
            return raw
        if self.dataset == "ring":
            if self.cfg.ring_head == "polar":
                return scaled_polar(raw, self.cfg.ring_r_max)
            return self._annular(raw)
        if self.dataset == "grid":
            select = ad.softmax(raw[:, :4], axis=1)
            offset = ad.tanh(raw[:, 4:]) * self.cfg.grid_perturbation
            return select @ GRID_CENTERS + offset
        fade = self.template_weight(epoch)
        if fade == 0.0 or self.templates is None:
            return raw
        w = (0.1 + 0.1 * ad.sigmoid(self.blend(z, train=train))) * fade
        return raw * (1.0 - w) + w * self.templates[labels]

    def _annular(self, raw: Node) -> Node:
        # soft choice between the two ring radii plus a bounded radial offset
        geo = self.cfg.ring_geometry(self.cfg.band_end)
        select = ad.softmax(raw[:, :2], axis=1)
        radius = select @ np.array([[geo.r_inner], [geo.r_outer]]) + ad.tanh(raw[:, 2:3]) * geo.band
        angle = ad.tanh(raw[:, 3:4]) * math.pi
        return polar_to_cartesian(ad.concat([radius, angle], axis=1))

    def parameters(self) -> list[Node]:
        out = self.body.parameters()
        if self.blend is not None:
            out += self.blend.parameters()
        return out

    def state(self) -> dict[str, np.ndarray]:
        out = {f"body/{k}": v for k, v in self.body.state().items()}
        if self.blend is not None:
            out.update({f"blend/{k}": v for k, v in self.blend.state().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.body.load_state({k[5:]: v for k, v in state.items() if k.startswith("body/")})
        if self.blend is not None:
            self.blend.load_state({k[6:]: v for k, v in state.items() if k.startswith("blend/")})

    def specs(self) -> dict[str, MlpSpec]:
        out = {"body": self.body.spec}
        if self.blend is not None:
            out["blend"] = self.blend.spec
        return out


class Discriminator:
    """Sigmoid real/fake head; MNIST adds a softmax class head on the last hidden layer."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        in_dim = 784 if cfg.dataset == "mnist" else 2
        spec = MlpSpec((in_dim, *cfg.d_hidden, 1), output_activation="sigmoid", dropout_rate=cfg.d_dropout)
        self.net = Mlp(spec, rng)
        self.aux = None
        if cfg.dataset == "mnist":
            self.aux = Mlp(MlpSpec((cfg.d_hidden[-1], N_CLASSES), output_activation="softmax"), rng)

    def __call__(self, x, train: bool = True, rng: np.random.Generator | None = None) -> tuple[Node, Node | None]:
        h = self.net.hidden(x, train=train, rng=rng)
        prob = ad.reshape(self.net.head(h), (-1,))
        classes = self.aux(h, train=train) if self.aux is not None else None
        return prob, classes

    def parameters(self) -> list[Node]:
        out = self.net.parameters()
        if self.aux is not None:
            out += self.aux.parameters()
        return out

    def state(self) -> dict[str, np.ndarray]:
        out = {f"net/{k}": v for k, v in self.net.state().items()}
        if self.aux is not None:
            out.update({f"aux/{k}": v for k, v in self.aux.state().items()})
        return out


def train_classifier(
    data, epochs: int, rng: np.random.Generator, batch_size: int = 64, lr: float = 0.001
) -> Mlp:
    """Fit the [784, 128, 10] softmax digit classifier used as a frozen predicate."""
    net = Mlp(MlpSpec((784, 128, N_CLASSES), output_activation="softmax"), rng)
    opt = Adam(net.parameters(), lr=lr, beta1=0.9)
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            idx = order[start : start + batch_size]
            opt.zero_grad()
            ad.nll_from_probs(net(data.images[idx]), data.labels[idx]).backward()
            opt.step()
    set_trainable(net.parameters(), False)
    return net


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------


def discriminator_accuracy(d_real, d_fake) -> float:
    """Mean of real and fake accuracies; ``p >= 0.5`` is a "real" verdict."""
    d_real = np.asarray(d_real.data if isinstance(d_real, Node) else d_real)
    d_fake = np.asarray(d_fake.data if isinstance(d_fake, Node) else d_fake)
    return 0.5 * (float(np.mean(d_real >= 0.5)) + float(np.mean(d_fake < 0.5)))


def discriminator_loss(d_real, d_fake, real_label: float, fake_label: float) -> tuple[Node, Node, Node]:
    """Plain sum of the real and fake BCE terms."""
    loss_real = ad.bce_loss(d_real, np.full(d_real.shape, real_label))
    loss_fake = ad.bce_loss(d_fake, np.full(d_fake.shape, fake_label))
    return loss_real + loss_fake, loss_real, loss_fake


def generator_objective(adv, logic, aux, alpha: float, lam: float, beta: float) -> Node:
    """``alpha * adv + lam * logic + beta * aux``; zero-weighted terms are left out of the graph."""
    total = ad.as_node(adv) * alpha
    if lam != 0.0 and logic is not None:
        total = total + ad.as_node(logic) * lam
    if beta != 0.0 and aux is not None:
        total = total + ad.as_node(aux) * beta
    return total


def _finite(name: str, value: float) -> float:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {name}: {value}")
    return value


@dataclass
class DStep:
    loss_d: float
    loss_real: float
    loss_fake: float
    accuracy: float


@dataclass
class GStep:
    loss_g: float
    loss_adv: float
    report: Any  # SatisfactionReport | None
    aux_accuracy: float
    fake: np.ndarray


def discriminator_step(
    gen: Generator,
    disc: Discriminator,
    opt: Adam,
    real: np.ndarray,
    cfg: TrainConfig,
    latent_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
    epoch: int = 0,
    real_labels: np.ndarray | None = None,
) -> DStep:
    z, labels = gen.sample_latent(len(real), latent_rng)
    fake = gen(z, labels, train=True, rng=dropout_rng, epoch=epoch).detach()
    opt.zero_grad()
    d_real, c_real = disc(real, train=True, rng=dropout_rng)
    d_fake, _ = disc(fake, train=True, rng=dropout_rng)
    loss, loss_real, loss_fake = discriminator_loss(d_real, d_fake, cfg.real_label, cfg.fake_label)
    objective = loss
    if c_real is not None and real_labels is not None:
        objective = loss + ad.nll_from_probs(c_real, real_labels)
    _finite("discriminator loss", objective.item())
    objective.backward()
    opt.step()
    return DStep(loss.item(), loss_real.item(), loss_fake.item(), discriminator_accuracy(d_real, d_fake))


def generator_step(
    gen: Generator,
    disc: Discriminator,
    opt: Adam,
    n: int,
    cfg: TrainConfig,
    lam: float,
    logic: P.LogicModule | None,
    latent_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
    epoch: int = 0,
) -> GStep:
    z, labels = gen.sample_latent(n, latent_rng)
    frozen = disc.parameters() + (logic.parameters() if logic is not None else [])
    set_trainable(frozen, False)
    try:
        opt.zero_grad()
        fake = gen(z, labels, train=True, rng=dropout_rng, epoch=epoch)
        d_fake, classes = disc(fake, train=True, rng=dropout_rng)
        adv = ad.bce_loss(d_fake, np.full(d_fake.shape, cfg.real_label))
        report = logic.evaluate(fake) if logic is not None else None
        aux, aux_acc = None, float("nan")
        if classes is not None:
            aux = ad.nll_from_probs(classes, labels)
            aux_acc = float(np.mean(classes.data.argmax(axis=1) == labels))
        total = generator_objective(adv, report.loss if report else None, aux, cfg.alpha, lam, cfg.beta)
        _finite("generator loss", total.item())
        total.backward()
        opt.step()
    finally:
        set_trainable(frozen, True)
    return GStep(total.item(), adv.item(), report, aux_acc, fake.data)


# ---------------------------------------------------------------------------
# records and logs
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss_g: float
    loss_g_adv: float
    loss_d: float
    d_accuracy: float
    s_logic: float
    loss_logic: float
    lam: float
    aux_accuracy: float = float("nan")
    backtracked: int = 0
    band: float = float("nan")
    rule_sats: dict[str, float] = field(default_factory=dict)
    rule_weights: dict[str, float] = field(default_factory=dict)


BASE_COLUMNS = [
    "epoch",
    "loss_g",
    "loss_g_adv",
    "loss_d",
    "d_accuracy",
    "s_logic",
    "loss_logic",
    "lambda",
    "aux_accuracy",
    "backtracked",
    "band",
]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


class RunLog:
    """Epoch records streamed to CSV as they arrive."""

    def __init__(self, path: str | Path | None, rule_names: list[str]):
        self.rule_names = list(rule_names)
        self.columns = BASE_COLUMNS + [f"sat:{r}" for r in rule_names] + [f"weight:{r}" for r in rule_names]
        self.records: list[EpochRecord] = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._fh.write(",".join(self.columns) + "\n")
            self._fh.flush()

    def row(self, rec: EpochRecord) -> list[str]:
        vals = [
            rec.epoch,
            rec.loss_g,
            rec.loss_g_adv,
            rec.loss_d,
            rec.d_accuracy,
            rec.s_logic,
            rec.loss_logic,
            rec.lam,
            rec.aux_accuracy,
            rec.backtracked,
            rec.band,
        ]
        vals += [rec.rule_sats[r] for r in self.rule_names]
        vals += [rec.rule_weights[r] for r in self.rule_names]
        return [_fmt(v) for v in vals]

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)
        if self._fh is not None:
            self._fh.write(",".join(self.row(rec)) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_runlog(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


@dataclass
class RunResult:
    config: TrainConfig
    records: list[EpochRecord]
    evaluations: list[dict[str, float]]
    generator: Generator
    discriminator: Discriminator
    logic: P.LogicModule | None
    out_dir: Path | None = None
    classifier: Mlp | None = None
    templates: np.ndarray | None = None


def build_logic(
    cfg: TrainConfig,
    rng: np.random.Generator,
    ring_state: P.RingState | None = None,
    classifier: Mlp | None = None,
) -> P.LogicModule | None:
    if not cfg.use_logic:
        return None
    if cfg.dataset == "gaussian":
        return P.gaussian_logic()
    if cfg.dataset == "grid":
        return P.grid_logic(rng, forall_p=cfg.forall_p, exists_p=cfg.exists_p, lr=cfg.predicate_lr)
    if cfg.dataset == "ring":
        return P.ring_logic(
            rng,
            ring_state or P.RingState(cfg.ring_geometry(cfg.band_start)),
            forall_p=cfg.forall_p,
            exists_p=cfg.exists_p,
            hierarchical=cfg.hierarchical_weights,
            simple=cfg.simple_constraints,
            adaptive=cfg.adaptive_weights,
            lr=cfg.predicate_lr,
            box=cfg.ring_r_max,
        )
    return P.mnist_logic(classifier, forall_p=cfg.forall_p)


def evaluate_generator(
    cfg: TrainConfig,
    gen: Generator,
    logic: P.LogicModule | None,
    rng: np.random.Generator,
    epoch: int = 0,
    classifier: Mlp | None = None,
    templates: np.ndarray | None = None,
) -> tuple[dict[str, float], np.ndarray, np.ndarray | None]:
    """Draw ``eval_samples`` points in eval mode and score them."""
    z, labels = gen.sample_latent(cfg.eval_samples, rng, train=False)
    samples = gen(z, labels, train=False, epoch=epoch).data
    out = {"s_logic": logic.evaluate(Node(samples)).value if logic is not None else 0.0}
    if cfg.dataset == "mnist":
        out["diversity"] = M.pixel_coverage(samples)
        if classifier is not None:
            out.update(M.mnist_metrics(samples, labels, classifier, templates))
        return out, samples, labels
    out["diversity"] = M.diversity(samples)
    if cfg.dataset == "gaussian":
        out.update(M.gaussian_metrics(samples))
    elif cfg.dataset == "grid":
        out.update(M.grid_metrics(samples, tolerance=cfg.grid_tolerance))
    else:
        out.update(M.ring_metrics(samples, cfg.ring_geometry()))
    return out, samples, None


def _write_metrics(path: Path, rows: list[dict[str, float]]) -> None:
    cols = list(rows[0])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def write_manifest(path: Path, cfg: TrainConfig) -> None:
    from . import __version__

    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "rng_streams": list(STREAMS),
        "version": __version__,
        "numpy": np.__version__,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def train(cfg: TrainConfig, out_dir: str | Path | None = None, progress: Callable[[EpochRecord], None] | None = None) -> RunResult:
    """Run one configuration end to end and return the trained models and logs."""
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.json", cfg)
    rngs = make_streams(cfg.seed)

    classifier = templates = real_labels = None
    if cfg.dataset == "mnist":
        mnist = load_mnist("train", cfg.data_dir or None)
        data, real_labels = mnist.images, mnist.labels
        templates = class_templates(mnist)
        classifier = train_classifier(mnist, cfg.classifier_epochs, rngs["predicate"])
    else:
        data = sample_real(cfg.dataset, cfg.n_data, rngs["data"], cfg.ring_geometry())

    ring_state = P.RingState(cfg.ring_geometry(cfg.band_start if cfg.band_tightening else cfg.band_end))
    gen = Generator(cfg, rngs["init_g"], templates)
    disc = Discriminator(cfg, rngs["init_d"])
    logic = build_logic(cfg, rngs["predicate"], ring_state, classifier)
    opt_g = Adam(gen.parameters(), lr=cfg.lr)
    opt_d = Adam(disc.parameters(), lr=cfg.lr)
    schedule = cfg.schedule()
    adaptive = AdaptiveWeights() if (logic is not None and cfg.adaptive_weights) else None
    if adaptive is not None:
        adaptive.w_min, adaptive.w_max = logic.kb.w_min, logic.kb.w_max
    backtracker = Backtracker(enabled=cfg.backtracking and logic is not None, threshold=cfg.backtrack_threshold)

    rule_names = logic.kb.names if logic is not None else []
    log = RunLog(out / "runlog.csv" if out else None, rule_names)
    evaluations: list[dict[str, float]] = []
    steps = 0
    try:
        for e in range(cfg.epochs):
            lam = schedule(e) if logic is not None else 0.0
            band = float("nan")
            if cfg.dataset == "ring":
                band = band_at(e, cfg.epochs, cfg.band_start, cfg.band_end) if cfg.band_tightening else cfg.band_end
                ring_state.geometry = cfg.ring_geometry(band)
            order = rngs["data"].permutation(len(data))
            acc: dict[str, list[float]] = {k: [] for k in ("g", "adv", "d", "dacc", "s", "aux")}
            sats: dict[str, list[float]] = {r: [] for r in rule_names}
            for start in range(0, len(data) - cfg.batch_size + 1, cfg.batch_size):
                if cfg.max_steps and steps >= cfg.max_steps:
                    break
                idx = order[start : start + cfg.batch_size]
                labels = real_labels[idx] if real_labels is not None else None
                d = discriminator_step(gen, disc, opt_d, data[idx], cfg, rngs["latent"], rngs["dropout"], e, labels)
                g = generator_step(gen, disc, opt_g, cfg.batch_size, cfg, lam, logic, rngs["latent"], rngs["dropout"], e)
                if logic is not None:
                    if logic.bank.learned:
                        pts = logic.bank.calibration_points(np.vstack([data[idx], g.fake]), rngs["predicate"])
                        logic.bank.calibrate(pts)
                    batch_sats = g.report.sats
                    for r in rule_names:
                        sats[r].append(batch_sats[r])
                    acc["s"].append(g.report.value)
                    if adaptive is not None and logic.kb.adaptive:
                        logic.kb.set_weights(adaptive.update([batch_sats[r] for r in rule_names], logic.kb.weights))
                acc["g"].append(g.loss_g)
                acc["adv"].append(g.loss_adv)
                acc["d"].append(d.loss_d)
                acc["dacc"].append(d.accuracy)
                acc["aux"].append(g.aux_accuracy)
                steps += 1
            if not acc["g"]:
                break
            s_logic = float(np.mean(acc["s"])) if acc["s"] else 0.0
            rec = EpochRecord(
                epoch=e + 1,
                loss_g=float(np.mean(acc["g"])),
                loss_g_adv=float(np.mean(acc["adv"])),
                loss_d=float(np.mean(acc["d"])),
                d_accuracy=float(np.mean(acc["dacc"])),
                s_logic=s_logic,
                loss_logic=1.0 - s_logic if logic is not None else 0.0,
                lam=lam,
                aux_accuracy=float(np.mean(acc["aux"])),
                band=band,
                rule_sats={r: float(np.mean(v)) for r, v in sats.items()},
                rule_weights=dict(zip(rule_names, logic.kb.weights.tolist())) if logic is not None else {},
            )
            for name in ("loss_g", "loss_g_adv", "loss_d"):
                _finite(f"{name} at epoch {e + 1}", getattr(rec, name))
            snap = backtracker.maybe_backtrack(e, s_logic, gen.state())
            if snap is not None:
                gen.load_state(snap.state)
                rec.backtracked = 1
            log.append(rec)
            if progress is not None:
                progress(rec)
            last = e == cfg.epochs - 1 or (cfg.max_steps and steps >= cfg.max_steps)
            if cfg.eval_every > 0 and ((e + 1) % cfg.eval_every == 0 or last):
                row, samples, labels = evaluate_generator(cfg, gen, logic, rngs["eval"], e, classifier, templates)
                evaluations.append({"epoch": e + 1, **row})
                if out is not None:
                    if cfg.dataset == "mnist":
                        write_pgm_montage(out / f"samples_epoch{e + 1}.pgm", samples[:100])
                    else:
                        write_points_csv(out / f"samples_epoch{e + 1}.csv", samples)
                    _write_metrics(out / "metrics.csv", evaluations)
            if last:
                break
    finally:
        log.close()

    if out is not None:
        meta = {"dataset": cfg.dataset, "variant": cfg.variant}
        save_checkpoint(out / "generator.ckpt", gen.state(), gen.specs(), len(log.records), meta=meta)
        save_checkpoint(out / "discriminator.ckpt", disc.state(), {"net": disc.net.spec}, len(log.records), meta=meta)
        if logic is not None and logic.bank.learned:
            save_checkpoint(out / "predicates.ckpt", logic.bank.state(), epoch=len(log.records), meta=meta)
        if classifier is not None:
            save_checkpoint(out / "classifier.ckpt", classifier.state(), {"net": classifier.spec}, meta=meta)
    return RunResult(cfg, log.records, evaluations, gen, disc, logic, out, classifier, templates)
