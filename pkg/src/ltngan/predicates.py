"""Predicates and knowledge bases for the four experiments.

Analytic predicates are plain autodiff expressions. Learned predicates are
small sigmoid MLPs over geometric features; they are fitted online against
analytic reference memberships (see :meth:`PredicateBank.calibrate`) so the
generator cannot push them towards trivially satisfied outputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .autodiff import Node
from .datasets import GRID_CENTERS, RingGeometry
from .logic import (
    Exists,
    ForAll,
    KnowledgeBase,
    Not,
    Or,
    Pred,
    Rule,
    SatisfactionReport,
    SoftEqual,
    conjunction,
    disjunction,
    kb_satisfaction,
)
from .neural import Adam, Mlp, MlpSpec

# max-like existential: 1 - M_p(1 - t) with p < 0 tends to max(t)
MAX_EXISTS_P = -2.0

PredicateFn = Callable[[Node], Node]


# ---------------------------------------------------------------------------
# Gaussian
# ---------------------------------------------------------------------------


def gaussian_in_range(x) -> Node:
    """``sigmoid(3 - ||x||_inf)`` per row."""
    x = ad.as_node(x)
    linf = ad.maximum(ad.abs_(x[:, 0]), ad.abs_(x[:, 1]))
    return ad.sigmoid(3.0 - linf)


def gaussian_shape(x) -> Node:
    """``exp(-0.5 (||x|| / 2.5)^2)`` per row."""
    x = ad.as_node(x)
    sq = ad.sum_(x * x, axis=1)
    return ad.exp(sq * (-0.5 / 2.5**2))


def build_gaussian_kb() -> KnowledgeBase:
    # arithmetic-mean aggregation (p = 1) for this rule
    rule = ForAll(Pred("InRange") & Pred("GaussianShape"), p=1.0)
    return KnowledgeBase([Rule("range_and_shape", rule, 1.0)])


# ---------------------------------------------------------------------------
# learned predicates
# ---------------------------------------------------------------------------


@dataclass
class LearnedPredicate:
    name: str
    features: Callable[[Node], Node]
    reference: PredicateFn
    net: Mlp

    def __call__(self, x) -> Node:
        out = self.net(self.features(ad.as_node(x)), train=True)
        return ad.reshape(out, (-1,))


def predicate_net(n_features: int, rng: np.random.Generator) -> Mlp:
    return Mlp(MlpSpec((n_features, 32, 32, 1), output_activation="sigmoid"), rng)


@dataclass
class PredicateBank:
    """Analytic and learned predicates evaluated on one batch.

    With ``ideal=True`` learned predicates are replaced by their reference
    memberships (useful for tests and diagnostics).
    """

    analytic: dict[str, PredicateFn] = field(default_factory=dict)
    learned: dict[str, LearnedPredicate] = field(default_factory=dict)
    lr: float = 0.005
    ideal: bool = False
    box: float = 1.5
    _opt: Adam | None = None

    def __post_init__(self):
        if self.learned:
            self._opt = Adam(self.parameters(), lr=self.lr)

    def names(self) -> list[str]:
        return sorted(set(self.analytic) | set(self.learned))

    def truths(self, x) -> dict[str, Node]:
        x = ad.as_node(x)
        out = {name: fn(x) for name, fn in self.analytic.items()}
        for name, pred in self.learned.items():
            out[name] = pred.reference(x) if self.ideal else pred(x)
        return out

    def parameters(self) -> list[Node]:
        return [p for pred in self.learned.values() for p in pred.net.parameters()]

    def calibration_points(self, points: np.ndarray, rng: np.random.Generator, n_uniform: int = 64) -> np.ndarray:
        uniform = rng.uniform(-self.box, self.box, size=(n_uniform, 2))
        return np.vstack([points, uniform])

    def calibrate(self, points: np.ndarray) -> float:
        """One Adam step of BCE between learned outputs and reference memberships."""
        if not self.learned:
            return 0.0
        self._opt.zero_grad()
        x = Node(points)
        loss = None
        for pred in self.learned.values():
            target = pred.reference(x).data
            term = ad.bce_loss(pred(x), target)
            loss = term if loss is None else loss + term
        loss.backward()
        self._opt.step()
        return loss.item()

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name, pred in self.learned.items():
            out.update({f"{name}/{k}": v for k, v in pred.net.state().items()})
        return out


@dataclass
class LogicModule:
    kb: KnowledgeBase
    bank: PredicateBank

    def evaluate(self, x) -> SatisfactionReport:
        return kb_satisfaction(self.kb, self.bank.truths(x))

    def parameters(self) -> list[Node]:
        return self.bank.parameters()


def gaussian_logic() -> LogicModule:
    bank = PredicateBank(analytic={"InRange": gaussian_in_range, "GaussianShape": gaussian_shape})
    return LogicModule(build_gaussian_kb(), bank)


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

ON_GRID_SCALE = 0.1
IN_CELL_SCALE = 0.2


def _center_distances(x: Node, centers: np.ndarray) -> list[Node]:
    return [ad.sqrt(ad.sum_((x - c) ** 2, axis=1)) for c in centers]


def grid_features(centers: np.ndarray = GRID_CENTERS) -> Callable[[Node], Node]:
    """Raw coordinates plus the distance to each center."""

    def features(x: Node) -> Node:
        return ad.concat([x, ad.stack_columns(_center_distances(x, centers))], axis=1)

    return features


def on_grid_reference(centers: np.ndarray = GRID_CENTERS, scale: float = ON_GRID_SCALE) -> PredicateFn:
    def ref(x: Node) -> Node:
        d = _center_distances(ad.as_node(x), centers)
        nearest = d[0]
        for di in d[1:]:
            nearest = ad.minimum(nearest, di)
        return ad.exp(nearest * nearest * (-0.5 / scale**2))

    return ref


def in_cell_reference(center, scale: float = IN_CELL_SCALE) -> PredicateFn:
    center = np.asarray(center, dtype=np.float64)

    def ref(x: Node) -> Node:
        sq = ad.sum_((ad.as_node(x) - center) ** 2, axis=1)
        return ad.exp(sq * (-0.5 / scale**2))

    return ref


def build_grid_kb(n_cells: int = 4, forall_p: float = 2.0, exists_p: float = MAX_EXISTS_P) -> KnowledgeBase:
    rules = [Rule("on_grid", ForAll(Pred("OnGrid"), forall_p))]
    rules += [Rule(f"cell_{i}", Exists(Pred(f"InCell{i}"), exists_p)) for i in range(n_cells)]
    return KnowledgeBase(rules)


def grid_logic(
    rng: np.random.Generator,
    centers: np.ndarray = GRID_CENTERS,
    forall_p: float = 2.0,
    exists_p: float = MAX_EXISTS_P,
    lr: float = 0.005,
    ideal: bool = False,
) -> LogicModule:
    feats = grid_features(centers)
    n_feat = 2 + len(centers)
    learned = {"OnGrid": LearnedPredicate("OnGrid", feats, on_grid_reference(centers), predicate_net(n_feat, rng))}
    for i, c in enumerate(centers):
        name = f"InCell{i}"
        learned[name] = LearnedPredicate(name, feats, in_cell_reference(c), predicate_net(n_feat, rng))
    bank = PredicateBank(learned=learned, lr=lr, ideal=ideal, box=1.5)
    return LogicModule(build_grid_kb(len(centers), forall_p, exists_p), bank)


# ---------------------------------------------------------------------------
# Ring
# ---------------------------------------------------------------------------

RING_SHARPNESS = 30.0

RING_HIERARCHY = {
    "exists_inner": 2.0,
    "exists_outer": 2.0,
    "exclusive": 1.5,
    "avoid_dead_zone": 1.5,
    "spatial": 1.0,
    "balance": 1.0,
    "precision": 0.5,
}


@dataclass
class RingState:
    """Mutable holder so references follow the scheduled band."""

    geometry: RingGeometry = field(default_factory=RingGeometry)


def _radius(x: Node) -> Node:
    return ad.sqrt(ad.sum_(x * x, axis=1))


def ring_features(state: RingState) -> Callable[[Node], Node]:
    """Coordinates plus distance to each ideal circle."""

    def features(x: Node) -> Node:
        r = _radius(x)
        g = state.geometry
        return ad.concat([x, ad.stack_columns([ad.abs_(r - g.r_inner), ad.abs_(r - g.r_outer)])], axis=1)

    return features


def ring_band(state: RingState, which: str) -> PredicateFn:
    def ref(x: Node) -> Node:
        g = state.geometry
        centre = g.r_inner if which == "inner" else g.r_outer
        d = ad.abs_(_radius(ad.as_node(x)) - centre)
        return ad.sigmoid((g.band - d) * RING_SHARPNESS)

    return ref


def ring_dead_zone(state: RingState) -> PredicateFn:
    def ref(x: Node) -> Node:
        g = state.geometry
        lo, hi = g.dead_zone
        r = _radius(ad.as_node(x))
        return ad.sigmoid((r - lo) * RING_SHARPNESS) * ad.sigmoid((hi - r) * RING_SHARPNESS)

    return ref


def ring_near_center(state: RingState, which: str) -> PredicateFn:
    def ref(x: Node) -> Node:
        g = state.geometry
        centre = g.r_inner if which == "inner" else g.r_outer
        d = _radius(ad.as_node(x)) - centre
        return ad.exp(d * d * (-0.5 / (0.5 * g.band) ** 2))

    return ref


def build_ring_kb(
    forall_p: float = 2.0,
    exists_p: float = MAX_EXISTS_P,
    hierarchical: bool = True,
    simple: bool = False,
    adaptive: bool = True,
) -> KnowledgeBase:
    """Ring rules: existence, exclusivity, dead zone, spatial consistency, balance, precision.

    ``simple`` keeps only existence, exclusivity and dead-zone avoidance.
    """
    inner, outer = Pred("InnerRing"), Pred("OuterRing")
    rules = [
        Rule("exists_inner", Exists(inner, exists_p)),
        Rule("exists_outer", Exists(outer, exists_p)),
        Rule("exclusive", ForAll(Not(inner & outer), forall_p)),
        Rule("avoid_dead_zone", ForAll(Not(Pred("DeadZone")), forall_p)),
    ]
    if not simple:
        rules += [
            Rule("spatial", ForAll((inner >> Pred("InnerBand")) & (outer >> Pred("OuterBand")), forall_p)),
            Rule("balance", SoftEqual(inner, outer)),
            Rule(
                "precision",
                ForAll((inner >> Pred("NearInnerCenter")) & (outer >> Pred("NearOuterCenter")), forall_p),
            ),
        ]
    for r in rules:
        r.weight = RING_HIERARCHY[r.name] if hierarchical else 1.0
    return KnowledgeBase(rules, adaptive=adaptive)


def ring_logic(
    rng: np.random.Generator,
    state: RingState,
    forall_p: float = 2.0,
    exists_p: float = MAX_EXISTS_P,
    hierarchical: bool = True,
    simple: bool = False,
    adaptive: bool = True,
    lr: float = 0.005,
    ideal: bool = False,
    box: float = 3.0,
) -> LogicModule:
    feats = ring_features(state)
    refs = {
        "InnerRing": ring_band(state, "inner"),
        "OuterRing": ring_band(state, "outer"),
        "DeadZone": ring_dead_zone(state),
        "NearInnerCenter": ring_near_center(state, "inner"),
        "NearOuterCenter": ring_near_center(state, "outer"),
    }
    kb = build_ring_kb(forall_p, exists_p, hierarchical, simple, adaptive)
    needed = kb.predicates()
    learned = {
        name: LearnedPredicate(name, feats, ref, predicate_net(4, rng))
        for name, ref in refs.items()
        if name in needed
    }
    analytic = {"InnerBand": ring_band(state, "inner"), "OuterBand": ring_band(state, "outer")}
    analytic = {k: v for k, v in analytic.items() if k in needed}
    bank = PredicateBank(analytic=analytic, learned=learned, lr=lr, ideal=ideal, box=box)
    return LogicModule(kb, bank)


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------


def _images(x) -> Node:
    x = ad.as_node(x)
    if x.ndim != 2 or x.shape[1] != 784:
        raise ad.ShapeError("image predicate", x.shape, (None, 784))
    return x


def valid_pixels(x) -> Node:
    """Mean over pixels of ``sigmoid(20(p-0.02)) * sigmoid(20(0.98-p))``."""
    x = _images(x)
    inside = ad.sigmoid((x - 0.02) * 20.0) * ad.sigmoid((0.98 - x) * 20.0)
    return ad.mean(inside, axis=1)


def has_proper_intensity(x) -> Node:
    """``exp(-((mean - 0.13) / 0.1)^2)`` of each image's mean intensity."""
    x = _images(x)
    dev = (ad.mean(x, axis=1) - 0.13) * 10.0
    return ad.exp(-(dev * dev))


def component_count(image: np.ndarray, threshold: float = 0.3) -> int:
    _, n = ndimage.label(np.asarray(image).reshape(28, 28) > threshold)
    return int(n)


def is_connected(x) -> Node:
    """1 for one 4-connected foreground component, 1/c for c > 1, 0 for none. No gradient."""
    data = _images(x).data
    out = np.empty(len(data))
    for i, img in enumerate(data):
        c = component_count(img)
        out[i] = 0.0 if c == 0 else 1.0 / c
    return Node(out)


def is_complete(x) -> Node:
    """``sigmoid(10 (f - 0.05))`` of the foreground fraction. No gradient."""
    data = _images(x).data
    frac = (data > 0.3).mean(axis=1)
    return Node(1.0 / (1.0 + np.exp(-10.0 * (frac - 0.05))))


def validity_predicates(x) -> dict[str, Node]:
    return {
        "ValidPixels": valid_pixels(x),
        "IsConnected": is_connected(x),
        "IsComplete": is_complete(x),
        "HasProperIntensity": has_proper_intensity(x),
    }


def build_mnist_kb(n_classes: int = 10, forall_p: float = 2.0) -> KnowledgeBase:
    digits = [Pred(f"IsDigit{k}") for k in range(n_classes)]
    some_class = disjunction(digits, kind="prob_sum")
    pairs = [Not(digits[k] & digits[m]) for k, m in itertools.combinations(range(n_classes), 2)]
    structure = Pred("ValidPixels") >> (Pred("IsConnected") & Pred("IsComplete"))
    return KnowledgeBase(
        [
            Rule("some_class", ForAll(some_class, forall_p)),
            Rule("exclusive_classes", ForAll(conjunction(pairs), forall_p)),
            Rule("valid_structure", ForAll(structure, forall_p)),
            Rule("proper_intensity", ForAll(Pred("HasProperIntensity"), forall_p)),
        ]
    )


def classifier_truths(classifier: Mlp) -> Callable[[Node], dict[str, Node]]:
    def truths(x: Node) -> dict[str, Node]:
        probs = classifier(x, train=False)
        return {f"IsDigit{k}": probs[:, k] for k in range(probs.shape[1])}

    return truths


class MnistBank(PredicateBank):
    """Frozen classifier predicates plus the validity heuristics."""

    def __init__(self, classifier: Mlp | None):
        if classifier is None:
            raise ValueError("the MNIST knowledge base needs a trained digit classifier")
        super().__init__()
        self.classifier = classifier
        self._digits = classifier_truths(classifier)

    def names(self) -> list[str]:
        return sorted([f"IsDigit{k}" for k in range(10)] + list(validity_predicates(np.zeros((1, 784)))))

    def truths(self, x) -> dict[str, Node]:
        x = ad.as_node(x)
        out = self._digits(x)
        out.update(validity_predicates(x))
        return out


def mnist_logic(classifier: Mlp | None, forall_p: float = 2.0) -> LogicModule:
    return LogicModule(build_mnist_kb(forall_p=forall_p), MnistBank(classifier))


def ideal_truths(module: LogicModule, x) -> Mapping[str, Node]:
    saved = module.bank.ideal
    module.bank.ideal = True
    try:
        return module.bank.truths(x)
    finally:
        module.bank.ideal = saved
