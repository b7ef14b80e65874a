"""Differentiable fuzzy first-order logic.

Connectives use the product t-norm family: ``a*b``, ``max``/probabilistic sum,
``1-a`` and ``max(1-a, b)``. A formula evaluated per sample yields a batch of
truth degrees; quantifiers collapse the batch (the variable's domain) with
power means:

    forall  ->  M_p(t)
    exists  ->  1 - M_p(1 - t)

where ``M_p(v) = (mean(v**p))**(1/p)``. Note that for ``p >= 1`` the
existential form is *below* the arithmetic mean and the universal form is
above it; a max-like existential needs ``p < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import EPS, Node

OR_KINDS = ("max", "prob_sum")


# ---------------------------------------------------------------------------
# connectives and aggregators
# ---------------------------------------------------------------------------


def f_and(a, b) -> Node:
    return ad.mul(a, b)


def f_or(a, b, kind: str = "max") -> Node:
    if kind == "max":
        return ad.maximum(a, b)
    if kind == "prob_sum":
        a, b = ad.as_node(a), ad.as_node(b)
        return a + b - a * b
    raise ValueError(f"disjunction kind must be one of {OR_KINDS}, got {kind!r}")


def f_not(a) -> Node:
    return 1.0 - ad.as_node(a)


def f_implies(a, b) -> Node:
    return ad.maximum(1.0 - ad.as_node(a), b)


def power_mean(values, p: float) -> Node:
    """``((1/n) sum v**p) ** (1/p)`` over all entries of ``values``.

    Negative ``p`` evaluates ``v`` at ``max(v, EPS)`` so a zero entry drives the
    result to (nearly) zero instead of dividing by zero.
    """
    values = ad.as_node(values)
    if values.data.size == 0:
        raise ValueError("power_mean of an empty batch")
    if p == 0:
        raise ValueError("power_mean exponent must be nonzero")
    if p == 1:
        return ad.mean(values)
    if p < 0:
        values = ad.maximum(values, EPS)
    return ad.pow(ad.mean(ad.pow(values, p)), 1.0 / p)


def forall_sat(truths, p: float = 2.0) -> Node:
    return power_mean(truths, p)


def exists_sat(truths, p: float = 2.0) -> Node:
    return 1.0 - power_mean(1.0 - ad.as_node(truths), p)


def soft_equal(a, b) -> Node:
    """``1 - |mean(a) - mean(b)|``: soft equality of two membership rates."""
    return 1.0 - ad.abs_(ad.mean(a) - ad.mean(b))


# ---------------------------------------------------------------------------
# formula AST
# ---------------------------------------------------------------------------


class Formula:
    def __invert__(self):
        return Not(self)

    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)

    def __rshift__(self, other):
        return Implies(self, other)


@dataclass(frozen=True)
class Pred(Formula):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not(Formula):
    f: Formula

    def __str__(self):
        return f"¬{_wrap(self.f)}"


@dataclass(frozen=True)
class And(Formula):
    f: Formula
    g: Formula

    def __str__(self):
        return f"{_wrap(self.f)} ∧ {_wrap(self.g)}"


@dataclass(frozen=True)
class Or(Formula):
    f: Formula
    g: Formula
    kind: str = "max"

    def __post_init__(self):
        if self.kind not in OR_KINDS:
            raise ValueError(f"disjunction kind must be one of {OR_KINDS}")

    def __str__(self):
        sym = "∨" if self.kind == "max" else "∨ₚ"
        return f"{_wrap(self.f)} {sym} {_wrap(self.g)}"


@dataclass(frozen=True)
class Implies(Formula):
    f: Formula
    g: Formula

    def __str__(self):
        return f"{_wrap(self.f)} ⇒ {_wrap(self.g)}"


@dataclass(frozen=True)
class ForAll(Formula):
    f: Formula
    p: float = 2.0

    def __str__(self):
        return f"∀[p={self.p:g}] {self.f}"


@dataclass(frozen=True)
class Exists(Formula):
    f: Formula
    p: float = 2.0

    def __str__(self):
        return f"∃[p={self.p:g}] {self.f}"


@dataclass(frozen=True)
class SoftEqual(Formula):
    """Batch-level rule: the mean truths of ``f`` and ``g`` should match."""

    f: Formula
    g: Formula

    def __str__(self):
        return f"mean({self.f}) ≈ mean({self.g})"


def _wrap(f: Formula) -> str:
    return str(f) if isinstance(f, (Pred, Not)) else f"({f})"


def conjunction(formulas: Sequence[Formula]) -> Formula:
    out = formulas[0]
    for f in formulas[1:]:
        out = And(out, f)
    return out


def disjunction(formulas: Sequence[Formula], kind: str = "max") -> Formula:
    out = formulas[0]
    for f in formulas[1:]:
        out = Or(out, f, kind)
    return out


def predicate_names(f: Formula) -> set[str]:
    if isinstance(f, Pred):
        return {f.name}
    if isinstance(f, (Not, ForAll, Exists)):
        return predicate_names(f.f)
    return predicate_names(f.f) | predicate_names(f.g)


def eval_formula(f: Formula, truths: Mapping[str, Node]) -> Node:
    """Evaluate ``f`` given per-sample truth batches for every predicate."""
    if isinstance(f, Pred):
        try:
            return ad.as_node(truths[f.name])
        except KeyError:
            raise KeyError(f"unknown predicate {f.name!r}; available: {sorted(truths)}") from None
    if isinstance(f, Not):
        return f_not(eval_formula(f.f, truths))
    if isinstance(f, And):
        return f_and(eval_formula(f.f, truths), eval_formula(f.g, truths))
    if isinstance(f, Or):
        return f_or(eval_formula(f.f, truths), eval_formula(f.g, truths), f.kind)
    if isinstance(f, Implies):
        return f_implies(eval_formula(f.f, truths), eval_formula(f.g, truths))
    if isinstance(f, ForAll):
        return forall_sat(eval_formula(f.f, truths), f.p)
    if isinstance(f, Exists):
        return exists_sat(eval_formula(f.f, truths), f.p)
    if isinstance(f, SoftEqual):
        return soft_equal(eval_formula(f.f, truths), eval_formula(f.g, truths))
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# knowledge base
# ---------------------------------------------------------------------------


@dataclass
class Rule:
    name: str
    formula: Formula
    weight: float = 1.0


@dataclass
class KnowledgeBase:
    rules: list[Rule]
    w_min: float = 0.1
    w_max: float = 10.0
    adaptive: bool = False

    def __post_init__(self):
        if not self.rules:
            raise ValueError("a knowledge base needs at least one rule")
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate rule names: {names}")

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rules]

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.rules])

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(f"no rule {name!r}; available: {self.names}")

    def set_weights(self, weights: Sequence[float]) -> None:
        for rule, w in zip(self.rules, weights):
            rule.weight = float(w)

    def predicates(self) -> set[str]:
        out: set[str] = set()
        for r in self.rules:
            out |= predicate_names(r.formula)
        return out


@dataclass
class SatisfactionReport:
    names: list[str]
    sat_nodes: list[Node]
    weights: np.ndarray
    s_logic: Node
    loss: Node
    extra: dict = field(default_factory=dict)

    @property
    def sats(self) -> dict[str, float]:
        return {n: s.item() for n, s in zip(self.names, self.sat_nodes)}

    @property
    def value(self) -> float:
        return self.s_logic.item()

    def dump(self, kb: KnowledgeBase) -> str:
        lines = []
        for rule, s in zip(kb.rules, self.sat_nodes):
            lines.append(f"{rule.name:<24} w={rule.weight:7.4f} sat={s.item():.4f}  {rule.formula}")
        lines.append(f"{'S_logic':<24} {self.value:.4f}")
        return "\n".join(lines)


def kb_satisfaction(kb: KnowledgeBase, truths: Mapping[str, Node]) -> SatisfactionReport:
    """Weighted mean of rule satisfactions; loss is ``1 - S_logic``."""
    weights = kb.weights
    total = weights.sum()
    if total <= 0:
        raise ValueError("knowledge-base weights sum to zero")
    sat_nodes = [eval_formula(r.formula, truths) for r in kb.rules]
    acc = sat_nodes[0] * weights[0]
    for s, w in zip(sat_nodes[1:], weights[1:]):
        acc = acc + s * w
    s_logic = acc / total
    return SatisfactionReport(kb.names, sat_nodes, weights, s_logic, 1.0 - s_logic)


PredicateFn = Callable[[Node], Node]


def ground(predicates: Mapping[str, PredicateFn], x: Node) -> dict[str, Node]:
    """Evaluate every predicate on the batch ``x``."""
    return {name: fn(x) for name, fn in predicates.items()}
