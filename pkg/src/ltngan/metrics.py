"""Post-hoc evaluation metrics for generated samples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from . import predicates as P
from .autodiff import Node
from .datasets import GRID_CENTERS, RingGeometry

EVAL_SAMPLES = 1000
GRID_TOLERANCE = 0.05
MAX_PAIRS = 1_000_000


@dataclass
class MetricReport:
    dataset: str
    values: dict[str, float]
    n_samples: int
    seed: int | None = None
    notes: list[str] = field(default_factory=list)

    def row(self) -> dict[str, object]:
        return {"dataset": self.dataset, "n_samples": self.n_samples, "seed": self.seed, **self.values}

    def table(self) -> str:
        width = max(len(k) for k in self.values)
        lines = [f"{self.dataset} ({self.n_samples} samples, seed {self.seed})"]
        lines += [f"  {k:<{width}}  {v:.3f}" for k, v in self.values.items()]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def _points(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array, got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# Gaussian
# ---------------------------------------------------------------------------


def statistical_quality(mean_error: float, std_error: float) -> float:
    return 1.0 / (1.0 + mean_error + std_error)


def gaussian_metrics(samples) -> dict[str, float]:
    x = _points(samples)
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    mean_error = float(np.linalg.norm(x.mean(axis=0)))
    std_error = float(np.linalg.norm(x.std(axis=0) - 1.0))
    truth = (P.gaussian_in_range(x) * P.gaussian_shape(x)).data
    adherence = float(np.mean(truth > 0.5))
    quality = statistical_quality(mean_error, std_error)
    return {
        "mean_error": mean_error,
        "std_error": std_error,
        "statistical_quality": quality,
        "adherence_proxy": adherence,
        "combined_quality": 0.5 * (adherence + quality),
    }


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


def grid_metrics(
    samples,
    centers: np.ndarray = GRID_CENTERS,
    tolerance: float = GRID_TOLERANCE,
    overall_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> dict[str, float]:
    """Cluster membership within ``tolerance`` of a center, coverage and closeness.

    ``overall`` is the weighted mean of (grid_cluster, coverage, quality).
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    x = _points(samples)
    centers = np.asarray(centers, dtype=np.float64)
    d = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
    nearest = d.min(axis=1)
    hit = nearest <= tolerance
    in_targets = int(hit.sum())
    covered = (d <= tolerance).any(axis=0)
    quality = float(np.mean(1.0 - nearest[hit] / tolerance)) if in_targets else 0.0
    cluster = in_targets / len(x)
    coverage = float(covered.mean())
    w = np.asarray(overall_weights, dtype=np.float64)
    overall = float(np.dot(w, [cluster, coverage, quality]) / w.sum())
    return {
        "grid_cluster": cluster,
        "coverage": coverage,
        "quality": quality,
        "in_targets": float(in_targets),
        "overall": overall,
    }


# ---------------------------------------------------------------------------
# Ring
# ---------------------------------------------------------------------------


def ring_balance(n_in: int, n_out: int) -> float:
    total = n_in + n_out
    if total == 0:
        return 0.0
    return 1.0 - abs(n_in - n_out) / total


def ring_metrics(samples, geometry: RingGeometry = RingGeometry(band=0.15)) -> dict[str, float]:
    x = _points(samples)
    r = np.linalg.norm(x, axis=1)
    inner = np.abs(r - geometry.r_inner) <= geometry.band
    outer = np.abs(r - geometry.r_outer) <= geometry.band
    lo, hi = geometry.dead_zone
    dead = (r > lo) & (r < hi)
    n_in, n_out, n = int(inner.sum()), int(outer.sum()), len(x)
    return {
        "ring_adherence": (n_in + n_out) / n,
        "inner_count": float(n_in),
        "outer_count": float(n_out),
        "balance": ring_balance(n_in, n_out),
        "dead_zone_avoidance": 1.0 - float(dead.sum()) / n,
    }


# ---------------------------------------------------------------------------
# diversity
# ---------------------------------------------------------------------------


def diversity(samples, rng: np.random.Generator | None = None, max_pairs: int = MAX_PAIRS) -> float:
    """Mean pairwise Euclidean distance; large sets use a random subset of rows."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    n = len(x)
    if n * (n - 1) // 2 > max_pairs:
        keep = int((1 + math.sqrt(1 + 8 * max_pairs)) / 2)
        rng = rng or np.random.default_rng(0)
        x = x[rng.choice(n, size=keep, replace=False)]
    return float(pdist(x).mean())


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------


def pixel_coverage(images) -> float:
    """Mean per-pixel variance over the set, normalised by the Bernoulli maximum 0.25."""
    x = np.asarray(images, dtype=np.float64)
    return float(min(x.var(axis=0).mean() / 0.25, 1.0))


def template_dependence(images, labels, templates) -> float:
    """Mean Pearson correlation between each image and its class template."""
    x = np.asarray(images, dtype=np.float64)
    t = np.asarray(templates, dtype=np.float64)[np.asarray(labels)]
    xc = x - x.mean(axis=1, keepdims=True)
    tc = t - t.mean(axis=1, keepdims=True)
    denom = np.linalg.norm(xc, axis=1) * np.linalg.norm(tc, axis=1)
    corr = np.divide((xc * tc).sum(axis=1), denom, out=np.zeros(len(x)), where=denom > 0)
    return float(corr.mean())


def classifier_accuracy(classifier, images, labels) -> float:
    probs = classifier(Node(np.asarray(images, dtype=np.float64)), train=False).data
    return float(np.mean(probs.argmax(axis=1) == np.asarray(labels)))


def mnist_metrics(images, labels, classifier, templates) -> dict[str, float]:
    recognition = classifier_accuracy(classifier, images, labels)
    validity = P.validity_predicates(np.asarray(images, dtype=np.float64))
    mean_validity = float(np.mean([v.data.mean() for v in validity.values()]))
    return {
        "digit_recognition": recognition,
        "coverage": pixel_coverage(images),
        "template_dependence": template_dependence(images, labels, templates),
        "quality": recognition * mean_validity,
    }


def dataset_metrics(dataset: str, samples, **kwargs) -> MetricReport:
    if dataset == "gaussian":
        report = MetricReport(dataset, gaussian_metrics(samples), len(samples))
        report.notes.append("adherence_proxy: fraction with InRange*GaussianShape > 0.5")
        return report
    if dataset == "grid":
        return MetricReport(dataset, grid_metrics(samples, **kwargs), len(samples))
    if dataset == "ring":
        return MetricReport(dataset, ring_metrics(samples, **kwargs), len(samples))
    if dataset == "mnist":
        return MetricReport(dataset, mnist_metrics(samples, **kwargs), len(samples))
    raise ValueError(f"unknown dataset {dataset!r}")
