"""Logic-weight schedule, adaptive rule weights, checkpoint backtracking."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def clip(x: float, a: float, b: float) -> float:
    if a > b:
        raise ValueError(f"clip bounds reversed: {a} > {b}")
    return min(max(x, a), b)


@dataclass(frozen=True)
class LambdaSchedule:
    """Linear ramp from ``start`` to ``end`` over ``ramp_epochs``, then flat.

    ``kind="constant"`` always returns ``start``.
    """

    kind: str = "linear_ramp"
    start: float = 0.05
    end: float = 0.30
    ramp_epochs: int = 80

    def __post_init__(self):
        if self.kind not in ("linear_ramp", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.start < 0 or self.end < 0:
            raise ValueError("lambda endpoints must be nonnegative")

    def __call__(self, epoch: int) -> float:
        return lambda_at(self, epoch)


def lambda_at(schedule: LambdaSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    if schedule.kind == "constant":
        return schedule.start
    if schedule.ramp_epochs <= 0:
        raise ValueError("linear_ramp needs ramp_epochs > 0")
    if epoch > schedule.ramp_epochs:
        return schedule.end
    return schedule.start + (epoch / schedule.ramp_epochs) * (schedule.end - schedule.start)


def weight_multiplier(s: float, eta: float) -> float:
    if s < 0.3:
        return 1.0 + eta
    if s > 0.8:
        return 1.0 - 0.5 * eta
    return 1.0 + eta * (0.6 - s)


def adaptive_weight_update(
    s: float,
    w: float,
    eta: float = 0.1,
    momentum: float = 0.7,
    w_min: float = 0.1,
    w_max: float = 10.0,
) -> float:
    """Raise weights of poorly satisfied rules, relax well satisfied ones."""
    target = clip(w * weight_multiplier(s, eta), w_min, w_max)
    return momentum * w + (1.0 - momentum) * target


@dataclass
class AdaptiveWeights:
    eta: float = 0.1
    momentum: float = 0.7
    w_min: float = 0.1
    w_max: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        clip(0.0, self.w_min, self.w_max)

    def update(self, sats, weights) -> np.ndarray:
        return np.array(
            [
                adaptive_weight_update(float(s), float(w), self.eta, self.momentum, self.w_min, self.w_max)
                for s, w in zip(sats, weights)
            ]
        )


def band_at(epoch: int, total_epochs: int, start: float = 0.30, end: float = 0.15) -> float:
    """Ring band half-width, shrinking linearly from epoch 0 to the final epoch."""
    if total_epochs <= 1:
        return end
    frac = min(max(epoch / (total_epochs - 1), 0.0), 1.0)
    return start + frac * (end - start)


@dataclass
class Snapshot:
    epoch: int
    satisfaction: float
    state: dict[str, Any]


@dataclass
class Backtracker:
    """Keep recent generator snapshots; roll back on a sudden satisfaction drop.

    A drop means the current satisfaction falls more than ``threshold`` below
    the mean of the previous ``window`` epochs.
    """

    enabled: bool = True
    capacity: int = 20
    window: int = 5
    threshold: float = 0.15
    buffer: deque = field(default_factory=deque)
    history: list[float] = field(default_factory=list)

    def maybe_backtrack(self, epoch: int, satisfaction: float, state: dict[str, Any]) -> Snapshot | None:
        """Record this epoch and return the snapshot to restore, if any."""
        if not self.enabled:
            return None
        recent = self.history[-self.window :]
        self.history.append(satisfaction)
        if len(recent) == self.window and self.buffer:
            if satisfaction < float(np.mean(recent)) - self.threshold:
                return max(self.buffer, key=lambda s: (s.satisfaction, s.epoch))
        self.buffer.append(Snapshot(epoch, satisfaction, state))
        while len(self.buffer) > self.capacity:
            self.buffer.popleft()
        return None
