"""MLP building blocks, Adam, and the checkpoint file format."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node

OUTPUT_ACTIVATIONS = ("linear", "sigmoid", "tanh", "softmax")
BN_EPS = 1e-8
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_slope: float = 0.2
    output_activation: str = "linear"
    dropout_rate: float = 0.0
    use_batchnorm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output widths")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(
                f"output_activation must be one of {OUTPUT_ACTIVATIONS}, got {self.output_activation!r}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2


def init_params(spec: MlpSpec, rng: np.random.Generator) -> dict[str, Node]:
    """Kaiming-uniform weights (LeakyReLU gain), zero biases.

    Batchnorm layers get ``gamma=1``, ``beta=0``.
    """
    gain2 = 2.0 / (1.0 + spec.hidden_slope**2)
    params: dict[str, Node] = {}
    sizes = spec.layer_sizes
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = math.sqrt(3.0 * gain2 / fan_in)
        params[f"W{i}"] = ad.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params[f"b{i}"] = ad.parameter(np.zeros(fan_out))
        if spec.use_batchnorm and i < spec.n_hidden:
            params[f"gamma{i}"] = ad.parameter(np.ones(fan_out))
            params[f"beta{i}"] = ad.parameter(np.zeros(fan_out))
    return params


def init_buffers(spec: MlpSpec) -> dict[str, np.ndarray]:
    """Running batchnorm statistics (not trained by gradient)."""
    buffers: dict[str, np.ndarray] = {}
    if spec.use_batchnorm:
        for i in range(spec.n_hidden):
            width = spec.layer_sizes[i + 1]
            buffers[f"running_mean{i}"] = np.zeros(width)
            buffers[f"running_var{i}"] = np.ones(width)
    return buffers


def batchnorm(
    h: Node,
    gamma: Node,
    beta: Node,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
) -> Node:
    """Per-feature batch normalization; updates running stats in place when training."""
    if train:
        mu = ad.mean(h, axis=0, keepdims=True)
        centered = h - mu
        var = ad.mean(centered * centered, axis=0, keepdims=True)
        normed = centered / ad.sqrt(var + BN_EPS)
        running_mean *= BN_MOMENTUM
        running_mean += (1.0 - BN_MOMENTUM) * mu.data[0]
        running_var *= BN_MOMENTUM
        running_var += (1.0 - BN_MOMENTUM) * var.data[0]
    else:
        normed = (h - running_mean) / np.sqrt(running_var + BN_EPS)
    return normed * gamma + beta


def dropout(h: Node, rate: float, rng: np.random.Generator) -> Node:
    if rate <= 0.0:
        return h
    keep = (rng.random(h.shape) >= rate) / (1.0 - rate)
    return h * keep


def _activate(h: Node, kind: str) -> Node:
    if kind == "linear":
        return h
    if kind == "sigmoid":
        return ad.sigmoid(h)
    if kind == "tanh":
        return ad.tanh(h)
    return ad.softmax(h, axis=1)


def mlp_hidden(
    spec: MlpSpec,
    params: dict[str, Node],
    x,
    train: bool = True,
    rng: np.random.Generator | None = None,
    buffers: dict[str, np.ndarray] | None = None,
) -> Node:
    """Run every hidden layer: linear, batchnorm, LeakyReLU, dropout."""
    h = ad.as_node(x)
    if h.ndim != 2 or h.shape[1] != spec.layer_sizes[0]:
        raise ad.ShapeError("mlp input", h.shape, (None, spec.layer_sizes[0]))
    for i in range(spec.n_hidden):
        h = h @ params[f"W{i}"] + params[f"b{i}"]
        if spec.use_batchnorm:
            if buffers is None:
                raise ValueError("batchnorm MLP needs running-stat buffers")
            h = batchnorm(
                h,
                params[f"gamma{i}"],
                params[f"beta{i}"],
                buffers[f"running_mean{i}"],
                buffers[f"running_var{i}"],
                train,
            )
        h = ad.leaky_relu(h, spec.hidden_slope)
        if train and spec.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("dropout in train mode needs an rng")
            h = dropout(h, spec.dropout_rate, rng)
    return h


def mlp_forward(
    spec: MlpSpec,
    params: dict[str, Node],
    x,
    mode: str = "train",
    rng: np.random.Generator | None = None,
    buffers: dict[str, np.ndarray] | None = None,
) -> Node:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    h = mlp_hidden(spec, params, x, mode == "train", rng, buffers)
    last = spec.n_hidden
    out = h @ params[f"W{last}"] + params[f"b{last}"]
    return _activate(out, spec.output_activation)


class Mlp:
    """Parameters, buffers and spec bundled together."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator):
        self.spec = spec
        self.params = init_params(spec, rng)
        self.buffers = init_buffers(spec)

    def __call__(self, x, train: bool = True, rng: np.random.Generator | None = None) -> Node:
        return mlp_forward(self.spec, self.params, x, "train" if train else "eval", rng, self.buffers)

    def hidden(self, x, train: bool = True, rng: np.random.Generator | None = None) -> Node:
        return mlp_hidden(self.spec, self.params, x, train, rng, self.buffers)

    def head(self, h: Node) -> Node:
        last = self.spec.n_hidden
        return _activate(h @ self.params[f"W{last}"] + self.params[f"b{last}"], self.spec.output_activation)

    def parameters(self) -> list[Node]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data.copy() for k, v in self.params.items()}
        out.update({f"buffer/{k}": v.copy() for k, v in self.buffers.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            v.data = np.array(state[f"param/{k}"], dtype=np.float64)
            v.zero_grad()
        for k in self.buffers:
            self.buffers[k] = np.array(state[f"buffer/{k}"], dtype=np.float64)


def set_trainable(params: Sequence[Node], flag: bool) -> None:
    for p in params:
        p.requires_grad = flag


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns the new parameter arrays."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ad.ShapeError("adam", p.shape, g.shape)
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


class Adam:
    """Adam bound to a fixed list of parameter nodes."""

    def __init__(self, params: Sequence[Node], lr: float = 0.001, beta1: float = 0.5, beta2: float = 0.999):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)

    def step(self) -> None:
        new = adam_step(self.state, [p.data for p in self.params], [p.grad for p in self.params])
        for p, d in zip(self.params, new):
            p.data = d

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam/t": np.array(self.state.t)}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"adam/m{i}"] = m
            out[f"adam/v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state.t = int(arrays.get("adam/t", 0))
        n = sum(1 for k in arrays if k.startswith("adam/m"))
        self.state.m = [np.array(arrays[f"adam/m{i}"]) for i in range(n)]
        self.state.v = [np.array(arrays[f"adam/v{i}"]) for i in range(n)]


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------


def polar_to_cartesian(out) -> Node:
    """Map rows ``(r, theta)`` to ``(r cos theta, r sin theta)``."""
    out = ad.as_node(out)
    if out.ndim != 2 or out.shape[1] != 2:
        raise ad.ShapeError("polar_to_cartesian", out.shape, (None, 2))
    r = out[:, 0:1]
    theta = out[:, 1:2]
    return ad.concat([r * ad.cos(theta), r * ad.sin(theta)], axis=1)


def scaled_polar(raw, r_max: float) -> Node:
    """Squash raw generator output with tanh into ``[0, r_max] x [-pi, pi]``, then to Cartesian."""
    t = ad.tanh(raw)
    scale = np.array([0.5 * r_max, math.pi])
    shift = np.array([0.5 * r_max, 0.0])
    return polar_to_cartesian(t * scale + shift)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
#
# Layout:  b"LTNGANCK" | uint8 version | uint32 little-endian header length |
#          UTF-8 JSON header | numpy .npz payload (all arrays)
# The JSON header carries the MLP spec(s), epoch, rng state and free-form metadata.

MAGIC = b"LTNGANCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    specs: dict[str, MlpSpec] | None = None,
    epoch: int = 0,
    rng_state: dict | None = None,
    meta: dict[str, Any] | None = None,
) -> None:
    header = {
        "specs": {k: asdict(v) for k, v in (specs or {}).items()},
        "epoch": int(epoch),
        "rng_state": rng_state,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = io.BytesIO()
    np.savez(payload, **arrays)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(payload.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, arrays)``; header specs are rebuilt as :class:`MlpSpec`."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = raw[len(MAGIC)]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = len(MAGIC) + 1
    hlen = int.from_bytes(raw[pos : pos + 4], "little")
    pos += 4
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    header["specs"] = {k: MlpSpec(**v) for k, v in header["specs"].items()}
    with np.load(io.BytesIO(raw[pos + hlen :])) as npz:
        arrays = {k: npz[k] for k in npz.files}
    return header, arrays


def save_mlp(path: str | Path, net: Mlp, epoch: int = 0, meta: dict | None = None) -> None:
    save_checkpoint(path, net.state(), {"net": net.spec}, epoch=epoch, meta=meta)


def load_mlp(path: str | Path) -> Mlp:
    header, arrays = load_checkpoint(path)
    spec = header["specs"]["net"]
    net = Mlp(spec, np.random.default_rng(0))
    net.load_state(arrays)
    return net
