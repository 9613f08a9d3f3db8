"""Time-conditioned MLP vector field with hand-written reverse mode and Adam.

The network maps ``(x, t)`` with ``x`` in R^2 to a velocity in R^2; ``t`` is
appended as a third input coordinate. Hidden layers use a smooth activation so
that input derivatives exist everywhere; the output layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .distributions import SeedLike, as_rng

CHECKPOINT_FORMAT = "sgfm-checkpoint"
CHECKPOINT_VERSION = 1


def _silu(z):
    s = expit(z)
    return z * s, s * (1.0 + z * (1.0 - s))


def _softplus(z):
    return np.logaddexp(0.0, z), expit(z)


def _tanh(z):
    a = np.tanh(z)
    return a, 1.0 - a**2


ACTIVATIONS = {"silu": _silu, "softplus": _softplus, "tanh": _tanh}


@dataclass
class ModelParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "silu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        if self.weights[0].shape[0] != 3 or self.weights[-1].shape[1] != 2:
            raise ValueError("network must map 3 inputs (x, t) to 2 outputs")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input width {w.shape[0]} != {self.weights[i - 1].shape[1]}")

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "ModelParams":
        return ModelParams(list(arrays[0::2]), list(arrays[1::2]), self.activation)

    def copy(self) -> "ModelParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def ravel(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unravel(self, flat: np.ndarray) -> "ModelParams":
        arrays, i = [], 0
        for a in self.arrays():
            arrays.append(np.asarray(flat[i : i + a.size], dtype=float).reshape(a.shape))
            i += a.size
        return self.with_arrays(arrays)


def init_params(hidden=(64, 64, 64, 64), seed: SeedLike = 0, activation: str = "silu") -> ModelParams:
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = as_rng(seed)
    sizes = [3, *hidden, 2]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ModelParams(weights, biases, activation)


def _inputs(x, t):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 2:
        raise ValueError(f"expected points of shape (n, 2), got {x.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    return np.concatenate([x, t[:, None]], axis=1)


def _forward_cache(params: ModelParams, x, t):
    act = ACTIVATIONS[params.activation]
    h = _inputs(x, t)
    hs, slopes = [h], []
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h, s = act(h @ w + b)
        hs.append(h)
        slopes.append(s)
    out = h @ params.weights[-1] + params.biases[-1]
    return out, hs, slopes


def forward(params: ModelParams, x, t) -> np.ndarray:
    """Velocity at points ``x`` (n, 2) and time ``t`` (scalar or (n,))."""
    return _forward_cache(params, x, t)[0]


def _backward(params, hs, slopes, cotangent, need_params=True):
    g = np.atleast_2d(np.asarray(cotangent, dtype=float))
    grads_w, grads_b = [], []
    for layer in range(len(params.weights) - 1, -1, -1):
        if need_params:
            grads_w.append(hs[layer].T @ g)
            grads_b.append(g.sum(axis=0))
        g = g @ params.weights[layer].T
        if layer:
            g = g * slopes[layer - 1]
    return g, grads_w[::-1], grads_b[::-1]


def vjp_params(params: ModelParams, x, t, cotangent) -> ModelParams:
    """Gradient of ``sum(cotangent * forward(params, x, t))`` w.r.t. the parameters."""
    _, hs, slopes = _forward_cache(params, x, t)
    _, gw, gb = _backward(params, hs, slopes, cotangent)
    return ModelParams(gw, gb, params.activation)


def vjp_input(params: ModelParams, x, t, cotangent) -> np.ndarray:
    """Gradient of ``sum(cotangent * forward(params, x, t))`` w.r.t. ``x``."""
    _, hs, slopes = _forward_cache(params, x, t)
    g, _, _ = _backward(params, hs, slopes, cotangent, need_params=False)
    return g[:, :2]


def value_and_vjp_params(params: ModelParams, x, t, cotangent_fn):
    """Forward pass plus parameter VJP with a cotangent computed from the output."""
    out, hs, slopes = _forward_cache(params, x, t)
    cot = cotangent_fn(out)
    _, gw, gb = _backward(params, hs, slopes, cot)
    return out, ModelParams(gw, gb, params.activation)


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return AdamState([z.copy() for z in zeros], zeros, 0, lr, beta1, beta2, eps)


def adam_step(params: ModelParams, state: AdamState, grads: ModelParams):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    garrays = grads.arrays()
    if any(g.shape != p.shape for g, p in zip(garrays, params.arrays())):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in garrays):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**step
    c2 = 1 - b2**step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), garrays, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, step, state.lr, b1, b2, state.eps)
    return params.with_arrays(new_p), new_state


# -- checkpoints -----------------------------------------------------------


def _pack(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel(order="C")]}


def _unpack(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(path, params: ModelParams, state: Optional[AdamState] = None, meta: Optional[dict] = None):
    """Write a JSON checkpoint; Python float repr makes the round trip bit-exact."""
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "activation": params.activation,
        "layers": [{"weight": _pack(w), "bias": _pack(b)} for w, b in zip(params.weights, params.biases)],
        "meta": meta or {},
    }
    if state is not None:
        record["adam"] = {
            "step": state.step,
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "m": [_pack(a) for a in state.m],
            "v": [_pack(a) for a in state.v],
        }
    Path(path).write_text(json.dumps(record, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Return ``(params, adam_state_or_None, meta)``."""
    record = json.loads(Path(path).read_text())
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an sgfm checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {record.get('version')}")
    params = ModelParams(
        [_unpack(l["weight"]) for l in record["layers"]],
        [_unpack(l["bias"]) for l in record["layers"]],
        record["activation"],
    )
    state = None
    if "adam" in record:
        a = record["adam"]
        state = AdamState(
            [_unpack(x) for x in a["m"]],
            [_unpack(x) for x in a["v"]],
            a["step"],
            a["lr"],
            a["beta1"],
            a["beta2"],
            a["eps"],
        )
    return params, state, record.get("meta", {})
