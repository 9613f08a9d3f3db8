"""Vector fields, fixed-step ODE integration, reverse mode through the solver, CFM training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import net
from .distributions import DistributionSpec, SeedLike, as_rng
from .ot import couple, draw_batch, Coupling
from .distributions import sample

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Raised when training or integration produces non-finite values."""


# -- vector fields ---------------------------------------------------------


class FlowField:
    def velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def vjp_x(self, x: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass
class LearnedField(FlowField):
    params: net.ModelParams

    def velocity(self, x, t):
        return net.forward(self.params, x, t)

    def vjp_x(self, x, t, cotangent):
        return net.vjp_input(self.params, x, t, cotangent)


@dataclass
class AffineField(FlowField):
    """OT field carrying N(0, I) to N(mu, sigma^2 I) along straight lines."""

    sigma: float = 1.0
    mu: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        self.mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (2,)).copy()

    def _denom(self, t):
        return 1.0 + t * (self.sigma - 1.0)

    def velocity(self, x, t):
        return (self.sigma - 1.0) * (x - t * self.mu) / self._denom(t) + self.mu

    def vjp_x(self, x, t, cotangent):
        return (self.sigma - 1.0) / self._denom(t) * np.asarray(cotangent, dtype=float)

    def exact_map(self, x0):
        return self.sigma * np.asarray(x0, dtype=float) + self.mu


@dataclass
class LinearField(FlowField):
    """Autonomous linear field v(x) = A x."""

    A: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if self.A.shape != (2, 2):
            raise ValueError("LinearField needs a 2x2 matrix")

    def velocity(self, x, t):
        return np.asarray(x, dtype=float) @ self.A.T

    def vjp_x(self, x, t, cotangent):
        return np.asarray(cotangent, dtype=float) @ self.A


@dataclass
class ConstantField(FlowField):
    c: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.c = np.broadcast_to(np.asarray(self.c, dtype=float), (2,)).copy()

    def velocity(self, x, t):
        return np.broadcast_to(self.c, np.shape(x)).copy()

    def vjp_x(self, x, t, cotangent):
        return np.zeros(np.shape(cotangent))


# -- integration -----------------------------------------------------------

# Explicit Runge-Kutta tableaux: (a, b, c).
TABLEAUX = {
    "euler": ([[]], [1.0], [0.0]),
    "midpoint": ([[], [0.5]], [0.0, 1.0], [0.0, 0.5]),
    "rk4": ([[], [0.5], [0.0, 0.5], [0.0, 0.0, 1.0]], [1 / 6, 1 / 3, 1 / 3, 1 / 6], [0.0, 0.5, 0.5, 1.0]),
}


@dataclass(frozen=True)
class IntegrationConfig:
    scheme: str = "euler"
    steps: int = 20

    def __post_init__(self):
        if self.scheme not in TABLEAUX:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {tuple(TABLEAUX)}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def nfe(self) -> int:
        return self.steps * len(TABLEAUX[self.scheme][1])


@dataclass
class Trajectory:
    times: np.ndarray  # (K+1,)
    states: np.ndarray  # (K+1, n, 2)


def _rk_step(field: FlowField, x, t, h, tableau, keep=False):
    a, b, c = tableau
    ks, ys = [], []
    for i in range(len(b)):
        y = x
        for j, aij in enumerate(a[i]):
            if aij:
                y = y + h * aij * ks[j]
        ys.append(y)
        ks.append(field.velocity(y, t + c[i] * h))
    out = x
    for bi, k in zip(b, ks):
        if bi:
            out = out + h * bi * k
    return (out, ys) if keep else out


def _rk_step_vjp(field: FlowField, ys, t, h, tableau, cot):
    a, b, c = tableau
    s = len(b)
    kbar = [h * b[i] * cot for i in range(s)]
    xbar = cot.copy()
    for i in range(s - 1, -1, -1):
        if not np.any(kbar[i]):
            continue
        ybar = field.vjp_x(ys[i], t + c[i] * h, kbar[i])
        xbar = xbar + ybar
        for j, aij in enumerate(a[i]):
            if aij:
                kbar[j] = kbar[j] + h * aij * ybar
    return xbar


def _check(x, what):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite state during {what}")


def integrate_trajectory(field: FlowField, x0, config: IntegrationConfig = IntegrationConfig()) -> Trajectory:
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    tableau = TABLEAUX[config.scheme]
    h = 1.0 / config.steps
    times = np.arange(config.steps + 1) * h
    times[-1] = 1.0
    states = [x]
    for k in range(config.steps):
        x = _rk_step(field, x, times[k], h, tableau)
        _check(x, "integration")
        states.append(x)
    return Trajectory(times, np.stack(states))


def integrate(field: FlowField, x0, config: IntegrationConfig = IntegrationConfig()) -> np.ndarray:
    """Transport map T(x0): the final state of the discretized flow."""
    x = np.asarray(x0, dtype=float)
    single = x.ndim == 1
    out = integrate_trajectory(field, x, config).states[-1]
    return out[0] if single else out


def vjp_through_flow(field: FlowField, x0, config: IntegrationConfig, cotangent) -> np.ndarray:
    """Reverse-mode derivative of ``cotangent . T(x0)`` w.r.t. ``x0`` for the discretized map."""
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    single = np.ndim(x0) == 1
    tableau = TABLEAUX[config.scheme]
    h = 1.0 / config.steps
    tape = []
    for k in range(config.steps):
        x, ys = _rk_step(field, x, k * h, h, tableau, keep=True)
        _check(x, "integration")
        tape.append(ys)
    g = np.atleast_2d(np.asarray(cotangent, dtype=float)).copy()
    for k in range(config.steps - 1, -1, -1):
        g = _rk_step_vjp(field, tape[k], k * h, h, tableau, g)
    return g[0] if single else g


def value_and_vjp_through_flow(field: FlowField, x0, config: IntegrationConfig, cotangent_fn):
    """``T(x0)`` and the pullback of ``cotangent_fn(T(x0))`` in a single forward pass."""
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    tableau = TABLEAUX[config.scheme]
    h = 1.0 / config.steps
    tape = []
    for k in range(config.steps):
        x, ys = _rk_step(field, x, k * h, h, tableau, keep=True)
        _check(x, "integration")
        tape.append(ys)
    g = np.atleast_2d(np.asarray(cotangent_fn(x), dtype=float)).copy()
    for k in range(config.steps - 1, -1, -1):
        g = _rk_step_vjp(field, tape[k], k * h, h, tableau, g)
    return x, g


def straightness(traj: Union[Trajectory, np.ndarray]) -> Union[float, np.ndarray]:
    """Max distance of interior points to the start-end chord, over chord length.

    Accepts a Trajectory (one value per particle) or a single path of shape (K+1, 2).
    A zero-length chord gives 0.
    """
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    single = states.ndim == 2
    if single:
        states = states[:, None, :]
    if states.shape[0] < 3:
        raise ValueError("straightness needs at least 3 trajectory points")
    start, end = states[0], states[-1]
    chord = end - start
    length2 = np.sum(chord**2, axis=-1)
    interior = states[1:-1] - start
    safe = np.where(length2 > 0, length2, 1.0)
    s = np.clip(np.sum(interior * chord, axis=-1) / safe, 0.0, 1.0)
    dist = np.linalg.norm(interior - s[..., None] * chord, axis=-1)
    out = np.where(length2 > 0, dist.max(axis=0) / np.sqrt(safe), 0.0)
    return float(out[0]) if single else out


# -- conditional flow matching ---------------------------------------------


def cfm_loss(params: net.ModelParams, coupling: Coupling, t=None, seed: SeedLike = None):
    """Mean over pairs of ||v(x_t, t) - (x1 - x0)||^2 and its parameter gradient.

    ``t`` holds one time per pair; drawn from U[0, 1] with ``seed`` when omitted.
    """
    x0, x1 = coupling.pairs()
    n = len(x0)
    if n == 0:
        raise ValueError("empty coupling")
    if t is None:
        t = as_rng(seed).random(n)
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    xt = (1 - t)[:, None] * x0 + t[:, None] * x1
    target = x1 - x0
    resid = {}

    def cot(out):
        if not np.all(np.isfinite(out)):
            raise DivergenceError("non-finite network output in CFM loss")
        resid["r"] = out - target
        return 2.0 * resid["r"] / n

    _, grads = net.value_and_vjp_params(params, xt, t, cot)
    loss = float(np.sum(resid["r"] ** 2) / n)
    return loss, grads


@dataclass
class TrainResult:
    params: net.ModelParams
    opt_state: net.AdamState
    losses: np.ndarray
    init_params: Optional[net.ModelParams] = None


def train(
    source: DistributionSpec,
    target: Union[DistributionSpec, np.ndarray],
    coupling: str = "ot",
    epochs: int = 20000,
    batch_size: int = 256,
    seed: SeedLike = 0,
    hidden=(64, 64, 64, 64),
    activation: str = "silu",
    lr: float = 1e-3,
    params: Optional[net.ModelParams] = None,
) -> TrainResult:
    """Fit a vector field with the CFM objective; one minibatch per epoch."""
    rng = as_rng(seed)
    if params is None:
        params = net.init_params(hidden, rng, activation)
    init = params.copy()
    state = net.adam_init(params, lr=lr)
    losses = np.empty(epochs)
    for step in range(epochs):
        x0 = sample(source, batch_size, rng)
        x1 = draw_batch(target, batch_size, rng)
        t = rng.random(batch_size)
        loss, grads = cfm_loss(params, couple(x0, x1, coupling), t)
        if not np.isfinite(loss):
            raise DivergenceError(f"CFM loss is non-finite at epoch {step}")
        params, state = net.adam_step(params, state, grads)
        losses[step] = loss
        if step and step % 1000 == 0:
            log.debug("epoch %d loss %.4f", step, np.mean(losses[step - 1000 : step]))
    return TrainResult(params, state, losses, init)
