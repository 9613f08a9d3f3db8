"""Guidance by sampling the tilted source q0'(x0) ∝ q0(x0) exp(-J(T(x0)) / λ).

Every point drawn from the tilted source is pushed through the unchanged
transport map ``T``; if the map carries q0 to q1 then the outputs follow
q1'(x1) ∝ q1(x1) exp(-J(x1) / λ).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import distributions as dist
from .distributions import DistributionSpec, GuidanceLoss, SeedLike, as_rng
from .flow import DivergenceError, FlowField, IntegrationConfig, integrate, value_and_vjp_through_flow

SAMPLERS = ("is", "ula", "mala", "hmc", "opt")
OPT_VARIANTS = ("R1", "R2", "R3", "R4", "R5", "projected")


@dataclass
class GuidanceProblem:
    source: DistributionSpec
    field: FlowField
    loss: GuidanceLoss
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)

    def transport(self, x0) -> np.ndarray:
        return integrate(self.field, x0, self.integration)

    def energy(self, x0) -> np.ndarray:
        """J(T(x0)) / λ."""
        x1 = self.transport(x0)
        if not np.all(np.isfinite(x1)):
            raise DivergenceError("transport map returned non-finite points")
        return dist.guidance_loss(self.loss, x1)

    def energy_and_grad(self, x0):
        vals = {}

        def cot(x1):
            vals["J"] = dist.guidance_loss(self.loss, x1)
            return dist.guidance_loss_grad(self.loss, x1)

        _, g = value_and_vjp_through_flow(self.field, x0, self.integration, cot)
        return vals["J"], g

    def potential(self, x0) -> np.ndarray:
        """U(x0) = -log q0(x0) + J(T(x0)) / λ, up to an additive constant."""
        x0 = np.atleast_2d(x0)
        return -dist.log_density(self.source, x0) + self.energy(x0)

    def potential_and_grad(self, x0):
        x0 = np.atleast_2d(x0)
        J, gJ = self.energy_and_grad(x0)
        return -dist.log_density(self.source, x0) + J, -dist.log_density_grad(self.source, x0) + gJ


def modified_log_density(problem: GuidanceProblem, x0) -> np.ndarray:
    out = -problem.potential(x0)
    return out[0] if np.ndim(x0) == 1 else out


def modified_grad(problem: GuidanceProblem, x0) -> np.ndarray:
    out = -problem.potential_and_grad(x0)[1]
    return out[0] if np.ndim(x0) == 1 else out


@dataclass
class WeightedSamples:
    points: np.ndarray
    weights: np.ndarray
    images: Optional[np.ndarray] = None  # T(points), when already computed

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.points):
            raise ValueError("one weight per point required")
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0, rtol=0, atol=1e-9):
            raise ValueError("weights must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, points, images=None):
        n = len(points)
        return cls(points, np.full(n, 1.0 / n), images)

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))


@dataclass
class SamplerConfig:
    """Sampler choice and hyperparameters.

    ``iterations`` defaults to 100 for the Markov chain samplers and 60 for
    ``opt``. ``n_particles`` is the importance-sampling budget (defaults to the
    number of requested outputs). With ``step_jitter="chi2"`` each chain draws
    its step as ``step_size * ζ / 2`` with ζ ~ χ²(2) at every iteration; left
    unset it is ``"chi2"`` for HMC and ULA and ``"none"`` otherwise.
    """

    variant: str = "is"
    iterations: Optional[int] = None
    step_size: float = 0.1
    step_jitter: Optional[str] = None
    leapfrog_steps: int = 5
    tune: bool = True
    warmup: int = 50
    target_accept: float = 0.6
    opt_variant: str = "R1"
    opt_lr: float = 0.01
    reg_weight: float = 1.0
    n_particles: Optional[int] = None
    resampling: str = "multinomial"

    def __post_init__(self):
        if self.variant not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.variant!r}; expected one of {SAMPLERS}")
        if self.opt_variant not in OPT_VARIANTS:
            raise ValueError(f"unknown opt variant {self.opt_variant!r}; expected one of {OPT_VARIANTS}")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step_size > 0 or not self.opt_lr > 0:
            raise ValueError("step sizes must be positive")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if self.step_jitter is None:
            self.step_jitter = "chi2" if self.variant in ("hmc", "ula") else "none"
        if self.step_jitter not in ("none", "chi2"):
            raise ValueError("step_jitter must be 'none' or 'chi2'")
        if self.resampling not in ("multinomial", "systematic"):
            raise ValueError("resampling must be 'multinomial' or 'systematic'")
        if self.n_particles is not None and self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")

    @property
    def n_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return 60 if self.variant == "opt" else 100


# -- importance sampling ---------------------------------------------------


def normalized_weights(log_w: np.ndarray) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=float)
    top = np.max(log_w)
    if not np.isfinite(top):
        raise FloatingPointError("all importance weights vanish; increase the loss scale λ")
    w = np.exp(log_w - logsumexp(log_w))
    return w / w.sum()


def sample_is(problem: GuidanceProblem, n_particles: int, seed: SeedLike = None) -> WeightedSamples:
    """Self-normalized importance sampling with q0 as proposal, w ∝ exp(-J(T(x0)) / λ)."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    rng = as_rng(seed)
    x0 = dist.sample(problem.source, n_particles, rng)
    x1 = problem.transport(x0)
    if not np.all(np.isfinite(x1)):
        raise DivergenceError("transport map returned non-finite points")
    w = normalized_weights(-dist.guidance_loss(problem.loss, x1))
    return WeightedSamples(x0, w, x1)


def resample(samples: WeightedSamples, n: int, seed: SeedLike = None, method: str = "multinomial") -> np.ndarray:
    """Indices of ``n`` draws from the weighted particle set."""
    rng = as_rng(seed)
    w = samples.weights
    if method == "multinomial":
        return rng.choice(len(w), size=n, p=w)
    if method == "systematic":
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, (rng.random() + np.arange(n)) / n, side="right")
    raise ValueError(f"unknown resampling method {method!r}")


# -- Markov chain samplers -------------------------------------------------


def _steps(config: SamplerConfig, base: float, n: int, rng) -> np.ndarray:
    if config.step_jitter == "chi2":
        return base * rng.chisquare(2, size=(n, 1)) / 2
    return np.full((n, 1), base)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite {what}")


def _tune(step, rate, target):
    return step * (1.1 if rate > target else 0.9)


def sample_ula(problem: GuidanceProblem, config: SamplerConfig, x_init, seed: SeedLike = None) -> np.ndarray:
    """Unadjusted Langevin: x <- x - η ∇U(x) + sqrt(2η) ξ."""
    rng = as_rng(seed)
    x = np.array(x_init, dtype=float, ndmin=2)
    for _ in range(config.n_iterations):
        _, g = problem.potential_and_grad(x)
        eta = _steps(config, config.step_size, len(x), rng)
        x = x - eta * g + np.sqrt(2 * eta) * rng.standard_normal(x.shape)
        _check_finite(x, "ULA state")
    return x


def mala_log_accept(u_cur, g_cur, x_cur, u_prop, g_prop, x_prop, eta) -> np.ndarray:
    """Log MH ratio for the Langevin proposal with Gaussian transition density."""
    fwd = np.sum((x_prop - x_cur + eta * g_cur) ** 2, axis=1)
    bwd = np.sum((x_cur - x_prop + eta * g_prop) ** 2, axis=1)
    eta = np.ravel(eta)
    return -u_prop + u_cur + (fwd - bwd) / (4 * eta)


def sample_mala(problem: GuidanceProblem, config: SamplerConfig, x_init, seed: SeedLike = None):
    """Metropolis-adjusted Langevin. Returns ``(final states, mean acceptance)``."""
    rng = as_rng(seed)
    x = np.array(x_init, dtype=float, ndmin=2)
    u, g = problem.potential_and_grad(x)
    step = config.step_size
    warmup = config.warmup if config.tune else 0
    accepted = []
    for it in range(warmup + config.n_iterations):
        eta = _steps(config, step, len(x), rng)
        prop = x - eta * g + np.sqrt(2 * eta) * rng.standard_normal(x.shape)
        _check_finite(prop, "MALA proposal")
        u_p, g_p = problem.potential_and_grad(prop)
        log_a = mala_log_accept(u, g, x, u_p, g_p, prop, eta)
        acc = np.log(rng.random(len(x))) < np.minimum(log_a, 0.0)
        x = np.where(acc[:, None], prop, x)
        u = np.where(acc, u_p, u)
        g = np.where(acc[:, None], g_p, g)
        if it < warmup:
            step = _tune(step, acc.mean(), config.target_accept)
        else:
            accepted.append(acc.mean())
    return x, float(np.mean(accepted))


def leapfrog(problem: GuidanceProblem, x, v, step, n_steps: int, grad0=None, return_potential=False):
    """Leapfrog integration of dx/dt = v, dv/dt = -∇U(x).

    Half kick, ``n_steps`` (drift, full kick) pairs, then a half kick back.
    ``step`` may be a scalar or an (n, 1) array of per-chain steps.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if np.any(np.asarray(step) <= 0):
        raise ValueError("leapfrog step must be positive")
    x = np.array(x, dtype=float, ndmin=2)
    v = np.array(v, dtype=float, ndmin=2)
    g = problem.potential_and_grad(x)[1] if grad0 is None else grad0
    v = v - step / 2 * g
    for _ in range(n_steps):
        x = x + step * v
        u, g = problem.potential_and_grad(x)
        v = v - step * g
    v = v + step / 2 * g
    _check_finite(x, "leapfrog position")
    _check_finite(v, "leapfrog momentum")
    if return_potential:
        return x, v, u, g
    return x, v


def hamiltonian(problem: GuidanceProblem, x, v) -> np.ndarray:
    return problem.potential(x) + 0.5 * np.sum(np.atleast_2d(v) ** 2, axis=1)


def sample_hmc(problem: GuidanceProblem, config: SamplerConfig, x_init, seed: SeedLike = None):
    """Hamiltonian Monte Carlo with K(v) = |v|^2 / 2. Returns ``(final states, mean acceptance)``."""
    rng = as_rng(seed)
    x = np.array(x_init, dtype=float, ndmin=2)
    u, g = problem.potential_and_grad(x)
    step = config.step_size
    warmup = config.warmup if config.tune else 0
    accepted = []
    for it in range(warmup + config.n_iterations):
        v = rng.standard_normal(x.shape)
        eps = _steps(config, step, len(x), rng)
        xs, vs, us, gs = leapfrog(problem, x, v, eps, config.leapfrog_steps, grad0=g, return_potential=True)
        h_cur = u + 0.5 * np.sum(v**2, axis=1)
        h_new = us + 0.5 * np.sum(vs**2, axis=1)
        if not np.all(np.isfinite(h_new)):
            raise DivergenceError("non-finite Hamiltonian")
        acc = np.log(rng.random(len(x))) < np.minimum(h_cur - h_new, 0.0)
        x = np.where(acc[:, None], xs, x)
        u = np.where(acc, us, u)
        g = np.where(acc[:, None], gs, g)
        if it < warmup:
            step = _tune(step, acc.mean(), config.target_accept)
        else:
            accepted.append(acc.mean())
    return x, float(np.mean(accepted))


# -- optimization-based sampling -------------------------------------------


def regularizer(variant: str, x: np.ndarray):
    """Value and gradient of the source-space regularizer, per point."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    r2 = np.sum(x**2, axis=1)
    r = np.sqrt(r2)
    if variant == "R1":
        return r2, 2 * x
    if variant == "R2":
        if d == 2:
            return r2 / 2, x.copy()
        if np.any(r == 0):
            raise ValueError("R2 regularizer is singular at the origin")
        return -(d - 2) * np.log(r) + r2 / 2, -(d - 2) * x / r2[:, None] + x
    if variant == "R3":
        return (r2 - d) ** 2, 4 * (r2 - d)[:, None] * x
    if variant == "R4":
        return np.abs(r2 - d), 2 * np.sign(r2 - d)[:, None] * x
    if variant == "R5":
        safe = np.where(r > 0, r, 1.0)
        coef = np.where(r > 0, 2 * (r - np.sqrt(d)) / safe, 0.0)
        return (r - np.sqrt(d)) ** 2, coef[:, None] * x
    raise ValueError(f"unknown regularizer {variant!r}")


def project_shell(x, d: Optional[int] = None) -> np.ndarray:
    """Radially project onto {x : | |x|^2 - d | <= sqrt(2d)}; feasible points are unchanged."""
    x = np.array(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d = x.shape[1] if d is None else d
    if d < 1:
        raise ValueError("d must be >= 1")
    lo = max(d - np.sqrt(2 * d), 0.0)
    hi = d + np.sqrt(2 * d)
    r2 = np.sum(x**2, axis=1)
    out = x.copy()
    bad = (r2 < lo) | (r2 > hi)
    zero = bad & (r2 == 0)
    scale = np.sqrt(np.clip(r2, lo, hi) / np.where(r2 > 0, r2, 1.0))
    out[bad & ~zero] *= scale[bad & ~zero, None]
    out[zero] = 0.0
    out[zero, 0] = np.sqrt(lo)
    return out[0] if single else out


def sample_opt(problem: GuidanceProblem, config: SamplerConfig, x_init, seed: SeedLike = None) -> np.ndarray:
    """Gradient descent on J(T(x0)) / λ + w R(x0), or projected descent onto the shell."""
    x = np.array(x_init, dtype=float, ndmin=2)
    projected = config.opt_variant == "projected"
    if projected:
        x = project_shell(x)
    for _ in range(config.n_iterations):
        J, g = problem.energy_and_grad(x)
        if projected:
            obj = J
        else:
            R, gR = regularizer(config.opt_variant, x)
            obj = J + config.reg_weight * R
            g = g + config.reg_weight * gR
        if not np.all(np.isfinite(obj)):
            raise DivergenceError("non-finite optimization objective")
        x = x - config.opt_lr * g
        if projected:
            x = project_shell(x)
        _check_finite(x, "optimization iterate")
    return x


# -- end to end ------------------------------------------------------------


@dataclass
class GuideResult:
    x1: np.ndarray
    x0: np.ndarray
    acceptance: Optional[float] = None
    ess: Optional[float] = None


def guide(problem: GuidanceProblem, config: SamplerConfig, n: int, seed: SeedLike = None) -> GuideResult:
    """Draw ``n`` source points from the tilted source and transport them."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_rng(seed)
    acceptance = ess = None
    if config.variant == "is":
        ws = sample_is(problem, config.n_particles or n, rng)
        idx = resample(ws, n, rng, config.resampling)
        return GuideResult(ws.images[idx], ws.points[idx], None, ws.ess())
    x_init = dist.sample(problem.source, n, rng)
    if config.variant == "ula":
        x0 = sample_ula(problem, config, x_init, rng)
    elif config.variant == "mala":
        x0, acceptance = sample_mala(problem, config, x_init, rng)
    elif config.variant == "hmc":
        x0, acceptance = sample_hmc(problem, config, x_init, rng)
    else:
        x0 = sample_opt(problem, config, x_init, rng)
    return GuideResult(problem.transport(x0), x0, acceptance, ess)
