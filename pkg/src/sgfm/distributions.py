"""2D source/target distributions and guidance losses."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

# Stand-in for log(0); finite so that differences and exp() never produce NaN.
NEG_INF = -1e30

FAMILIES = ("eight_gaussians", "moons", "s_curve", "circle", "uniform_square", "gaussian_std")
DENSITY_FAMILIES = ("gaussian_std", "uniform_square", "eight_gaussians")

SeedLike = Union[int, np.random.Generator, None]


def as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seed(master: int, name: str, index: int = 0) -> int:
    """Platform-stable sub-seed from (master seed, component name, index)."""
    digest = hashlib.sha256(f"{int(master)}:{name}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _eight_centers(radius: float) -> np.ndarray:
    angles = np.arange(8) * (np.pi / 4)
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _rescale(x: np.ndarray, lo: Sequence[float], hi: Sequence[float], half_width: float) -> np.ndarray:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return (x - lo) / (hi - lo) * (2 * half_width) - half_width


@dataclass(frozen=True)
class DistributionSpec:
    """A named 2D distribution.

    Only the parameters relevant to ``name`` are used: ``centers``/``std`` for
    eight_gaussians, ``low``/``high`` for uniform_square, ``radius``/``noise``
    for circle, ``noise``/``half_width`` for moons and s_curve.
    """

    name: str
    std: float = 0.15
    radius: float = 2.0
    noise: float = 0.05
    low: tuple[float, float] = (-4.0, -4.0)
    high: tuple[float, float] = (4.0, 4.0)
    half_width: float = 3.0
    centers: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown distribution family {self.name!r}; expected one of {FAMILIES}")
        if self.std <= 0:
            raise ValueError("component std must be positive")
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")
        if self.noise < 0:
            raise ValueError("noise std must be nonnegative")
        if any(h <= l for l, h in zip(self.low, self.high)):
            raise ValueError("box bounds must be nonempty")

    @property
    def mixture_centers(self) -> np.ndarray:
        if self.centers is not None:
            return np.asarray(self.centers, dtype=float)
        return _eight_centers(2 * np.sqrt(2))

    @property
    def has_density(self) -> bool:
        return self.name in DENSITY_FAMILIES


def make_distribution(name: str, **params) -> DistributionSpec:
    if "centers" in params and params["centers"] is not None:
        params["centers"] = tuple(tuple(float(v) for v in c) for c in params["centers"])
    for key in ("low", "high"):
        if key in params:
            params[key] = tuple(float(v) for v in params[key])
    return DistributionSpec(name=name, **params)


def sample(spec: DistributionSpec, n: int, seed: SeedLike = None) -> np.ndarray:
    """Draw ``n`` i.i.d. points, shape (n, 2)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_rng(seed)
    name = spec.name
    if name == "gaussian_std":
        return rng.standard_normal((n, 2))
    if name == "uniform_square":
        return rng.uniform(spec.low, spec.high, size=(n, 2))
    if name == "eight_gaussians":
        centers = spec.mixture_centers
        idx = rng.integers(len(centers), size=n)
        return centers[idx] + spec.std * rng.standard_normal((n, 2))
    if name == "circle":
        theta = rng.uniform(0, 2 * np.pi, size=n)
        pts = spec.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return pts + spec.noise * rng.standard_normal((n, 2))
    if name == "moons":
        upper = rng.random(n) < 0.5
        t = rng.uniform(0, np.pi, size=n)
        x = np.where(upper, np.cos(t), 1 - np.cos(t))
        y = np.where(upper, np.sin(t), 0.5 - np.sin(t))
        pts = np.stack([x, y], axis=1) + spec.noise * rng.standard_normal((n, 2))
        return _rescale(pts, (-1.0, -0.5), (2.0, 1.0), spec.half_width)
    if name == "s_curve":
        t = 3 * np.pi * (rng.random(n) - 0.5)
        pts = np.stack([np.sin(t), np.sign(t) * (np.cos(t) - 1)], axis=1)
        pts = pts + spec.noise * rng.standard_normal((n, 2))
        return _rescale(pts, (-1.0, -2.0), (1.0, 2.0), spec.half_width)
    raise ValueError(f"unknown distribution family {name!r}")


def _require_density(spec: DistributionSpec):
    if not spec.has_density:
        raise ValueError(f"distribution {spec.name!r} does not expose a density")


def log_density(spec: DistributionSpec, x: np.ndarray) -> np.ndarray:
    """Unnormalized log-density at points ``x`` (shape (n, 2) or (2,))."""
    _require_density(spec)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if spec.name == "gaussian_std":
        out = -0.5 * np.sum(x**2, axis=1)
    elif spec.name == "uniform_square":
        inside = np.all((x >= spec.low) & (x <= spec.high), axis=1)
        out = np.where(inside, 0.0, NEG_INF)
    else:
        d2 = np.sum((x[:, None, :] - spec.mixture_centers[None]) ** 2, axis=2)
        out = logsumexp(-0.5 * d2 / spec.std**2, axis=1) - np.log(len(spec.mixture_centers))
    return out[0] if single else out


def log_density_grad(spec: DistributionSpec, x: np.ndarray) -> np.ndarray:
    """Gradient of :func:`log_density`; zero on the flat (and sentinel) parts of the uniform box."""
    _require_density(spec)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if spec.name == "gaussian_std":
        g = -x
    elif spec.name == "uniform_square":
        g = np.zeros_like(x)
    else:
        centers = spec.mixture_centers
        diff = x[:, None, :] - centers[None]
        logits = -0.5 * np.sum(diff**2, axis=2) / spec.std**2
        resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        g = -np.einsum("nk,nkd->nd", resp, diff) / spec.std**2
    return g[0] if single else g


# -- guidance losses -------------------------------------------------------

LOSSES = ("moon_task", "eight_gaussian_task", "s_curve_task", "quadratic_1d", "quadratic", "zero", "custom")


def _sign(v):
    # subgradient of |.| at the kink is 0
    return np.sign(v)


_BUILTIN = {
    "moon_task": (
        lambda x: x[:, 1] ** 2 / 0.4,
        lambda x: np.stack([np.zeros(len(x)), 2 * x[:, 1] / 0.4], axis=1),
    ),
    "eight_gaussian_task": (
        lambda x: 4 * np.abs(x[:, 0] + x[:, 1]),
        lambda x: 4 * _sign(x[:, 0] + x[:, 1])[:, None] * np.ones((1, 2)),
    ),
    "s_curve_task": (
        lambda x: 5 * np.abs(x[:, 0] - x[:, 1]),
        lambda x: 5 * _sign(x[:, 0] - x[:, 1])[:, None] * np.array([[1.0, -1.0]]),
    ),
    "quadratic_1d": (
        lambda x: 0.5 * x[:, 0] ** 2,
        lambda x: np.stack([x[:, 0], np.zeros(len(x))], axis=1),
    ),
    "quadratic": (
        lambda x: 0.5 * np.sum(x**2, axis=1),
        lambda x: x.copy(),
    ),
    "zero": (
        lambda x: np.zeros(len(x)),
        lambda x: np.zeros_like(x),
    ),
}


@dataclass(frozen=True)
class GuidanceLoss:
    """Energy ``J`` applied as ``J / scale``.

    For ``name="custom"`` supply ``fn`` (and ``grad`` for gradient-based
    samplers); both take and return batched arrays.
    """

    name: str
    scale: float = 1.0
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.name not in LOSSES:
            raise ValueError(f"unknown guidance loss {self.name!r}; expected one of {LOSSES}")
        if not self.scale > 0:
            raise ValueError("loss scale must be positive")
        if self.name == "custom" and self.fn is None:
            raise ValueError("custom loss requires fn")

    def _pair(self):
        if self.name == "custom":
            return self.fn, self.grad
        return _BUILTIN[self.name]


def guidance_loss(loss: GuidanceLoss, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = np.asarray(loss._pair()[0](np.atleast_2d(x)), dtype=float) / loss.scale
    return out[0] if single else out


def guidance_loss_grad(loss: GuidanceLoss, x: np.ndarray) -> np.ndarray:
    grad = loss._pair()[1]
    if grad is None:
        raise ValueError(f"loss {loss.name!r} has no gradient")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = np.asarray(grad(np.atleast_2d(x)), dtype=float) / loss.scale
    return out[0] if single else out
