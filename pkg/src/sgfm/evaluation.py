"""Exact empirical Wasserstein distances, the guided-target oracle, and error curves."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import sqrtm

from . import distributions as dist
from .distributions import DistributionSpec, GuidanceLoss, SeedLike, as_rng, derive_seed as seed_for
from .guidance import GuidanceProblem, SamplerConfig, guide, normalized_weights
from .ot import solve_assignment

MAX_EXACT = 2000


def wasserstein(p, q, order: int = 2, seed: SeedLike = 0, max_points: int = MAX_EXACT) -> float:
    """Exact W_order between two uniform empirical measures via optimal assignment.

    Unequal batches are subsampled (without replacement) to the smaller size,
    and both are capped at ``max_points``. ``seed=None`` gives a random subsample.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if q.ndim == 1:
        q = q[:, None]
    if len(p) == 0 or len(q) == 0:
        raise ValueError("empty batch")
    n = min(len(p), len(q), max_points)
    # Same-seeded streams per side, so a batch compared with itself subsamples identically.
    base = as_rng(seed).integers(2**63) if isinstance(seed, np.random.Generator) else seed
    if len(p) > n:
        p = p[np.sort(as_rng(base).choice(len(p), n, replace=False))]
    if len(q) > n:
        q = q[np.sort(as_rng(base).choice(len(q), n, replace=False))]
    d = np.sqrt(np.maximum(np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=2), 0.0))
    cost = d if order == 1 else d**2
    _, total = solve_assignment(cost, canonical=False)
    return float((max(total, 0.0) / n) ** (1.0 / order))


def gaussian_w2(mean_a, cov_a, mean_b, cov_b) -> float:
    """Closed-form W2 between two Gaussians N(mean_a, cov_a) and N(mean_b, cov_b)."""
    mean_a, mean_b = np.atleast_1d(mean_a).astype(float), np.atleast_1d(mean_b).astype(float)
    cov_a, cov_b = np.atleast_2d(cov_a).astype(float), np.atleast_2d(cov_b).astype(float)
    root_b = sqrtm(cov_b).real
    cross = sqrtm(root_b @ cov_a @ root_b).real
    w2sq = np.sum((mean_a - mean_b) ** 2) + np.trace(cov_a + cov_b - 2 * cross)
    return float(np.sqrt(max(w2sq, 0.0)))


def moment_w2(points, mean, cov) -> float:
    """W2 between the moment-matched Gaussian of ``points`` and N(mean, cov)."""
    points = np.asarray(points, dtype=float)
    return gaussian_w2(points.mean(axis=0), np.cov(points, rowvar=False), mean, cov)


@dataclass(frozen=True)
class OracleSpec:
    target: DistributionSpec
    loss: GuidanceLoss
    proposals: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.proposals < 1000:
            raise ValueError("oracle needs at least 1000 proposals")


def oracle_weights(oracle: OracleSpec, x: np.ndarray) -> np.ndarray:
    return normalized_weights(-dist.guidance_loss(oracle.loss, x))


def oracle_guided_samples(oracle: OracleSpec, n_out: int, seed: SeedLike = None) -> np.ndarray:
    """Draws from q1' ∝ q1 exp(-J / λ) by self-normalized IS over target proposals.

    Uses no flow model. ``seed`` overrides ``oracle.seed`` when given.
    """
    rng = as_rng(oracle.seed if seed is None else seed)
    x = dist.sample(oracle.target, oracle.proposals, rng)
    w = oracle_weights(oracle, x)
    return x[rng.choice(len(x), size=n_out, p=w)]


@dataclass(frozen=True)
class Row:
    sampler: str
    budget: int
    seed: int
    w1: float
    w2: float
    wall_ms: float


def _with_budget(config: SamplerConfig, budget: int) -> SamplerConfig:
    if config.variant == "is":
        return replace(config, n_particles=budget)
    return replace(config, iterations=budget)


def error_curve(
    problem: GuidanceProblem,
    oracle: OracleSpec,
    samplers: dict[str, SamplerConfig],
    budgets: Sequence[int],
    seeds: Sequence[int],
    n_generated: int = 1000,
    n_oracle: int = 10_000,
    timing: bool = True,
) -> list[Row]:
    """One row per (sampler, budget, seed); distances to a per-seed oracle batch.

    For IS the budget is the particle count, for the other samplers the
    number of iterations.
    """
    rows = []
    for seed in seeds:
        reference = oracle_guided_samples(oracle, n_oracle, seed=seed_for(seed, "oracle"))
        for name, base in samplers.items():
            for budget in budgets:
                cfg = _with_budget(base, budget)
                start = time.perf_counter()
                out = guide(problem, cfg, n_generated, seed=seed_for(seed, "guide", budget))
                wall = (time.perf_counter() - start) * 1e3 if timing else 0.0
                w_seed = seed_for(seed, "subsample")
                rows.append(
                    Row(name, int(budget), int(seed),
                        wasserstein(out.x1, reference, 1, seed=w_seed),
                        wasserstein(out.x1, reference, 2, seed=w_seed),
                        wall)
                )
    return sorted(rows, key=lambda r: (r.sampler, r.budget, r.seed))


@dataclass(frozen=True)
class Summary:
    sampler: str
    budget: int
    median_w1: float
    q25_w1: float
    q75_w1: float
    mean_w1: float
    std_w1: float
    median_w2: float
    mean_w2: float
    std_w2: float


def summarize(rows: Sequence[Row]) -> list[Summary]:
    groups: dict[tuple[str, int], list[Row]] = {}
    for r in rows:
        groups.setdefault((r.sampler, r.budget), []).append(r)
    out = []
    for (sampler, budget), rs in sorted(groups.items()):
        w1 = np.array([r.w1 for r in rs])
        w2 = np.array([r.w2 for r in rs])
        out.append(Summary(sampler, budget, float(np.median(w1)), float(np.quantile(w1, 0.25)),
                           float(np.quantile(w1, 0.75)), float(w1.mean()), float(w1.std()),
                           float(np.median(w2)), float(w2.mean()), float(w2.std())))
    return out
