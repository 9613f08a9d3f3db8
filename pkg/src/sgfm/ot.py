"""Exact minibatch optimal-transport couplings under squared Euclidean cost."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .distributions import DistributionSpec, SeedLike, as_rng, sample

COUPLINGS = ("ot", "independent")


@dataclass
class Coupling:
    """Source point ``i`` is paired with target point ``perm[i]``."""

    source: np.ndarray
    target: np.ndarray
    perm: np.ndarray
    cost: float

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.source, self.target[self.perm]


def cost_matrix(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.ndim == 1:
        source = source[:, None]
    if target.ndim == 1:
        target = target[:, None]
    if source.shape != target.shape:
        raise ValueError(f"batch shapes differ: {source.shape} vs {target.shape}")
    diff = source[:, None, :] - target[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


def _column_potentials(cost, perm):
    # Shortest-path potentials on columns: relaxing edge perm[r] -> j with weight
    # cost[r, j] - cost[r, perm[r]] yields a dual certificate for ``perm``.
    n = len(perm)
    w = cost - cost[np.arange(n), perm][:, None]
    v = np.zeros(n)
    for _ in range(n):
        cand = np.min(v[perm][:, None] + w, axis=0)
        new = np.minimum(v, cand)
        if np.array_equal(new, v):
            break
        v = new
    return v


def _lexicographic_min(cost, perm):
    n = len(perm)
    v = _column_potentials(cost, perm)
    u = cost[np.arange(n), perm] - v[perm]
    reduced = cost - u[:, None] - v[None, :]
    tol = 1e-10 * max(1.0, float(np.max(np.abs(cost))))
    tight = reduced <= tol
    if tight.sum() == n:
        return perm
    perm = perm.copy()
    row_of = np.empty(n, dtype=int)
    row_of[perm] = np.arange(n)
    for i in range(n):
        for j in np.flatnonzero(tight[i, : perm[i]]):
            r = row_of[j]
            if r < i:
                continue
            path = _alternating_path(tight, perm, row_of, start=r, goal=perm[i], skip_col=j, min_row=i)
            if path is None:
                continue
            goal = perm[i]
            perm[i] = j
            row_of[j] = i
            for row, col in path:
                perm[row] = col
                row_of[col] = row
            assert perm[path[-1][0]] == goal
            break
    return perm


def _alternating_path(tight, perm, row_of, start, goal, skip_col, min_row):
    # BFS over rows > min_row through tight edges, from ``start`` to column ``goal``.
    parent = {start: None}
    frontier = [start]
    while frontier:
        nxt = []
        for r in frontier:
            for c in np.flatnonzero(tight[r]):
                if c == skip_col or c == perm[r]:
                    continue
                if c == goal:
                    path = [(r, c)]
                    while parent[r] is not None:
                        r, c = parent[r]
                        path.append((r, c))
                    return path[::-1]
                r2 = row_of[c]
                if r2 <= min_row or r2 in parent:
                    continue
                parent[r2] = (r, c)
                nxt.append(r2)
        frontier = nxt
    return None


def solve_assignment(cost, canonical: bool = True) -> tuple[np.ndarray, float]:
    """Minimum-cost bijection for a square cost matrix.

    Returns ``(perm, total)`` with row ``i`` assigned to column ``perm[i]``.
    With ``canonical=True`` ties are broken toward the lexicographically
    smallest ``perm`` among all minimizers.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    _, perm = linear_sum_assignment(cost)
    if canonical and len(perm) > 1:
        perm = _lexicographic_min(cost, perm)
    return perm, float(cost[np.arange(len(perm)), perm].sum())


def couple(source: np.ndarray, target: np.ndarray, mode: str = "ot") -> Coupling:
    if mode not in COUPLINGS:
        raise ValueError(f"unknown coupling mode {mode!r}")
    c = cost_matrix(source, target)
    if mode == "ot":
        perm, total = solve_assignment(c)
    else:
        perm = np.arange(len(source))
        total = float(np.trace(c))
    return Coupling(np.asarray(source, float), np.asarray(target, float), perm, total)


def draw_batch(target: Union[DistributionSpec, np.ndarray], batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(target, DistributionSpec):
        return sample(target, batch_size, rng)
    target = np.asarray(target, dtype=float)
    replace = batch_size > len(target)
    return target[rng.choice(len(target), size=batch_size, replace=replace)]


def ot_minibatch(source: DistributionSpec, target, batch_size: int = 256, seed: SeedLike = None,
                 mode: str = "ot") -> Coupling:
    """Sample a source minibatch, draw a target minibatch, and pair them."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    rng = as_rng(seed)
    x0 = sample(source, batch_size, rng)
    x1 = draw_batch(target, batch_size, rng)
    return couple(x0, x1, mode)
