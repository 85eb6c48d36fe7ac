"""Analytics of discrete parabolic measure: kernel densities, doubling, the
A-infinity characteristic and reverse Hoelder quotients."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import BoundaryBall, Grid
from .solver import MeasureWeights

__all__ = [
    "KernelDensity",
    "ball_mask",
    "parabolic_measure",
    "DoublingRow",
    "doubling_table",
    "greedy_fraction",
    "ainfty_scan",
    "reverse_holder",
    "best_p",
]


@dataclass
class KernelDensity:
    """K = omega / sigma on the lateral boundary cells for one pole."""

    K: np.ndarray                 # (nt, *lat)
    sigma: np.ndarray             # (nt, *lat) cell measure
    pole: Optional[tuple] = None
    lateral_mass: float = 1.0
    other_mass: float = 0.0

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.K.shape)
        if np.any(self.K < -1e-12):
            raise ValueError("kernel density must be nonnegative")
        self.K = np.maximum(self.K, 0.0)

    @property
    def omega(self) -> np.ndarray:
        return self.K * self.sigma

    @classmethod
    def from_weights(cls, w: MeasureWeights) -> "KernelDensity":
        g = w.grid
        lat = np.maximum(np.asarray(w.lateral, dtype=float), 0.0)
        K = lat / g.sigma_cell
        other = float(w.top.sum() + w.side.sum() + w.initial.sum())
        return cls(K, g.sigma_cell, tuple(w.pole), float(lat.sum()), other)


def ball_mask(grid: Grid, ball: BoundaryBall, burn_in: int = 0) -> np.ndarray:
    """Boundary cells whose centres satisfy |x - y|^2 + |t - s| < r^2."""
    t = grid.times.reshape((-1,) + (1,) * grid.m)
    d2 = np.abs(t - ball.s)
    if grid.m:
        X = grid.lateral_mesh()
        d2 = d2 + np.sum((X - np.asarray(ball.y, float)) ** 2, axis=-1)[None]
    mask = np.broadcast_to(d2 < ball.r ** 2, grid.boundary_shape).copy()
    mask[:burn_in] = False
    return mask


def parabolic_measure(weights: Union[MeasureWeights, np.ndarray], E: np.ndarray) -> float:
    """omega(E): the sum of the lateral weights over the cells of E."""
    lat = weights.lateral if isinstance(weights, MeasureWeights) else np.asarray(weights)
    E = np.asarray(E, dtype=bool)
    if not E.any():
        return 0.0
    return float(np.sum(lat[E]))


@dataclass
class DoublingRow:
    r: float
    omega_r: float
    omega_2r: float
    ratio: float
    flagged: bool


def doubling_table(kernel: KernelDensity, grid: Grid, balls: Sequence[BoundaryBall],
                   tol: float = 1e-14) -> list:
    """omega(Delta_2r) / omega(Delta_r) for each ball.  Balls with omega(Delta_r)
    below ``tol`` are flagged and carry ratio nan."""
    om = kernel.omega
    rows = []
    for b in balls:
        w1 = float(om[ball_mask(grid, b)].sum())
        w2 = float(om[ball_mask(grid, b.doubled())].sum())
        bad = w1 <= tol
        rows.append(DoublingRow(b.r, w1, w2, float("nan") if bad else w2 / w1, bad))
    return rows


def greedy_fraction(k: np.ndarray, s: np.ndarray, delta: float) -> float:
    """Largest sigma-fraction of a (fractional) subset with omega-fraction <= delta.

    Cells are taken in order of increasing density, the last one partially:
    this is the optimum of the continuous knapsack problem.
    """
    k = np.asarray(k, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    S = s.sum()
    w = k * s
    W = w.sum()
    if S <= 0:
        return 0.0
    if W <= 0:
        return 1.0
    order = np.argsort(k, kind="stable")
    cw = np.cumsum(w[order])
    cs = np.cumsum(s[order])
    budget = delta * W
    j = int(np.searchsorted(cw, budget, side="right"))
    if j >= k.size:
        return 1.0
    full = cs[j - 1] if j > 0 else 0.0
    used = cw[j - 1] if j > 0 else 0.0
    frac = (budget - used) / w[order[j]] if w[order[j]] > 0 else 1.0
    return float(min(1.0, (full + frac * s[order[j]]) / S))


def _masks(grid, balls):
    for b in balls:
        yield b if isinstance(b, np.ndarray) else ball_mask(grid, b)


def ainfty_scan(kernel: KernelDensity, grid: Grid, balls, deltas: Sequence[float]) -> dict:
    """Table eps[ball, delta] of worst sigma-fractions and eps(delta) = max over balls."""
    table = []
    for m in _masks(grid, balls):
        k = kernel.K[m]
        s = kernel.sigma[m]
        table.append([greedy_fraction(k, s, d) for d in deltas])
    table = np.array(table).reshape(-1, len(deltas))
    return {"deltas": list(map(float, deltas)), "table": table,
            "eps": table.max(axis=0) if table.size else np.zeros(len(deltas))}


def _rh_quotient(k, s, p):
    S = s.sum()
    mean = float(np.sum(k * s) / S)
    if mean <= 0:
        return 1.0
    q = k / mean                       # ratio based, so scale free
    return float((np.sum(q ** p * s) / S) ** (1.0 / p))


def reverse_holder(kernel: KernelDensity, grid: Grid, p: float, balls) -> float:
    """sup over balls of (avg K^p)^(1/p) / avg K."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    best = 1.0
    for m in _masks(grid, balls):
        best = max(best, _rh_quotient(kernel.K[m], kernel.sigma[m], p))
    return best


def best_p(kernel: KernelDensity, grid: Grid, balls, cap: float = 10.0,
           bound: float = 2.0, iters: int = 30) -> float:
    """Largest p <= cap whose reverse Hoelder quotient stays below ``bound``."""
    masks = list(_masks(grid, balls))
    q = lambda p: reverse_holder(kernel, grid, p, masks)
    if q(cap) <= bound:
        return float(cap)
    lo, hi = 1.0, float(cap)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if q(mid) <= bound:
            lo = mid
        else:
            hi = mid
    return lo
