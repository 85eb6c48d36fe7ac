"""Adapted-distance mapping that flattens {x0 > psi} onto the half space.

rho(x0, x, t) = (x0 + P_{gamma x0} psi(x, t), x, t), where P_lam is a
parabolically rescaled even bump of unit mass.  If u solves
u_t = div(A grad u) on the graph domain then v = u o rho solves

    v_t = div(A_rho grad v) + B_rho . grad v,

with J = d(rho)/dX, D = det J = 1 + d(phi)/dx0 and

    A_rho = J^-1 A J^-T,   B_rho = A_rho^T grad(log D) + (phi_t / D) e_0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .geometry import GeometryError, GraphDomain, Grid
from .solver import Coefficients

__all__ = [
    "Mollifier",
    "mollified_graph",
    "AdaptedMap",
    "build_map",
    "TransformedCoefficients",
    "transform_coefficients",
    "weak_residual",
]


@dataclass(frozen=True)
class Mollifier:
    """Product of 1-D bumps exp(-1/(1 - s^2)) on the unit parabolic cube.

    The profile is sampled at ``npts`` midpoints per axis and renormalised so
    the discrete weights sum to one; symmetric nodes keep it even.
    """

    npts: int = 17

    def __post_init__(self):
        if self.npts < 17:
            raise ValueError("use at least 17 samples per axis")

    def axis(self):
        s = -1.0 + (np.arange(self.npts) + 0.5) * (2.0 / self.npts)
        w = np.exp(-1.0 / (1.0 - s * s))
        return s, w / w.sum()

    def samples(self, n: int):
        """Nodes (xi, tau) with weights for n - 1 lateral axes and time."""
        s, w = self.axis()
        grids = np.meshgrid(*([s] * n), indexing="ij")
        wg = np.meshgrid(*([w] * n), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        weights = np.prod(np.stack([g.ravel() for g in wg], axis=-1), axis=-1)
        return nodes[:, :-1], nodes[:, -1], weights


def mollified_graph(domain: GraphDomain, lam, x, t, mollifier: Optional[Mollifier] = None,
                    time_average: Optional[bool] = None, chunk: int = 2_000_000) -> np.ndarray:
    """P_lam psi at points (x, t); ``lam`` broadcasts against t.

    ``x`` has shape (..., n-1), ``t`` shape (...).  When psi does not depend
    on time the time nodes collapse (their weights sum to one per lateral node).
    """
    mol = mollifier or Mollifier()
    t = np.asarray(t, dtype=float)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), t.shape)
    m = domain.m
    x = np.broadcast_to(np.asarray(x, dtype=float), t.shape + (m,))
    xi, tau, w = mol.samples(domain.n)
    if time_average is None:
        time_average = not domain.time_dependent
    if time_average:
        # merge nodes that differ only in tau
        s, ws = mol.axis()
        if m:
            g = np.meshgrid(*([s] * m), indexing="ij")
            gw = np.meshgrid(*([ws] * m), indexing="ij")
            xi = np.stack([a.ravel() for a in g], axis=-1)
            w = np.prod(np.stack([a.ravel() for a in gw], axis=-1), axis=-1)
        else:
            xi = np.zeros((1, 0))
            w = np.ones(1)
        tau = np.zeros(len(w))
    flat_t = t.reshape(-1)
    flat_l = lam.reshape(-1)
    flat_x = x.reshape(-1, m)
    out = np.empty(flat_t.shape)
    step = max(1, chunk // len(w))
    for a in range(0, len(flat_t), step):
        b = min(len(flat_t), a + step)
        L = flat_l[a:b, None]
        tt = flat_t[a:b, None] - L * L * tau[None, :]
        xx = flat_x[a:b, None, :] - L[..., None] * xi[None, :, :]
        vals = domain.psi_at(xx, tt)
        out[a:b] = vals @ w
    return out.reshape(t.shape)


@dataclass
class AdaptedMap:
    """rho on the cells of ``grid`` (time steps t_1..t_nt).

    Arrays have shape (nt, nz, *lat), or (nz, *lat) when psi is static.
    """

    grid: Grid
    gamma: float
    phi: np.ndarray
    D: np.ndarray
    phi_x: np.ndarray          # (..., m)
    phi_t: np.ndarray
    static: bool
    trace_error: float
    min_D: float

    @property
    def rho0(self) -> np.ndarray:
        z = self.grid.heights.reshape((-1,) + (1,) * self.grid.m)
        return z + self.phi

    def jacobian(self) -> np.ndarray:
        """Spatial Jacobian d(rho)/dX per cell, shape (..., n, n)."""
        n = self.grid.n
        J = np.zeros(self.D.shape + (n, n))
        J[..., 0, 0] = self.D
        for i in range(1, n):
            J[..., 0, i] = self.phi_x[..., i - 1]
            J[..., i, i] = 1.0
        return J

    def physical_x0(self) -> np.ndarray:
        """rho0 broadcast to (nt, nz, *lat)."""
        r = self.rho0
        if self.static:
            r = np.broadcast_to(r[None], (self.grid.nt,) + r.shape)
        return r


def _cell_points(grid: Grid, times: np.ndarray):
    m = grid.m
    shape = (len(times),) + grid.cell_shape
    T = np.broadcast_to(times.reshape((-1,) + (1,) * grid.n), shape)
    Z = np.broadcast_to(grid.heights.reshape((1, -1) + (1,) * m), shape)
    if m:
        X = np.broadcast_to(grid.lateral_mesh()[None, None], shape + (m,))
    else:
        X = np.zeros(shape + (0,))
    return Z, X, T


def build_map(domain: GraphDomain, grid: Grid, gamma: float = 0.1,
              mollifier: Optional[Mollifier] = None) -> AdaptedMap:
    """Evaluate rho and its finite-difference Jacobian on the grid cells."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if domain.n != grid.n:
        raise GeometryError("domain and grid dimensions differ")
    static = not domain.time_dependent
    times = grid.times[:1] if static else grid.times
    Z, X, T = _cell_points(grid, times)
    phi = mollified_graph(domain, gamma * Z, X, T, mollifier)
    if static:
        phi = phi[0]
    off = 0 if static else 1
    d0 = np.gradient(phi, grid.h, axis=off, edge_order=2)
    D = 1.0 + d0
    if grid.m:
        gx = np.gradient(phi, *([grid.hx] * grid.m), axis=tuple(range(off + 1, off + grid.n)),
                         edge_order=2)
        if grid.m == 1:
            gx = [gx]
        phi_x = np.stack(gx, axis=-1)
    else:
        phi_x = np.zeros(phi.shape + (0,))
    if static or grid.nt < 3:
        phi_t = np.zeros(phi.shape)
    else:
        phi_t = np.gradient(phi, grid.ht, axis=0, edge_order=2)
    min_D = float(D.min())
    if min_D <= 0:
        raise GeometryError(f"map not injective: min d(rho0)/dx0 = {min_D:.3g}")
    # boundary trace at the first height
    first = phi[(slice(None),) * off + (0,)]
    Xb = X[0, 0] if grid.m else np.zeros((0,))
    if static:
        psi_b = domain.psi_at(Xb, np.full(first.shape, times[0]))
    else:
        Tb = np.broadcast_to(times.reshape((-1,) + (1,) * grid.m), first.shape)
        psi_b = domain.psi_at(np.broadcast_to(Xb, first.shape + (grid.m,)), Tb)
    trace = float(np.abs(first - psi_b).max())
    return AdaptedMap(grid, gamma, phi, D, phi_x, phi_t, static, trace, min_D)


@dataclass
class TransformedCoefficients(Coefficients):
    lambda_rho: float = float("nan")
    Lambda_rho: float = float("nan")


def _coefficient_field(A, amap: AdaptedMap) -> np.ndarray:
    grid = amap.grid
    n = grid.n
    lead = amap.D.shape
    if callable(A):
        times = grid.times[:1] if amap.static else grid.times
        Z, X, T = _cell_points(grid, times)
        R0 = amap.rho0 if not amap.static else amap.rho0[None]
        vals = np.asarray(A(R0, X, T), dtype=float)
        vals = vals.reshape(Z.shape + (n, n))
        return vals[0] if amap.static else vals
    A = np.asarray(A, dtype=float)
    if A.shape == (n, n):
        return np.broadcast_to(A, lead + (n, n))
    if A.shape[-2:] == (n, n) and A.shape[:-2] in (lead, grid.cell_shape):
        return np.broadcast_to(A, lead + (n, n))
    if A.ndim == n + 3 and amap.static:
        # time-dependent A on a static map
        return A
    raise ValueError("coefficient field has an incompatible shape")


def transform_coefficients(A: Union[np.ndarray, Callable], amap: AdaptedMap) -> TransformedCoefficients:
    """A_rho and B_rho on the grid cells of ``amap``."""
    grid = amap.grid
    n = grid.n
    Af = _coefficient_field(A, amap)
    lead = np.broadcast_shapes(Af.shape[:-2], amap.D.shape)
    D = np.broadcast_to(amap.D, lead)
    Jinv = np.zeros(lead + (n, n))
    Jinv[..., 0, 0] = 1.0 / D
    for i in range(1, n):
        Jinv[..., 0, i] = -np.broadcast_to(amap.phi_x[..., i - 1], lead) / D
        Jinv[..., i, i] = 1.0
    Ar = Jinv @ np.broadcast_to(Af, lead + (n, n)) @ np.swapaxes(Jinv, -1, -2)
    logD = np.log(amap.D)
    off = 0 if amap.static else 1
    grads = np.gradient(logD, *grid.spacings, axis=tuple(range(off, off + n)), edge_order=2)
    if n == 1:
        grads = [grads]
    glog = np.broadcast_to(np.stack(grads, axis=-1), lead + (n,))
    B = np.einsum("...ji,...j->...i", Ar, glog)
    B = B.copy()
    B[..., 0] += np.broadcast_to(amap.phi_t / amap.D, lead)
    S = 0.5 * (Ar + np.swapaxes(Ar, -1, -2))
    ev = np.linalg.eigvalsh(S.reshape(-1, n, n))
    lam, Lam = float(ev.min()), float(ev.max())
    if lam <= 0:
        raise GeometryError(f"transformed coefficients lost ellipticity (lambda = {lam:.3g})")
    if amap.static and float(np.abs(B).max()) < 1e-11 and Ar.ndim == n + 2:
        Bout = None
    else:
        Bout = B
    return TransformedCoefficients(np.ascontiguousarray(Ar), Bout, lam, Lam)


def weak_residual(amap: AdaptedMap, coeffs: Coefficients, v: np.ndarray,
                  tests: int = 4, seed: int = 0) -> float:
    """Largest normalised weak residual of v_t = div(A grad v) + B . grad v.

    ``v`` holds exact values on the cells, shape (nt, nz, *lat).  Test
    functions are smooth bumps supported inside the grid; the residual
    int(-v theta_t + A grad v . grad theta - (B . grad v) theta) is divided by
    int |theta|.
    """
    grid = amap.grid
    n = grid.n
    rng = np.random.default_rng(seed)
    axes_sp = tuple(range(1, n + 1))
    gv = np.gradient(v, *grid.spacings, axis=axes_sp, edge_order=2)
    if n == 1:
        gv = [gv]
    gv = np.stack(gv, axis=-1)
    A = coeffs.A if coeffs.A.ndim == n + 3 else np.broadcast_to(coeffs.A[None], v.shape + (n, n))
    B = np.zeros(v.shape + (n,)) if coeffs.B is None else (
        coeffs.B if coeffs.B.ndim == n + 2 else np.broadcast_to(coeffs.B[None], v.shape + (n,)))
    coords = [grid.times, grid.heights] + [grid.lateral_centers] * grid.m
    lo = [c[0] for c in coords]
    hi = [c[-1] for c in coords]
    worst = 0.0
    for _ in range(tests):
        centre = [rng.uniform(l + 0.3 * (u - l), u - 0.3 * (u - l)) for l, u in zip(lo, hi)]
        width = [0.25 * (u - l) for l, u in zip(lo, hi)]
        parts, dparts = [], []
        for c, ctr, wd in zip(coords, centre, width):
            s = (c - ctr) / wd
            inside = np.abs(s) < 1
            b = np.where(inside, np.exp(-1.0 / np.where(inside, 1 - s * s, 1.0)), 0.0)
            # central differences keep summation by parts exact on the lattice
            parts.append(b)
            dparts.append(np.gradient(b, c))

        def outer(vecs):
            out = vecs[0]
            for vv in vecs[1:]:
                out = np.multiply.outer(out, vv)
            return out

        theta = outer(parts)
        dtheta_t = outer([dparts[0]] + parts[1:])
        grad_theta = np.stack([outer(parts[:1 + i] + [dparts[1 + i]] + parts[2 + i:])
                               for i in range(n)], axis=-1)
        flux = np.einsum("...ij,...j->...i", A, gv)
        integrand = (-v * dtheta_t + np.sum(flux * grad_theta, axis=-1)
                     - np.sum(B * gv, axis=-1) * theta)
        res = abs(float(integrand.sum())) / float(np.abs(theta).sum())
        worst = max(worst, res)
    return worst
