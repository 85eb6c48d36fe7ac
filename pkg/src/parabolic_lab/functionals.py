"""Cone functionals, Carleson energies and norms, and parabolic BMO on the grid.

Boundary points are the lateral boundary cells (t_k, x_i), k = 1..nt.  A
cell (t_k', y_z, x_i') lies in the cone of aperture ``a`` over (t_k, x_i)
when |x_i' - x_i| + |t_k' - t_k|^(1/2) < a y_z, membership by cell centre.
The cell directly above a boundary point is always a member, so a cone is
never empty once it contains a height.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage, signal

from .geometry import Grid, BoundaryBall, mean_oscillation_sup
from .oracle import cone_slice_constant
from .solver import DiscreteSolution

__all__ = [
    "ConeError",
    "Cone",
    "cone_stencil",
    "ntmax",
    "square_function",
    "square_integral",
    "energy_integral",
    "carleson_energy",
    "sup_ball_energy",
    "CarlesonDensity",
    "carleson_norm",
    "cube_family",
    "oscillation_density",
    "gradient_density",
    "perturbation_density",
    "bmo_norm",
]


class ConeError(ValueError):
    """Degenerate cone request."""


@dataclass(frozen=True)
class Cone:
    a: float = 2.0
    r: Optional[float] = None

    def contains(self, x, t, y0, y, s) -> bool:
        d = float(np.linalg.norm(np.asarray(y, float) - np.asarray(x, float))) if len(x) else 0.0
        ok = d + abs(s - t) ** 0.5 < self.a * y0 and y0 > 0
        return ok and (self.r is None or y0 < self.r)


def cone_stencil(grid: Grid, a: float, y0: float) -> np.ndarray:
    """Boolean stencil over offsets (dk, di...) of the cone slice at height y0."""
    R = a * y0
    Kt = int(math.floor((R * R) / grid.ht - 1e-12)) if R * R > grid.ht else 0
    Kx = int(math.floor(R / grid.hx - 1e-12)) if grid.m and R > grid.hx else 0
    dk = np.arange(-Kt, Kt + 1)
    axes = [dk] + [np.arange(-Kx, Kx + 1)] * grid.m
    mesh = np.meshgrid(*axes, indexing="ij")
    dist = np.sqrt(np.abs(mesh[0]) * grid.ht)
    if grid.m:
        dist = dist + grid.hx * np.sqrt(sum(g.astype(float) ** 2 for g in mesh[1:]))
    st = dist < R
    st[(Kt,) + (Kx,) * grid.m] = True
    return st


def _heights_below(grid: Grid, r: Optional[float]) -> np.ndarray:
    r = grid.H if r is None else r
    zs = np.nonzero(grid.heights < r)[0]
    if zs.size == 0:
        raise ConeError("truncation height below the first cell centre")
    return zs


def _steps(sol: DiscreteSolution, skip: int) -> slice:
    return slice(1 + skip, sol.grid.nt + 1)


def ntmax(sol: DiscreteSolution, a: float = 2.0, r: Optional[float] = None,
          skip: int = 0) -> np.ndarray:
    """N_a^r(v) on the boundary cells of steps skip+1..nt."""
    grid = sol.grid
    if a <= 0:
        raise ConeError("aperture must be positive")
    v = np.abs(sol.v[_steps(sol, skip)])
    out = np.zeros((v.shape[0],) + grid.lat_shape)
    for z in _heights_below(grid, r):
        st = cone_stencil(grid, a, grid.heights[z])
        st = _clip_stencil(st, out.shape)
        vz = v[:, z]
        out = np.maximum(out, ndimage.maximum_filter(vz, footprint=st, mode="constant", cval=0.0))
    return out


def _clip_stencil(st: np.ndarray, shape: tuple) -> np.ndarray:
    sl = []
    for L, s in zip(st.shape, shape):
        K = L // 2
        keep = min(K, s - 1)
        sl.append(slice(K - keep, K + keep + 1))
    return st[tuple(sl)]


def _energy_density(sol: DiscreteSolution, skip: int) -> np.ndarray:
    g = sol.grad[_steps(sol, skip)]
    return np.sum(g * g, axis=-1)


def square_function(sol: DiscreteSolution, a: float = 2.0, r: Optional[float] = None,
                    skip: int = 0, extend: bool = False) -> np.ndarray:
    """S_a^r(v) = (sum over cone cells of y0^-n |grad v|^2 vol)^(1/2).

    With ``extend`` the boundary lattice is padded so that every boundary
    point whose cone meets the grid is included; the padded array is centred
    on the grid window.
    """
    grid = sol.grid
    if a <= 0:
        raise ConeError("aperture must be positive")
    G = _energy_density(sol, skip)
    zs = _heights_below(grid, r)
    stencils = [cone_stencil(grid, a, grid.heights[z]) for z in zs]
    base = (G.shape[0],) + grid.lat_shape
    if extend:
        pads = [max(s.shape[i] // 2 for s in stencils) for i in range(grid.n)]
        out = np.zeros(tuple(b + 2 * p for b, p in zip(base, pads)))
    else:
        out = np.zeros(base)
    for z, st in zip(zs, stencils):
        w = grid.heights[z] ** (-grid.n) * grid.cell_volume
        gz = G[:, z] * w
        if extend:
            full = signal.fftconvolve(gz, st.astype(float), mode="full") if st.size > 1 else gz
            off = [p - s // 2 for p, s in zip(pads, st.shape)]
            sl = tuple(slice(o, o + L) for o, L in zip(off, full.shape))
            out[sl] += full
        else:
            st = _clip_stencil(st, base)
            out += signal.fftconvolve(gz, st.astype(float), mode="same") if st.size > 1 else gz
    return np.sqrt(np.maximum(out, 0.0))


def square_integral(sol: DiscreteSolution, a: float = 2.0, r: Optional[float] = None,
                    skip: int = 0) -> float:
    """Integral of S_a^r(v)^2 over the whole boundary lattice, by Fubini.

    Every grid cell at height y is counted once per lattice point whose cone
    contains it, and that count is the size of the cone slice stencil.
    """
    grid = sol.grid
    G = _energy_density(sol, skip)
    total = 0.0
    for z in _heights_below(grid, r):
        st = cone_stencil(grid, a, grid.heights[z])
        w = grid.heights[z] ** (-grid.n) * grid.cell_volume * grid.sigma_cell
        total += w * int(st.sum()) * float(G[:, z].sum())
    return total


def energy_integral(sol: DiscreteSolution, r: Optional[float] = None, skip: int = 0,
                    weight_power: float = 1.0) -> float:
    """sum of y0^p |grad v|^2 vol over cells below height r."""
    grid = sol.grid
    G = _energy_density(sol, skip)
    zs = _heights_below(grid, r)
    y = grid.heights[zs].reshape((1, -1) + (1,) * grid.m)
    return float(np.sum(G[:, zs] * y ** weight_power) * grid.cell_volume)


def _ball_sigma_count(grid: Grid, r: float) -> np.ndarray:
    return _ball_slice(grid, r, 0.0)


def _ball_slice(grid: Grid, r: float, y0: float) -> np.ndarray:
    R2 = r * r - y0 * y0
    if R2 <= 0:
        return np.zeros((1,) * grid.n, dtype=bool)
    Kt = int(math.floor(R2 / grid.ht))
    Kx = int(math.floor(math.sqrt(R2) / grid.hx)) if grid.m else 0
    axes = [np.arange(-Kt, Kt + 1)] + [np.arange(-Kx, Kx + 1)] * grid.m
    mesh = np.meshgrid(*axes, indexing="ij")
    d2 = np.abs(mesh[0]) * grid.ht
    for g in mesh[1:]:
        d2 = d2 + (g * grid.hx) ** 2
    return d2 < R2


def carleson_energy(sol: DiscreteSolution, ball: BoundaryBall,
                    delta: Optional[np.ndarray] = None, skip: int = 0) -> float:
    """sigma(Delta)^-1 sum over T(Delta) of |grad v|^2 delta vol (flat chart)."""
    grid = sol.grid
    G = _energy_density(sol, skip)
    t = grid.times[skip:].reshape((-1, 1) + (1,) * grid.m)
    z = grid.heights.reshape((1, -1) + (1,) * grid.m)
    d2 = z * z + np.abs(t - ball.s)
    tb = grid.times[skip:].reshape((-1,) + (1,) * grid.m)
    db2 = np.abs(tb - ball.s) + 0.0
    if grid.m:
        X = grid.lateral_mesh()
        lat2 = np.sum((X - np.asarray(ball.y)) ** 2, axis=-1)
        d2 = d2 + lat2[None, None]
        db2 = db2 + lat2[None]
    inside = d2 < ball.r ** 2
    dl = z if delta is None else delta[skip:] if delta.ndim == grid.n + 1 else delta
    mass = float(np.sum(np.where(inside, G * dl, 0.0)) * grid.cell_volume)
    sig = float(np.count_nonzero(db2 < ball.r ** 2)) * grid.sigma_cell
    if sig == 0:
        raise ConeError("ball contains no boundary cell")
    return mass / sig


def sup_ball_energy(sol: DiscreteSolution, radii: Sequence[float], skip: int = 0,
                    per_radius: bool = False):
    """max of carleson_energy over balls of the given radii whose Carleson
    regions lie inside the grid window (times after the burn-in)."""
    grid = sol.grid
    G = _energy_density(sol, skip)
    nt = G.shape[0]
    results = []
    for r in radii:
        zs = np.nonzero(grid.heights < r)[0]
        if zs.size == 0 or r > grid.H:
            results.append(float("nan"))
            continue
        acc = np.zeros((nt,) + grid.lat_shape)
        for z in zs:
            st = _ball_slice(grid, r, grid.heights[z])
            st = _clip_stencil(st, acc.shape)
            gz = G[:, z] * grid.heights[z] * grid.cell_volume
            acc += signal.fftconvolve(gz, st.astype(float), mode="same") if st.size > 1 else gz
        bst = _ball_slice(grid, r, 0.0)
        Kt = bst.shape[0] // 2
        Kx = bst.shape[1] // 2 if grid.m else 0
        sig = float(bst.sum()) * grid.sigma_cell
        valid = [slice(Kt, nt - Kt)] + [slice(Kx, grid.nx - Kx)] * grid.m
        block = acc[tuple(valid)]
        results.append(float(block.max()) / sig if block.size else float("nan"))
    arr = np.array(results)
    if per_radius:
        return arr
    return float(np.nanmax(arr)) if np.any(np.isfinite(arr)) else float("nan")


@dataclass
class CarlesonDensity:
    """Cellwise nonnegative density on (nt, nz, *lat) or (nz, *lat)."""

    values: np.ndarray
    grid: Grid
    tag: str = "solution-energy"

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("Carleson densities are nonnegative")

    def full(self) -> np.ndarray:
        v = self.values
        if v.ndim == self.grid.n:
            v = np.broadcast_to(v[None], (self.grid.nt,) + v.shape)
        return v


def cube_family(grid: Grid, radii: Iterable[float], skip: int = 0) -> list:
    """Boundary cubes Q_r tiling the window, as (r, time slice, lateral slices).

    Cubes of half-width r use 2r/hx lateral cells and 2r^2/ht time cells
    (rounded, at least one) and are laid edge to edge from the window origin.
    """
    fam = []
    nt = grid.nt - skip
    for r in radii:
        ct = max(1, int(round(2 * r * r / grid.ht)))
        cx = max(1, int(round(2 * r / grid.hx))) if grid.m else 1
        if ct > nt or (grid.m and cx > grid.nx):
            continue
        for k0 in range(0, nt - ct + 1, ct):
            lat_starts = itertools.product(*([range(0, grid.nx - cx + 1, cx)] * grid.m))
            for starts in lat_starts:
                fam.append((r, slice(skip + k0, skip + k0 + ct),
                            tuple(slice(s, s + cx) for s in starts)))
    return fam


def carleson_norm(mu: CarlesonDensity, family: list) -> float:
    """max over cubes Q of mu(T(Q)) / sigma(Q), with T(Q) = (0, r) x Q."""
    grid = mu.grid
    v = mu.full()
    col = np.cumsum(v, axis=1) * grid.cell_volume    # mass below each height
    best = 0.0
    for r, ts, lats in family:
        zs = np.nonzero(grid.heights < r)[0]
        if zs.size == 0:
            continue
        top = zs[-1]
        box = col[(ts, top) + lats]
        sig = box.size * grid.sigma_cell
        best = max(best, float(box.sum()) / sig)
    return best


def _ball_filter(field: np.ndarray, grid: Grid, func, shrink: float = 0.5) -> np.ndarray:
    """Apply max/min over the cells meeting B_{shrink * y}(X) at every cell.

    ``field`` has shape (T, nz, *lat); the parabolic ball is enclosed by its
    box in (t, x0, x).
    """
    out = np.empty_like(field)
    hs = grid.heights
    for z in range(grid.nz):
        rad = shrink * hs[z]
        lo = int(np.searchsorted(hs, hs[z] - rad - grid.h / 2, "right"))
        hi = int(np.searchsorted(hs, hs[z] + rad + grid.h / 2, "left"))
        lo = min(lo, z)
        hi = max(hi, z + 1)
        slab = func.reduce(field[:, lo:hi], axis=1)
        q = int(math.floor((rad * rad + grid.ht / 2) / grid.ht))
        p = int(math.floor((rad + grid.hx / 2) / grid.hx)) if grid.m else 0
        size = (min(2 * q + 1, 2 * slab.shape[0] - 1),) + (min(2 * p + 1, 2 * grid.nx - 1),) * grid.m
        f = ndimage.maximum_filter if func is np.maximum else ndimage.minimum_filter
        out[:, z] = f(slab, size=size, mode="nearest")
    return out


def _as_time_field(A: np.ndarray, grid: Grid) -> np.ndarray:
    if A.ndim == grid.n + 2:
        return A[None]
    return A


def oscillation_density(A: np.ndarray, grid: Grid) -> CarlesonDensity:
    """delta^-1 (osc over B_{delta/2}(X) of the worst entry of A)^2."""
    Af = _as_time_field(np.asarray(A, dtype=float), grid)
    n = grid.n
    osc = np.zeros(Af.shape[:-2])
    for i in range(n):
        for j in range(n):
            e = Af[..., i, j]
            if np.ptp(e) == 0:
                continue
            osc = np.maximum(osc, _ball_filter(e, grid, np.maximum) - _ball_filter(e, grid, np.minimum))
    y = grid.heights.reshape((1, -1) + (1,) * grid.m)
    dens = osc ** 2 / y
    if np.asarray(A).ndim == n + 2:
        dens = dens[0]
    return CarlesonDensity(dens, grid, "oscillation")


def gradient_density(A: np.ndarray, grid: Grid) -> CarlesonDensity:
    """delta (sup over B_{delta/2}(X) of the largest |grad a_ij|)^2."""
    Af = _as_time_field(np.asarray(A, dtype=float), grid)
    n = grid.n
    gmax = np.zeros(Af.shape[:-2])
    for i in range(n):
        for j in range(n):
            e = Af[..., i, j]
            if np.ptp(e) == 0:
                continue
            gr = np.gradient(e, *grid.spacings, axis=tuple(range(1, n + 1)))
            if n == 1:
                gr = [gr]
            mag = np.sqrt(sum(g * g for g in gr))
            gmax = np.maximum(gmax, _ball_filter(mag, grid, np.maximum))
    y = grid.heights.reshape((1, -1) + (1,) * grid.m)
    dens = y * gmax ** 2
    if np.asarray(A).ndim == n + 2:
        dens = dens[0]
    return CarlesonDensity(dens, grid, "gradient")


def perturbation_density(A0: np.ndarray, A2: np.ndarray, grid: Grid, a: float = 2.0) -> CarlesonDensity:
    """Cone-integrated perturbation density.

    delta^(-2-n) sup|A0 - A2|^2 integrated over cones and averaged over the
    boundary equals, by Fubini, the Carleson measure with density
    c(n, a) delta^-1 sup|A0 - A2|^2, which is what is returned.
    """
    d = np.abs(_as_time_field(np.asarray(A0, float) - np.asarray(A2, float), grid))
    worst = d.max(axis=(-1, -2))
    sup = _ball_filter(worst, grid, np.maximum)
    y = grid.heights.reshape((1, -1) + (1,) * grid.m)
    dens = cone_slice_constant(grid.n, a) * sup ** 2 / y
    if np.asarray(A0).ndim == grid.n + 2:
        dens = dens[0]
    return CarlesonDensity(dens, grid, "perturbation")


def _dyadic_blocks(f: np.ndarray, grid: Grid):
    """Yield aligned dyadic blocks (time cells ct, lateral cells cx) of f."""
    nt = f.shape[0]
    if grid.m:
        cx = grid.nx
        while cx >= 1:
            ct = int(round((cx * grid.hx) ** 2 / (2 * grid.ht)))
            if 1 <= ct <= nt:
                yield ct, cx
            if cx % 2:
                break
            cx //= 2
    else:
        ct = nt
        while ct >= 1:
            yield ct, 1
            if ct % 4:
                break
            ct //= 4


def bmo_norm(f: np.ndarray, grid: Grid, family: str = "dyadic",
             radii: Optional[Sequence[float]] = None) -> float:
    """Sup of mean oscillation of boundary data f (shape (nt', *lat)).

    ``family="dyadic"`` uses aligned dyadic parabolic cubes of the boundary
    window; ``"exhaustive"`` scans every lattice-centred cube Q_r for the
    given radii.
    """
    f = np.asarray(f, dtype=float)
    if family == "exhaustive":
        if radii is None:
            span = min(math.sqrt(f.shape[0] * grid.ht / 2),
                       (grid.nx * grid.hx / 2) if grid.m else np.inf)
            radii = [r for r in (span * 2.0 ** (-j / 2) for j in range(0, 30))
                     if r * r >= grid.ht]
        return mean_oscillation_sup(f, grid.hx, grid.ht, radii)
    best = 0.0
    for ct, cx in _dyadic_blocks(f, grid):
        nT = f.shape[0] // ct
        nX = (grid.nx // cx) if grid.m else 1
        if nT == 0 or nX == 0:
            continue
        sub = f[:nT * ct]
        if grid.m:
            sub = sub[(slice(None),) + (slice(0, nX * cx),) * grid.m]
            shp = [nT, ct]
            for _ in range(grid.m):
                shp += [nX, cx]
            b = sub.reshape(shp)
            axes = tuple([1] + [3 + 2 * i for i in range(grid.m)])
        else:
            b = sub.reshape(nT, ct)
            axes = (1,)
        mean = b.mean(axis=axes, keepdims=True)
        mo = np.abs(b - mean).mean(axis=axes)
        best = max(best, float(mo.max()))
    return best
