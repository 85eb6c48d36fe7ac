"""Parabolic metric geometry of graph domains {x0 > psi(x, t)}.

Conventions
-----------
``n`` is the spatial dimension counting the normal coordinate x0, so there are
``n - 1`` lateral coordinates.  Boundary samples live on a lattice of nodes
(t_k, x_i) with spacings (ht, hx); arrays are indexed time first.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "GeometryError",
    "ParabolicPoint",
    "BoundaryBall",
    "ParabolicCube",
    "Grid",
    "GraphDomain",
    "par_dist",
    "half_time_derivative",
    "half_time_derivative_field",
    "lip_half_constant",
    "mean_oscillation_sup",
    "character",
    "sigma_cells",
    "sigma_measure",
    "cube_mask",
    "Corkscrew",
    "corkscrew",
    "delta_graph",
    "boundary_distance",
    "carleson_region",
    "half_ball_volume",
]


class GeometryError(ValueError):
    """Raised for degenerate or out-of-chart geometric requests."""


@dataclass(frozen=True)
class ParabolicPoint:
    x0: float
    x: tuple = ()
    t: float = 0.0

    def spatial(self) -> np.ndarray:
        return np.array((self.x0,) + tuple(self.x), dtype=float)


@dataclass(frozen=True)
class BoundaryBall:
    """Surface ball of parabolic radius ``r`` around the boundary point over (y, s)."""

    y: tuple
    s: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise GeometryError("ball radius must be positive")

    def doubled(self, factor: float = 2.0) -> "BoundaryBall":
        return BoundaryBall(self.y, self.s, factor * self.r)


@dataclass(frozen=True)
class ParabolicCube:
    """Q_r(y, s) = {|x_i - y_i| < r for all i, |t - s| < r^2}."""

    y: tuple
    s: float
    r: float

    def contains(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ok = np.abs(np.asarray(t) - self.s) < self.r ** 2
        if len(self.y):
            ok = ok & np.all(np.abs(x - np.asarray(self.y)) < self.r, axis=-1)
        return ok


def par_dist(p: ParabolicPoint, q: ParabolicPoint) -> float:
    """(|X - Y|^2 + |t - s|)^(1/2)."""
    d = p.spatial() - q.spatial()
    return math.sqrt(float(d @ d) + abs(p.t - q.t))


@dataclass(frozen=True)
class Grid:
    """Cell-centred space-time grid on the slab (0, H) x lateral box x (t0, t0 + T].

    Solution arrays have shape ``(nt + 1, nz, *lat)``; index 0 is the initial
    state and index k >= 1 holds the value at t_k = t0 + k ht, representing
    the time cell (t_{k-1}, t_k].  Boundary fields have shape ``(nt, *lat)``.
    """

    n: int
    nz: int
    h: float
    nt: int
    ht: float
    nx: int = 1
    hx: float = 1.0
    x_lo: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.n > 3:
            raise GeometryError("n must be 1, 2 or 3")
        if min(self.nz, self.nt, self.nx) < 1 or min(self.h, self.ht, self.hx) <= 0:
            raise GeometryError("grid sizes and spacings must be positive")

    @property
    def m(self) -> int:
        return self.n - 1

    @property
    def H(self) -> float:
        return self.nz * self.h

    @property
    def T(self) -> float:
        return self.nt * self.ht

    @property
    def heights(self) -> np.ndarray:
        return (np.arange(self.nz) + 0.5) * self.h

    @property
    def lateral_centers(self) -> np.ndarray:
        return self.x_lo + (np.arange(self.nx) + 0.5) * self.hx

    @property
    def times(self) -> np.ndarray:
        """Step times t_1..t_nt."""
        return self.t0 + np.arange(1, self.nt + 1) * self.ht

    @property
    def lat_shape(self) -> tuple:
        return (self.nx,) * self.m

    @property
    def cell_shape(self) -> tuple:
        return (self.nz,) + self.lat_shape

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def boundary_shape(self) -> tuple:
        return (self.nt,) + self.lat_shape

    @property
    def spacings(self) -> tuple:
        return (self.h,) + (self.hx,) * self.m

    @property
    def sigma_cell(self) -> float:
        """Boundary cell measure hx^(n-1) ht (flat chart)."""
        return self.hx ** self.m * self.ht

    @property
    def cell_volume(self) -> float:
        return self.h * self.hx ** self.m * self.ht

    @property
    def n_side(self) -> int:
        """Number of side-face degrees of freedom per step (2 faces per lateral axis)."""
        if self.m == 0:
            return 0
        return 2 * self.m * self.nz * self.nx ** (self.m - 1)

    def lateral_mesh(self) -> np.ndarray:
        """Lateral cell centres, shape (*lat, m)."""
        if self.m == 0:
            return np.zeros((0,))
        xs = self.lateral_centers
        return np.stack(np.meshgrid(*([xs] * self.m), indexing="ij"), axis=-1)

    def side_points(self) -> np.ndarray:
        """Face centres of the side faces, shape (n_side, n) as (x0, x...).

        Ordering: for each lateral axis, the low face then the high face, each
        flattened in C order over (height, remaining lateral axes).
        """
        if self.m == 0:
            return np.zeros((0, 1))
        pts = []
        xs = self.lateral_centers
        zs = self.heights
        for ax in range(self.m):
            for wall in (self.x_lo, self.x_lo + self.nx * self.hx):
                others = [xs] * (self.m - 1)
                mesh = np.meshgrid(zs, *others, indexing="ij")
                cols = [mesh[0].ravel()]
                rest = [g.ravel() for g in mesh[1:]]
                lat = []
                j = 0
                for b in range(self.m):
                    if b == ax:
                        lat.append(np.full(mesh[0].size, wall))
                    else:
                        lat.append(rest[j])
                        j += 1
                pts.append(np.stack(cols + lat, axis=-1))
        return np.concatenate(pts, axis=0)

    def refine(self, factor: int = 2, time_factor: Optional[int] = None) -> "Grid":
        tf = factor * factor if time_factor is None else time_factor
        return Grid(self.n, self.nz * factor, self.h / factor, self.nt * tf, self.ht / tf,
                    self.nx * factor if self.m else self.nx,
                    self.hx / factor if self.m else self.hx, self.x_lo, self.t0)


@dataclass
class GraphDomain:
    """Sampled graph psi on boundary nodes (ts, xs) with character data.

    ``psi`` has shape (len(ts), *[len(xs)] * (n - 1)).  ``func`` is an
    optional exact evaluator ``func(x, t)`` with x of shape (..., n-1), used in
    place of interpolation when available; ``grad_func`` returns the lateral
    gradient.
    """

    n: int
    xs: np.ndarray
    ts: np.ndarray
    psi: np.ndarray
    H: float = 1.0
    func: Optional[Callable] = None
    grad_func: Optional[Callable] = None
    time_dependent: bool = True
    ell_spatial: float = float("nan")
    halfder_bmo: float = float("nan")
    halfder_unbounded: bool = False
    c_n: float = 1.0
    spec: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.n - 1

    @property
    def hx(self) -> float:
        return float(self.xs[1] - self.xs[0]) if len(self.xs) > 1 else 1.0

    @property
    def ht(self) -> float:
        return float(self.ts[1] - self.ts[0])

    @property
    def lateral(self) -> tuple:
        if self.m == 0:
            return (0.0, 0.0)
        return (float(self.xs[0] - self.hx / 2), float(self.xs[-1] + self.hx / 2))

    @property
    def flat(self) -> bool:
        return bool(np.all(self.psi == 0))

    def psi_at(self, x, t) -> np.ndarray:
        """psi at arbitrary points; nearest-value extension outside the samples."""
        t = np.asarray(t, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(np.asarray(x, dtype=float), t), dtype=float) + 0 * t
        tc = np.clip(t, self.ts[0], self.ts[-1])
        if self.m == 0:
            return np.interp(tc, self.ts, self.psi.reshape(-1))
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, self.xs[0], self.xs[-1])
        interp = RegularGridInterpolator((self.ts,) + (self.xs,) * self.m, self.psi)
        pts = np.concatenate([tc[..., None], np.broadcast_to(xc, tc.shape + (self.m,))], axis=-1)
        return interp(pts.reshape(-1, self.n)).reshape(tc.shape)

    def lateral_gradient(self) -> np.ndarray:
        """grad_x psi at the nodes, shape psi.shape + (m,)."""
        if self.m == 0:
            return np.zeros(self.psi.shape + (0,))
        if self.grad_func is not None:
            X = np.stack(np.meshgrid(*([self.xs] * self.m), indexing="ij"), axis=-1)
            T = self.ts.reshape((-1,) + (1,) * self.m)
            return np.asarray(self.grad_func(X[None], T), dtype=float) * np.ones(self.psi.shape + (self.m,))
        grads = np.gradient(self.psi, *([self.hx] * self.m), axis=tuple(range(1, self.n)))
        if self.m == 1:
            grads = [grads]
        return np.stack(grads, axis=-1)

    @classmethod
    def from_spec(cls, spec: dict, base_dir: str = ".", compute_character: bool = False) -> "GraphDomain":
        """Build from the JSON domain document (see README)."""
        n = int(spec["n"])
        if n not in (1, 2, 3):
            raise GeometryError("n must be 1, 2 or 3")
        t_lo, t_hi = map(float, spec.get("time", [0.0, 1.0]))
        hx = float(spec.get("hx", 0.05))
        ht = float(spec.get("ht", hx * hx))
        nt = int(round((t_hi - t_lo) / ht))
        ts = t_lo + np.arange(nt + 1) * ht
        if n > 1:
            lo, hi = map(float, spec.get("lateral", [-1.0, 1.0]))
            nx = int(round((hi - lo) / hx))
            xs = lo + (np.arange(nx) + 0.5) * hx
        else:
            xs = np.zeros(0)
        m = n - 1
        p = dict(spec.get("psi", {"kind": "zero"}))
        kind = p.get("kind", "zero")
        func = grad = None
        tdep = True
        if kind == "zero":
            func = lambda x, t: np.zeros(np.shape(t))
            grad = lambda x, t: np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(t)) + (m,))
            tdep = False
        elif kind == "linear":
            slope = np.asarray(p.get("slope", [0.0] * m), dtype=float).reshape(m)
            c = float(p.get("time_slope", 0.0))
            func = lambda x, t: (np.asarray(x) @ slope if m else 0.0) + c * np.asarray(t)
            grad = lambda x, t: np.broadcast_to(slope, np.broadcast_shapes(np.shape(x)[:-1], np.shape(t)) + (m,))
            tdep = c != 0.0
        elif kind == "sine":
            amp = float(p.get("amp", 0.3))
            kx = float(p.get("kx", 1.0))
            kt = float(p.get("kt", 0.0))
            tfac = (lambda t: np.sin(kt * np.asarray(t))) if kt else (lambda t: np.ones(np.shape(t)))
            if m:
                func = lambda x, t: amp * np.sin(kx * np.asarray(x)[..., 0]) * tfac(t)

                def grad(x, t):
                    x = np.asarray(x)
                    g0 = amp * kx * np.cos(kx * x[..., 0]) * tfac(t)
                    out = np.zeros(np.shape(g0) + (m,))
                    out[..., 0] = g0
                    return out
            else:
                func = lambda x, t: amp * tfac(t)
                grad = lambda x, t: np.zeros(np.shape(t) + (0,))
            tdep = bool(kt)
        elif kind == "samples":
            if "values" in p:
                vals = np.asarray(p["values"], dtype=float)
            else:
                import os
                path = os.path.join(base_dir, p["csv"])
                with open(path, newline="") as fh:
                    vals = np.array([[float(v) for v in row] for row in csv.reader(fh) if row])
            vals = vals.reshape((len(ts),) + (len(xs),) * m)
            dom = cls(n, xs, ts, vals, float(spec.get("H", 1.0)), spec=spec)
            zero = dom.psi_at(np.zeros(m), np.asarray(0.0))
            dom.psi = vals - zero
            if compute_character:
                character(dom)
            return dom
        else:
            raise GeometryError(f"unknown psi kind {kind!r}")
        X = np.stack(np.meshgrid(*([xs] * m), indexing="ij"), axis=-1) if m else np.zeros((0,))
        T = ts.reshape((-1,) + (1,) * m)
        vals = func(X[None] if m else X, T) * np.ones((len(ts),) + (len(xs),) * m)
        dom = cls(n, xs, ts, vals, float(spec.get("H", 1.0)), func, grad, tdep,
                  c_n=float(spec.get("c_n", 1.0)), spec=spec)
        if compute_character:
            character(dom)
        return dom


def half_time_derivative(psi_t: np.ndarray, ts: np.ndarray, t: float, c_n: float = 1.0,
                         min_samples: int = 8) -> float:
    """Local half time derivative c_n int_I (psi(s) - psi(t)) / |s - t|^(3/2) ds.

    ``psi_t`` holds samples of psi(x, .) at the nodes ``ts`` (one lateral
    point); I = [ts[0], ts[-1]].  The piecewise linear interpolant is
    integrated exactly against the singular kernel, splitting the segment
    that contains t, so the result is a genuine principal value.
    """
    ts = np.asarray(ts, dtype=float)
    vals = np.asarray(psi_t, dtype=float)
    if len(ts) < min_samples:
        raise GeometryError("time grid too coarse for the singular quadrature")
    if not ts[0] < t < ts[-1] and not (t == ts[0] or t == ts[-1]):
        raise GeometryError("t must lie in the sampled interval")
    pt = float(np.interp(t, ts, vals))
    # split at t
    j = int(np.searchsorted(ts, t))
    if j < len(ts) and ts[j] == t:
        nodes, v = ts, vals
    else:
        nodes = np.concatenate([ts[:j], [t], ts[j:]])
        v = np.concatenate([vals[:j], [pt], vals[j:]])
    a, b = nodes[:-1], nodes[1:]
    va, vb = v[:-1], v[1:]
    slope = (vb - va) / (b - a)
    alpha = va + slope * (t - a) - pt      # value of (interpolant - psi(t)) at s = t
    right = a >= t
    total = 0.0
    # segments with s > t, u = s - t in [ua, ub]
    ua, ub = a[right] - t, b[right] - t
    al, sl = alpha[right], slope[right]
    with np.errstate(divide="ignore", invalid="ignore"):
        term_a = np.where(al != 0, al * (2 / np.sqrt(np.where(ua > 0, ua, np.inf)) - 2 / np.sqrt(ub)), 0.0)
    total += float(np.sum(term_a + sl * 2 * (np.sqrt(ub) - np.sqrt(ua))))
    # segments with s < t, w = t - s in [wb, wa]
    left = ~right
    wa, wb = t - a[left], t - b[left]
    al, sl = alpha[left], slope[left]
    with np.errstate(divide="ignore", invalid="ignore"):
        term_a = np.where(al != 0, al * (2 / np.sqrt(np.where(wb > 0, wb, np.inf)) - 2 / np.sqrt(wa)), 0.0)
    total += float(np.sum(term_a - sl * 2 * (np.sqrt(wa) - np.sqrt(wb))))
    return c_n * total


def half_time_derivative_field(domain: GraphDomain, interior: int = 1) -> np.ndarray:
    """D^t_{1/2} psi at every node, with ``interior`` end nodes left as NaN."""
    psi = domain.psi.reshape(len(domain.ts), -1)
    out = np.full(psi.shape, np.nan)
    for j in range(psi.shape[1]):
        col = psi[:, j]
        if np.ptp(col) == 0:
            out[interior:len(domain.ts) - interior, j] = 0.0
            continue
        for k in range(interior, len(domain.ts) - interior):
            out[k, j] = half_time_derivative(col, domain.ts, domain.ts[k], domain.c_n)
    return out.reshape(domain.psi.shape)


def lip_half_constant(psi: np.ndarray, hx: float, ht: float) -> float:
    """max |psi(p) - psi(q)| / (|x - y| + |t - s|^(1/2)) over all node pairs.

    Displacements are visited in order of increasing denominator and the scan
    stops once the oscillation of psi divided by the denominator cannot beat
    the current maximum, so the result is exact.
    """
    psi = np.asarray(psi, dtype=float)
    osc = float(psi.max() - psi.min()) if psi.size else 0.0
    if osc == 0.0:
        return 0.0
    nt = psi.shape[0]
    lat = psi.shape[1:]
    m = len(lat)
    ranges = [range(0, nt)] + [range(-(L - 1), L) for L in lat]
    disps = []
    for d in itertools.product(*ranges):
        if all(v == 0 for v in d):
            continue
        if d[0] == 0 and next((v for v in d[1:] if v != 0), 0) < 0:
            continue
        den = math.sqrt(sum((v * hx) ** 2 for v in d[1:])) + math.sqrt(d[0] * ht)
        disps.append((den, d))
    disps.sort()
    best = 0.0
    for den, d in disps:
        if osc / den <= best:
            break
        sl_a = [slice(0, nt - d[0])]
        sl_b = [slice(d[0], nt)]
        for v, L in zip(d[1:], lat):
            sl_a.append(slice(max(0, -v), L - max(0, v)))
            sl_b.append(slice(max(0, v), L - max(0, -v)))
        diff = np.abs(psi[tuple(sl_b)] - psi[tuple(sl_a)])
        if diff.size:
            best = max(best, float(diff.max()) / den)
    return best


def _cube_halfcounts(r: float, hx: float, ht: float) -> tuple:
    p = max(int(math.ceil(r / hx - 1e-12)) - 1, 0)
    q = max(int(math.ceil(r * r / ht - 1e-12)) - 1, 0)
    return p, q


def mean_oscillation_sup(values: np.ndarray, hx: float, ht: float,
                         radii: Sequence[float], per_radius: bool = False):
    """Sup of the mean oscillation of ``values`` over node cubes Q_r.

    ``values`` is indexed (t, x_1, ...).  Every centre whose cube fits in the
    lattice is used; NaN entries are excluded by shrinking the lattice to its
    finite core.
    """
    v = np.asarray(values, dtype=float)
    finite_t = np.all(np.isfinite(v.reshape(v.shape[0], -1)), axis=1)
    v = v[finite_t]
    m = v.ndim - 1
    sups = []
    for r in radii:
        p, q = _cube_halfcounts(r, hx, ht)
        win = (2 * q + 1,) + (2 * p + 1,) * m
        if any(w > s for w, s in zip(win, v.shape)):
            sups.append(float("nan"))
            continue
        best = 0.0
        # chunk over time to bound memory
        step = max(1, int(2e6 // max(1, np.prod(win) * np.prod(v.shape[1:]))))
        for k0 in range(0, v.shape[0] - win[0] + 1, step):
            block = v[k0:min(v.shape[0], k0 + step + win[0] - 1)]
            w = sliding_window_view(block, win)
            axes = tuple(range(v.ndim, 2 * v.ndim))
            mean = w.mean(axis=axes, keepdims=True)
            mo = np.abs(w - mean).mean(axis=axes)
            best = max(best, float(mo.max()))
        sups.append(best)
    arr = np.array(sups)
    return arr if per_radius else float(np.nanmax(arr)) if np.any(np.isfinite(arr)) else 0.0


def character(domain: GraphDomain, radii: Optional[Sequence[float]] = None) -> tuple:
    """Measure (ell_spatial, halfder_bmo) and store them on the domain.

    The BMO norm of D^t_{1/2} psi is a sup over sampled cubes; if the sup
    keeps growing at the finest probed scales the domain is flagged.
    """
    ell = lip_half_constant(domain.psi, domain.hx, domain.ht)
    if np.all(domain.psi == domain.psi[0:1]):
        bmo, unbounded = 0.0, False
    else:
        D = half_time_derivative_field(domain)
        if radii is None:
            span = math.sqrt(domain.ts[-1] - domain.ts[0])
            base = math.sqrt(domain.ht)
            radii = [base * 2 ** (j / 2) for j in range(2, 40) if base * 2 ** (j / 2) < span / 2]
        per = mean_oscillation_sup(D, domain.hx, domain.ht, radii, per_radius=True)
        fin = per[np.isfinite(per)]
        bmo = float(fin.max()) if fin.size else 0.0
        unbounded = bool(fin.size >= 2 and fin[0] == bmo and fin[0] > 2 * fin[1])
    domain.ell_spatial = ell
    domain.halfder_bmo = float("inf") if unbounded else bmo
    domain.halfder_unbounded = unbounded
    return ell, domain.halfder_bmo


def sigma_cells(domain: GraphDomain) -> np.ndarray:
    """Boundary measure of each node cell: sqrt(1 + |grad_x psi|^2) hx^(n-1) ht."""
    if domain.m == 0:
        return np.full(domain.psi.shape, domain.ht)
    g = domain.lateral_gradient()
    return np.sqrt(1.0 + np.sum(g * g, axis=-1)) * domain.hx ** domain.m * domain.ht


def sigma_measure(domain: GraphDomain, region: np.ndarray) -> float:
    """sigma of a set of boundary node cells given as a boolean mask."""
    region = np.asarray(region, dtype=bool)
    return float(np.sum(sigma_cells(domain)[region]))


def cube_mask(domain: GraphDomain, cube: ParabolicCube) -> np.ndarray:
    T = domain.ts.reshape((-1,) + (1,) * domain.m)
    if domain.m == 0:
        return np.abs(domain.ts - cube.s) < cube.r ** 2
    X = np.stack(np.meshgrid(*([domain.xs] * domain.m), indexing="ij"), axis=-1)
    return cube.contains(X[None], T)


@dataclass(frozen=True)
class Corkscrew:
    point: ParabolicPoint       # pulled-back coordinates
    physical: ParabolicPoint
    delta: float                # parabolic distance to the sampled boundary


def delta_graph(domain: GraphDomain, p: ParabolicPoint) -> float:
    """x0 - psi(x, t), the graph distance surrogate."""
    return float(p.x0 - domain.psi_at(np.asarray(p.x, dtype=float), np.asarray(p.t)))


def _boundary_nodes(domain: GraphDomain):
    T = np.broadcast_to(domain.ts.reshape((-1,) + (1,) * domain.m), domain.psi.shape)
    if domain.m:
        X = np.stack(np.meshgrid(*([domain.xs] * domain.m), indexing="ij"), axis=-1)
        X = np.broadcast_to(X[None], domain.psi.shape + (domain.m,))
    else:
        X = np.zeros(domain.psi.shape + (0,))
    return domain.psi, X, T


def boundary_distance(domain: GraphDomain, p: ParabolicPoint, brute: bool = False) -> float:
    """Parabolic distance from ``p`` to the sampled boundary nodes.

    The default restricts the search to the window allowed by the distance
    to the node directly below, which is exact for the sampled surface.
    """
    P, X, T = _boundary_nodes(domain)
    x = np.asarray(p.x, dtype=float)
    if brute:
        d2 = (P - p.x0) ** 2 + np.sum((X - x) ** 2, axis=-1) + np.abs(T - p.t)
        return float(np.sqrt(d2.min()))
    k = int(np.clip(np.searchsorted(domain.ts, p.t), 0, len(domain.ts) - 1))
    idx = [k]
    for c in x:
        idx.append(int(np.clip(np.searchsorted(domain.xs, c), 0, len(domain.xs) - 1)))
    idx = tuple(idx)
    d1 = math.sqrt((P[idx] - p.x0) ** 2 + float(np.sum((X[idx] - x) ** 2)) + abs(T[idx] - p.t))
    sl = [slice(int(np.searchsorted(domain.ts, p.t - d1 * d1, "left")),
                int(np.searchsorted(domain.ts, p.t + d1 * d1, "right")))]
    for c in x:
        sl.append(slice(int(np.searchsorted(domain.xs, c - d1, "left")),
                        int(np.searchsorted(domain.xs, c + d1, "right"))))
    sl = tuple(sl)
    d2 = (P[sl] - p.x0) ** 2 + np.sum((X[sl] - x) ** 2, axis=-1) + np.abs(T[sl] - p.t)
    return float(min(d1, math.sqrt(d2.min()))) if d2.size else d1


def corkscrew(domain: GraphDomain, ball: BoundaryBall, c_v: float = 0.5,
              gamma: float = 0.1, check: bool = True) -> Corkscrew:
    """Corkscrew point of ``ball``: (c_v r, y, s + 2 r^2) in pulled-back coordinates."""
    if not 0 < c_v <= 1:
        raise GeometryError("c_v must lie in (0, 1]")
    r = ball.r
    t = ball.s + 2 * r * r
    y = np.asarray(ball.y, dtype=float)
    lo, hi = domain.lateral
    if c_v * r >= domain.H or t > domain.ts[-1] or (domain.m and (np.any(y < lo) or np.any(y > hi))):
        raise GeometryError("corkscrew point leaves the truncated slab")
    pb = ParabolicPoint(c_v * r, tuple(y), t)
    if domain.flat:
        phys = pb
    else:
        from .pullback import mollified_graph
        x0 = c_v * r + float(mollified_graph(domain, gamma * c_v * r, y[None, :] if domain.m else np.zeros((1, 0)),
                                             np.array([t]))[0])
        phys = ParabolicPoint(x0, tuple(y), t)
    delta = boundary_distance(domain, phys)
    if check and not (c_v * r / 2 <= delta <= 2 * r):
        raise GeometryError(f"corkscrew distance {delta:.4g} outside [c_v r/2, 2r]")
    return Corkscrew(pb, phys, delta)


def half_ball_volume(n: int, r: float) -> float:
    """|{x0 > 0, |X|^2 + |t| < r^2}| in R^n x R: 2 V_n r^(n+2) / (n + 2)."""
    vn = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
    return vn * r ** (n + 2) / (n + 2) * 2.0


def carleson_region(grid: Grid, ball: BoundaryBall, x0_phys: Optional[np.ndarray] = None,
                    center_x0: float = 0.0) -> np.ndarray:
    """Cells of ``grid`` whose centres lie in B_r(center) above the boundary.

    ``x0_phys`` gives the physical normal coordinate of each cell, shape
    (nt, nz, *lat) or (nz, *lat); the default is the flat chart.  Returns a
    boolean mask of shape (nt, nz, *lat) over time steps 1..nt.
    """
    m = grid.m
    z = grid.heights.reshape((1, -1) + (1,) * m)
    if x0_phys is not None:
        z = np.asarray(x0_phys)
        if z.ndim == grid.n:
            z = z[None]
    t = grid.times.reshape((-1, 1) + (1,) * m)
    d2 = (z - center_x0) ** 2 + np.abs(t - ball.s)
    if m:
        X = grid.lateral_mesh()
        d2 = d2 + np.sum((X - np.asarray(ball.y)) ** 2, axis=-1)[None, None]
    return np.broadcast_to(d2 < ball.r ** 2, (grid.nt,) + grid.cell_shape).copy()
