"""Parabolic dyadic trees over the flat boundary, good covers, and the
alternating test data used for the square-function lower bound.

A cube at level j has spatial side 2^-j and time side 4^-j relative to the
root, so it has 2^(n-1) * 4 = 2^(n+1) children.  Trees are stored as one
array of block masses per level, shape (4^j, 2^j, ..., 2^j).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import Grid
from .solver import BoundaryData, DiscreteOperator, solve

__all__ = [
    "CoverError",
    "DyadicCube",
    "DyadicTree",
    "build_grid",
    "GoodCover",
    "good_cover",
    "KKPTLevel",
    "KKPTData",
    "skip_levels",
    "kkpt_data",
    "lower_bound_experiment",
]


class CoverError(RuntimeError):
    """Raised when a cover or its bookkeeping violates its contract."""


@dataclass(frozen=True)
class DyadicCube:
    j: int
    idx: tuple
    r: float                  # parabolic half-width
    y: tuple                  # lateral centre
    s: float                  # time centre

    @property
    def key(self):
        return (self.j, self.idx)


def _block_sum(a: np.ndarray, factors: Sequence[int]) -> np.ndarray:
    shp = []
    for L, f in zip(a.shape, factors):
        shp += [L // f, f]
    return a.reshape(shp).sum(axis=tuple(range(1, 2 * a.ndim, 2)))


def _upsample(a: np.ndarray, factors: Sequence[int]) -> np.ndarray:
    for ax, f in enumerate(factors):
        a = np.repeat(a, f, axis=ax)
    return a


class DyadicTree:
    """Dyadic tree with omega and sigma masses cached per cube.

    ``omega`` and ``sigma`` are cell arrays of shape (bt 4^D, bx 2^D, ...)
    covering the root; the finest cubes are bt x bx^(n-1) blocks of cells.
    """

    def __init__(self, omega: np.ndarray, sigma: np.ndarray, n: int, depth: int,
                 block=(1, 1), ht: float = 1.0, hx: float = 1.0, t_lo: float = 0.0,
                 x_lo: float = 0.0, origin: tuple = None):
        self.n = n
        self.m = n - 1
        self.depth = depth
        self.bt, self.bx = block
        self.ht, self.hx = ht, hx
        self.t_lo, self.x_lo = t_lo, x_lo
        expect = (self.bt * 4 ** depth,) + (self.bx * 2 ** depth,) * self.m
        omega = np.asarray(omega, dtype=float)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), omega.shape)
        if omega.shape != expect:
            raise ValueError(f"cell arrays must have shape {expect}, got {omega.shape}")
        self.cell_shape = expect
        self.origin = origin if origin is not None else (0,) * n
        self.omega_cells = omega
        self.sigma_cells = np.array(sigma)
        self.block = (self.bt,) + (self.bx,) * self.m
        fine_om = _block_sum(omega, self.block)
        fine_sg = _block_sum(self.sigma_cells, self.block)
        self._om = [None] * (depth + 1)
        self._sg = [None] * (depth + 1)
        self._om[depth], self._sg[depth] = fine_om, fine_sg
        for j in range(depth - 1, -1, -1):
            self._om[j] = _block_sum(self._om[j + 1], self.child_factors)
            self._sg[j] = _block_sum(self._sg[j + 1], self.child_factors)

    # structure
    @property
    def child_factors(self) -> tuple:
        return (4,) + (2,) * self.m

    @property
    def n_children(self) -> int:
        return 2 ** (self.n + 1)

    def omega_level(self, j: int) -> np.ndarray:
        return self._om[j]

    def sigma_level(self, j: int) -> np.ndarray:
        return self._sg[j]

    def factors_to_fine(self, j: int) -> tuple:
        d = self.depth - j
        return (4 ** d,) + (2 ** d,) * self.m

    def omega(self, c) -> float:
        j, idx = c.key if isinstance(c, DyadicCube) else c
        return float(self._om[j][idx])

    def sigma(self, c) -> float:
        j, idx = c.key if isinstance(c, DyadicCube) else c
        return float(self._sg[j][idx])

    # geometry
    def time_extent(self, j: int) -> float:
        return self.bt * 4 ** (self.depth - j) * self.ht

    def radius(self, j: int) -> float:
        """Parabolic half-width: from the time side for n = 1, else the spatial side."""
        if self.m == 0:
            return math.sqrt(self.time_extent(j) / 2)
        return self.bx * 2 ** (self.depth - j) * self.hx / 2

    def cube(self, j: int, idx: tuple) -> DyadicCube:
        te = self.time_extent(j)
        s = self.t_lo + (idx[0] + 0.5) * te
        xe = self.bx * 2 ** (self.depth - j) * self.hx
        y = tuple(self.x_lo + (i + 0.5) * xe for i in idx[1:])
        return DyadicCube(j, tuple(int(i) for i in idx), self.radius(j), y, s)

    def cell_slices(self, c) -> tuple:
        j, idx = c.key if isinstance(c, DyadicCube) else c
        f = self.factors_to_fine(j)
        out = []
        for i, (k, ff, b) in enumerate(zip(idx, f, self.block)):
            w = ff * b
            out.append(slice(k * w, (k + 1) * w))
        return tuple(out)

    # masks live on the finest level
    def fine_mask_from_cells(self, cells: np.ndarray, how: str = "any") -> np.ndarray:
        c = _block_sum(np.asarray(cells, dtype=np.int64), self.block)
        size = int(np.prod(self.block))
        return c > 0 if how == "any" else c == size

    def cells_from_fine(self, mask: np.ndarray) -> np.ndarray:
        return _upsample(np.asarray(mask, bool), self.block)

    def level_count(self, mask: np.ndarray, j: int) -> np.ndarray:
        return _block_sum(mask.astype(np.int64), self.factors_to_fine(j))

    def masked_omega(self, mask: np.ndarray, j: int) -> np.ndarray:
        return _block_sum(np.where(mask, self._om[self.depth], 0.0), self.factors_to_fine(j))

    def maximal_cubes(self, pred: Callable) -> list:
        """Coarsest cubes with pred(omega, sigma) true and no selected ancestor."""
        return self._maximal(lambda j: pred(self._om[j], self._sg[j]))

    def _maximal(self, level_pred: Callable) -> list:
        out = []
        covered = np.zeros((1,) * self.n, dtype=bool)
        for j in range(self.depth + 1):
            if j > 0:
                covered = _upsample(covered, self.child_factors)
            sel = np.asarray(level_pred(j), dtype=bool) & ~covered
            for idx in zip(*np.nonzero(sel)):
                out.append((j, tuple(int(i) for i in idx)))
            covered = covered | sel
        return out

    def cubes_to_mask(self, cubes) -> np.ndarray:
        mask = np.zeros(self._om[self.depth].shape, dtype=bool)
        for c in cubes:
            mask[self.fine_slices(c)] = True
        return mask

    def fine_slices(self, c) -> tuple:
        j, idx = c.key if isinstance(c, DyadicCube) else c
        f = self.factors_to_fine(j)
        return tuple(slice(k * ff, (k + 1) * ff) for k, ff in zip(idx, f))

    def restrict_mask(self, c) -> np.ndarray:
        return self.cubes_to_mask([c])

    def decompose(self, mask: np.ndarray) -> list:
        """Maximal dyadic cubes contained in a finest-level mask."""
        return self._maximal(lambda j: self.level_count(mask, j) == np.prod(self.factors_to_fine(j)))

    # checks
    def child_ratio_max(self) -> float:
        """max over parent-child pairs of omega(child) / omega(parent)."""
        best = 0.0
        for j in range(self.depth):
            par = _upsample(self._om[j], self.child_factors)
            ch = self._om[j + 1]
            pos = par > 0
            if pos.any():
                best = max(best, float((ch[pos] / par[pos]).max()))
        return best

    def containment_check(self, max_level: int = 5) -> bool:
        """Delta_r(centre) <= cube <= Delta_{sqrt(n) r}(centre) on cell centres."""
        ok = True
        t = self.t_lo + (np.arange(self.cell_shape[0]) + 0.5) * self.ht
        xs = [self.x_lo + (np.arange(L) + 0.5) * self.hx for L in self.cell_shape[1:]]
        mesh = np.meshgrid(t, *xs, indexing="ij")
        M = math.sqrt(self.n)
        for j in range(min(max_level, self.depth) + 1):
            for idx in np.ndindex(self._om[j].shape):
                c = self.cube(j, idx)
                d2 = np.abs(mesh[0] - c.s)
                for ax, yc in enumerate(c.y):
                    d2 = d2 + (mesh[ax + 1] - yc) ** 2
                inside = np.zeros(self.cell_shape, dtype=bool)
                inside[self.cell_slices((j, idx))] = True
                ball = d2 < c.r ** 2
                big = d2 < (M * c.r) ** 2 * (1 + 1e-12)
                ok &= bool(np.all(inside[ball])) and bool(np.all(big[inside]))
        return ok


def build_grid(kernel_omega: np.ndarray, grid: Grid, depth: int, origin: tuple = None,
               block=(1, 1), sigma: Optional[np.ndarray] = None) -> DyadicTree:
    """Tree over the boundary cells starting at ``origin`` = (k0, i0, ...)."""
    n = grid.n
    origin = origin or (0,) * n
    ext = (block[0] * 4 ** depth,) + (block[1] * 2 ** depth,) * grid.m
    sl = tuple(slice(o, o + e) for o, e in zip(origin, ext))
    om = np.asarray(kernel_omega, dtype=float)[sl]
    if om.shape != ext:
        raise ValueError("dyadic root does not fit in the boundary window")
    sg = grid.sigma_cell if sigma is None else np.asarray(sigma)[sl]
    t_lo = grid.t0 + origin[0] * grid.ht
    x_lo = grid.x_lo + (origin[1] * grid.hx if grid.m else 0.0)
    return DyadicTree(om, np.broadcast_to(sg, om.shape), n, depth, block, grid.ht,
                      grid.hx, t_lo, x_lo, origin)


@dataclass
class GoodCover:
    eps0: float
    sets: list                    # finest-level masks O_0 ... O_k
    cubes: list                   # maximal cube lists per set
    E: np.ndarray                 # finest-level mask
    delta0: float

    @property
    def length(self) -> int:
        return len(self.sets) - 1

    def verify(self, tree: DyadicTree) -> dict:
        """Exact post-hoc checks: property (2), nesting, and the iterated bound."""
        prop2 = True
        for l in range(1, len(self.sets)):
            for c in self.cubes[l - 1]:
                inter = float(np.sum(tree._om[tree.depth][tree.fine_slices(c)][self.sets[l][tree.fine_slices(c)]]))
                prop2 &= inter <= self.eps0 * tree.omega(c)
        nest = all(np.all(self.sets[l] <= self.sets[l - 1]) for l in range(1, len(self.sets)))
        nest &= bool(np.all(self.E <= self.sets[-1]))
        iterated = True
        for m in range(len(self.sets)):
            for c in self.cubes[m]:
                sl = tree.fine_slices(c)
                base = tree.omega(c)
                for l in range(m + 1, len(self.sets)):
                    inter = float(np.sum(tree._om[tree.depth][sl][self.sets[l][sl]]))
                    iterated &= inter <= self.eps0 ** (l - m) * base * (1 + 1e-12)
        return {"property2": bool(prop2), "nesting": bool(nest), "iterated": bool(iterated)}

    def as_dict(self) -> dict:
        return {"eps0": self.eps0, "delta0": self.delta0, "length": self.length,
                "cubes": [[[c[0], list(c[1])] for c in lv] for lv in self.cubes]}


def good_cover(tree: DyadicTree, E: np.ndarray, eps0: float, max_length: Optional[int] = None,
               check: bool = True) -> GoodCover:
    """Good eps0-cover of E (finest-level mask) relative to the root cube.

    Starting from the finest cubes meeting E, each step takes the maximal
    cubes S with omega(S cap O) > eps0 omega(S) and replaces them by their
    parents, which satisfy the reverse inequality by maximality.  The chain
    stops before its mass exceeds eps0 omega(root) and is closed by the root.
    """
    E = np.asarray(E, dtype=bool)
    W = tree.omega((0, (0,) * tree.n))
    delta0 = float(tree._om[tree.depth][E].sum()) / W if W > 0 else 0.0
    if delta0 >= eps0:
        raise CoverError(f"omega fraction of E ({delta0:.3g}) must be below eps0")
    max_length = tree.depth if max_length is None else max_length
    root = np.ones_like(E)
    chain = [E.copy()]
    while len(chain) <= max_length:
        O = chain[-1]
        heavy = tree._maximal(lambda j: _heavy(tree, O, j, eps0))
        if any(j == 0 for j, _ in heavy):
            break
        nxt = np.zeros_like(O)
        for j, idx in heavy:
            par = (j - 1, tuple(i // f for i, f in zip(idx, tree.child_factors)))
            nxt[tree.fine_slices(par)] = True
        if np.array_equal(nxt, O):
            break
        if nxt.all():
            break
        if float(tree._om[tree.depth][nxt].sum()) > eps0 * W:
            break
        chain.append(nxt)
    sets = [root] + chain[::-1]
    cubes = [[(0, (0,) * tree.n)]] + [tree.decompose(s) for s in sets[1:]]
    cover = GoodCover(eps0, sets, cubes, E, delta0)
    if check:
        res = cover.verify(tree)
        if not all(res.values()):
            raise CoverError(f"cover verification failed: {res}")
    return cover


def _heavy(tree: DyadicTree, O: np.ndarray, j: int, eps0: float) -> np.ndarray:
    om = tree.omega_level(j)
    inter = tree.masked_omega(O, j)
    cnt = tree.level_count(O, j)
    return np.where(om > 0, inter > eps0 * om, cnt > 0)


def skip_levels(n: int, rho: float) -> int:
    """Smallest k with sqrt(n) 2^(-2k) <= rho."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    return max(1, math.ceil(math.log(math.sqrt(n) / rho, 4) - 1e-12))


@dataclass
class KKPTLevel:
    m: int
    cube: DyadicCube
    r1: float                        # r' = r / sqrt(2)
    corkscrew: tuple                 # (r', y, s + r'^2)
    H_box: tuple                     # (lateral half-width r'', t_lo, t_hi)
    A_heights: tuple                 # (rho r', r')


@dataclass
class KKPTData:
    f: np.ndarray                    # boundary field on the cells of the root window
    levels: list                     # KKPTLevel per (even m, cube)
    rho: float
    k_skip: int
    selected: list                   # even levels m_j
    partial_ok: bool
    tree: DyadicTree = field(repr=False, default=None)
    cover: GoodCover = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {
            "rho": self.rho, "k_skip": self.k_skip, "selected": self.selected,
            "partial_sums_in_unit_interval": self.partial_ok,
            "levels": [{"m": L.m, "j": L.cube.j, "idx": list(L.cube.idx), "r": L.cube.r,
                        "corkscrew": list(map(float, _flat(L.corkscrew))),
                        "H": list(L.H_box), "A_heights": list(L.A_heights)} for L in self.levels],
        }


def _flat(t):
    out = []
    for v in t:
        out.extend(v if isinstance(v, tuple) else [v])
    return out


def _cell_centres(tree: DyadicTree):
    t = tree.t_lo + (np.arange(tree.cell_shape[0]) + 0.5) * tree.ht
    xs = [tree.x_lo + (np.arange(L) + 0.5) * tree.hx for L in tree.cell_shape[1:]]
    return np.meshgrid(t, *xs, indexing="ij")


def kkpt_data(tree: DyadicTree, cover: GoodCover, rho: float = 0.1,
              k_skip: Optional[int] = None) -> KKPTData:
    """Alternating data f = sum over even m of (f_m + f_{m+1}) on the root cells.

    f_m is the indicator of the shifted cubes of O_m (scale r / sqrt 2, ending
    at the centre time of each cube) and f_{m+1} = -f_m on O_{m+1}.
    """
    k_skip = skip_levels(tree.n, rho) if k_skip is None else k_skip
    mesh = _cell_centres(tree)
    k = cover.length
    f = np.zeros(tree.cell_shape)
    partial_ok = True
    levels = []
    for m in range(0, k + 1, 2):
        if m >= k and k > 0:
            break
        fm = np.zeros(tree.cell_shape, dtype=bool)
        for c in cover.cubes[m]:
            cb = tree.cube(*c)
            r1 = cb.r / math.sqrt(2)
            inside = np.abs(mesh[0] - (cb.s - r1 ** 2)) <= r1 ** 2 * (1 + 1e-12)
            for ax, yc in enumerate(cb.y):
                inside &= np.abs(mesh[ax + 1] - yc) < r1
            fm |= inside
            r2 = r1 / 4
            t0 = cb.s + r1 ** 2
            levels.append(KKPTLevel(m, cb, r1, (r1, cb.y, t0), (r2, t0 + r2 ** 2 / 2, t0 + r2 ** 2),
                                    (rho * r1, r1)))
        nxt = cover.sets[m + 1] if m + 1 <= k else np.zeros_like(cover.sets[0])
        nxt_cells = tree.cells_from_fine(nxt)
        f += fm.astype(float) - (fm & nxt_cells).astype(float)
        partial_ok &= bool(f.min() >= 0 and f.max() <= 1)
    selected = list(range(0, k, 2 * k_skip))
    return KKPTData(f, levels, rho, k_skip, selected, partial_ok, tree, cover)


def _point_level(kk: KKPTData, m: int, fine_idx: tuple) -> Optional[KKPTLevel]:
    tree = kk.tree
    for L in kk.levels:
        if L.m != m:
            continue
        c = L.cube
        f = tree.factors_to_fine(c.j)
        if all(i // ff == ci for i, ff, ci in zip(fine_idx, f, c.idx)):
            return L
    return None


def lower_bound_experiment(kk: KKPTData, E_cells: np.ndarray, op: DiscreteOperator,
                           a0: float = 2.0, grow: float = 1.25, min_cells: int = 4,
                           method: str = "direct") -> dict:
    """Solve with the KKPT data and tally the A_m energies over every E cell."""
    tree = kk.tree
    grid = op.grid
    n = grid.n
    lat = np.zeros(grid.boundary_shape)
    sl = tuple(slice(o, o + e) for o, e in zip(tree.origin, tree.cell_shape))
    lat[sl] = kk.f
    sol = solve(op, BoundaryData(lateral=lat), method=method)
    G = np.sum(sol.grad ** 2, axis=-1)                       # (nt+1, nz, *lat)
    tk = grid.times
    ys = grid.heights
    xc = grid.lateral_centers if grid.m else None

    def box_cells(L: KKPTLevel, lo, hi):
        r2, tlo, thi = L.H_box
        ks = np.nonzero((tk >= tlo - 1e-12) & (tk <= thi + 1e-12))[0]
        zs = np.nonzero((ys > lo) & (ys < hi))[0]
        xs = [np.nonzero(np.abs(xc - yc) <= r2 + 1e-12)[0] for yc in L.cube.y]
        return ks, zs, xs

    level_rows = []
    for L in kk.levels:
        if L.m not in kk.selected:
            continue
        ks, zs, xs = box_cells(L, *L.A_heights)
        resolved = zs.size >= min_cells and ks.size >= 1 and all(x.size for x in xs)
        row = {"m": L.m, "r": L.cube.r, "resolved": bool(resolved), "margin": float("nan")}
        if ks.size and all(x.size for x in xs):
            top = _height_interp(sol.v, ys, L.r1)
            low = _height_interp(sol.v, ys, kk.rho * L.r1)
            ix = np.ix_(ks + 1, *xs) if xs else np.ix_(ks + 1)
            row["margin"] = float(top[ix].min() - low[ix].max())
        level_rows.append(row)

    # per E-cell tallies and aperture enlargement
    E_fine_cells = np.argwhere(E_cells)
    tallies, counts, req_a = [], [], 1e-300
    for cell in E_fine_cells:
        fine_idx = tuple(int(c) // b for c, b in zip(cell, tree.block))
        t_pt = tree.t_lo + (cell[0] + 0.5) * tree.ht
        x_pt = [tree.x_lo + (c + 0.5) * tree.hx for c in cell[1:]]
        tally, J, used = 0.0, 0, []
        for m in kk.selected:
            L = _point_level(kk, m, fine_idx)
            if L is None:
                continue
            ks, zs, xs = box_cells(L, *L.A_heights)
            if not (ks.size and zs.size and all(x.size for x in xs)):
                J += 1
                continue
            ix = np.ix_(ks + 1, zs, *xs)
            w = ys[zs].reshape((1, -1) + (1,) * grid.m) ** (-n)
            tally += float(np.sum(G[ix] * w) * grid.cell_volume)
            J += 1
            used.append(L.A_heights)
            # aperture needed to contain the box in the cone over the cell
            d = np.sqrt(np.abs(tk[ks] - t_pt)).max()
            for ax, x in enumerate(xs):
                d = d + np.abs(xc[x] - x_pt[ax]).max()
            req_a = max(req_a, d / ys[zs].min())
        used.sort()
        for (lo1, hi1), (lo2, hi2) in zip(used, used[1:]):
            if hi1 > lo2:
                raise CoverError("selected A_m boxes overlap above an E cell")
        tallies.append(tally)
        counts.append(J)
    a = a0
    while a <= req_a:
        a *= grow
    tallies = np.array(tallies)
    counts = np.array(counts)
    pos = counts > 0
    per = tallies[pos] / counts[pos]
    c_meas = 0.5 * float(np.median(per)) if per.size else 0.0
    frac = float(np.mean(tallies[pos] >= c_meas * counts[pos])) if per.size else 1.0
    resolved = [r for r in level_rows if r["resolved"]]
    margin_frac = (float(np.mean([r["margin"] > 0 for r in resolved])) if resolved else 1.0)
    return {
        "aperture": a, "J": counts.tolist(), "tally": tallies.tolist(), "c_meas": c_meas,
        "fraction_ok": frac, "levels": level_rows, "margin_fraction": margin_frac,
        "max_principle_gap": sol.max_principle_gap(), "solution": sol,
    }


def _height_interp(v: np.ndarray, ys: np.ndarray, y: float) -> np.ndarray:
    """Linear interpolation of v (nt+1, nz, ...) in the height variable."""
    z = float(np.clip(np.interp(y, ys, np.arange(ys.size)), 0, ys.size - 1))
    z0 = int(math.floor(z))
    z1 = min(z0 + 1, ys.size - 1)
    w = z - z0
    if y < ys[0]:
        # between the wall (data) and the first centre; use the first centre
        return v[:, 0]
    return (1 - w) * v[:, z0] + w * v[:, z1]
