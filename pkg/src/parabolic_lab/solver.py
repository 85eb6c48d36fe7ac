"""Finite volume solver for v_t = div(A grad v) + B . grad v on the slab.

Backward Euler in time, harmonic-mean face diffusivities, fully upwinded
drift and a sign-aware diagonal stencil for mixed derivatives.  Every step
matrix is an M-matrix (checked at assembly), which gives the discrete
maximum and comparison principles and nonnegative adjoint weights.

Boundary data come in four pieces: the bottom face x0 = 0 ("lateral" data f
on the boundary of the half space), the top face x0 = H, the side faces of
the lateral box, and the initial state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Grid

__all__ = [
    "AssemblyError",
    "SolverError",
    "Coefficients",
    "identity_coefficients",
    "constant_coefficients",
    "diagonal_coefficients",
    "scalar_coefficients",
    "random_elliptic",
    "StepOperator",
    "DiscreteOperator",
    "assemble",
    "BoundaryData",
    "DiscreteSolution",
    "solve",
    "elliptic_extension",
    "spatial_gradient",
    "MeasureWeights",
    "adjoint_measure",
    "pole_index",
]

log = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    """The discrete operator lost the M-matrix property."""


class SolverError(RuntimeError):
    """A linear solve did not reach the residual tolerance."""


@dataclass
class Coefficients:
    """Cellwise coefficients.

    ``A`` has shape (*cell_shape, n, n), or (nt, *cell_shape, n, n) when it
    changes from step to step.  ``B`` (drift) follows the same layout with a
    trailing axis of length n, or is None.
    """

    A: np.ndarray
    B: Optional[np.ndarray] = None

    def is_time_dependent(self, grid: Grid) -> bool:
        return self.A.ndim == grid.n + 3 or (self.B is not None and self.B.ndim == grid.n + 2)

    def at_step(self, j: int, grid: Grid):
        """Coefficients for step j + 1 (j = 0..nt-1)."""
        A = self.A[j] if self.A.ndim == grid.n + 3 else self.A
        B = None
        if self.B is not None:
            B = self.B[j] if self.B.ndim == grid.n + 2 else self.B
        return A, B

    def ellipticity(self) -> tuple:
        """(min, max) eigenvalue of the symmetric part over all cells."""
        S = 0.5 * (self.A + np.swapaxes(self.A, -1, -2))
        ev = np.linalg.eigvalsh(S.reshape(-1, S.shape[-1], S.shape[-1]))
        return float(ev.min()), float(ev.max())


def identity_coefficients(grid: Grid) -> Coefficients:
    return constant_coefficients(grid, np.eye(grid.n))


def constant_coefficients(grid: Grid, A, B=None) -> Coefficients:
    A = np.broadcast_to(np.asarray(A, dtype=float), grid.cell_shape + (grid.n, grid.n)).copy()
    if B is not None:
        B = np.broadcast_to(np.asarray(B, dtype=float), grid.cell_shape + (grid.n,)).copy()
    return Coefficients(A, B)


def diagonal_coefficients(grid: Grid, diag) -> Coefficients:
    return constant_coefficients(grid, np.diag(np.asarray(diag, dtype=float)))


def scalar_coefficients(grid: Grid, a: np.ndarray) -> Coefficients:
    """A = a I with a cellwise (or height-only, shape (nz,)) scalar field a."""
    a = np.asarray(a, dtype=float)
    if a.shape == (grid.nz,):
        a = a.reshape((grid.nz,) + (1,) * grid.m)
    a = np.broadcast_to(a, grid.cell_shape)
    return Coefficients(a[..., None, None] * np.eye(grid.n))


def random_elliptic(grid: Grid, lam: float, Lam: float, rng: np.random.Generator,
                    offdiag: float = 0.0, time_dependent: bool = False,
                    drift: float = 0.0) -> Coefficients:
    """Piecewise constant symmetric coefficients with spectrum in [lam, Lam].

    Diagonal entries are uniform in [lam/(1-q), Lam/(1+q)] and off-diagonal
    entries are bounded by q * lam/(1-q) / (n-1) scaled by the grid aspect
    ratio, with q = ``offdiag``.  Diagonal dominance then keeps both the
    spectrum inside [lam, Lam] and the M-matrix condition for the cross
    stencil.  ``drift`` adds a uniform random drift of that magnitude.
    """
    if not 0 < lam < Lam:
        raise ValueError("need 0 < lam < Lam")
    if not 0 <= offdiag < 1:
        raise ValueError("offdiag must lie in [0, 1)")
    n = grid.n
    lo, hi = lam / (1 - offdiag), Lam / (1 + offdiag)
    if lo >= hi:
        raise ValueError("offdiag too large for the requested ellipticity range")
    lead = ((grid.nt,) if time_dependent else ()) + grid.cell_shape
    A = np.zeros(lead + (n, n))
    for i in range(n):
        A[..., i, i] = rng.uniform(lo, hi, size=lead)
    hs = grid.spacings
    if n > 1 and offdiag > 0:
        for i in range(n):
            for j in range(i + 1, n):
                aspect = min(hs[i] / hs[j], hs[j] / hs[i])
                bound = offdiag * lo * aspect / (n - 1)
                v = rng.uniform(-bound, bound, size=lead)
                A[..., i, j] = v
                A[..., j, i] = v
    B = None
    if drift:
        B = rng.uniform(-drift, drift, size=lead + (n,))
    return Coefficients(A, B)


@dataclass
class StepOperator:
    """Spatial operator of one step: A_h v = B_bot f + B_top g + B_side s."""

    A: sp.csr_matrix
    bot: sp.csr_matrix
    top: sp.csr_matrix
    side: sp.csr_matrix
    max_offdiag: float = 0.0
    min_boundary: float = 0.0

    def data_rhs(self, f, g, s) -> np.ndarray:
        out = self.bot @ f + self.top @ g
        if self.side.shape[1]:
            out = out + self.side @ s
        return out


@dataclass
class DiscreteOperator:
    grid: Grid
    steps: list
    step_index: np.ndarray            # step k (1-based) uses steps[step_index[k-1]]
    coeffs: Optional[Coefficients] = None
    report: dict = field(default_factory=dict)

    def at(self, k: int) -> StepOperator:
        return self.steps[int(self.step_index[k - 1])]


def _ravel(grid: Grid, cell):
    return np.ravel_multi_index(tuple(cell), grid.cell_shape)


def _ghost(grid: Grid, cell):
    """Map out-of-range cell indices to (kind, column) of boundary data.

    kind: 0 bottom, 1 top, 2 side.  Corner ghosts use the nearest in-range
    boundary datum.
    """
    z = cell[0]
    lat = [np.clip(c, 0, grid.nx - 1) for c in cell[1:]]
    kind = np.full(z.shape, -1)
    col = np.zeros(z.shape, dtype=np.int64)
    bot = z < 0
    top = z >= grid.nz
    if grid.m:
        lat_col = np.ravel_multi_index(tuple(lat), grid.lat_shape)
    else:
        lat_col = np.zeros(z.shape, dtype=np.int64)
    kind[bot] = 0
    kind[top] = 1
    col[bot | top] = lat_col[bot | top]
    rest = ~(bot | top)
    if grid.m:
        block = grid.nz * grid.nx ** (grid.m - 1)
        done = ~rest
        for ax in range(grid.m):
            c = cell[1 + ax]
            for w, wall in enumerate((c < 0, c >= grid.nx)):
                sel = wall & ~done
                if not np.any(sel):
                    continue
                others = [lat[b][sel] for b in range(grid.m) if b != ax]
                sub = np.ravel_multi_index((z[sel],) + tuple(others),
                                           (grid.nz,) + (grid.nx,) * (grid.m - 1))
                kind[sel] = 2
                col[sel] = (2 * ax + w) * block + sub
                done = done | sel
    return kind, col


class _Builder:
    def __init__(self, grid: Grid):
        self.grid = grid
        self.N = grid.n_cells
        self.diag = np.zeros(grid.cell_shape)
        self.rows, self.cols, self.vals = [], [], []
        self.brows = ([], [], [])
        self.bcols = ([], [], [])
        self.bvals = ([], [], [])
        self.cells = np.indices(grid.cell_shape)

    def neighbour(self, coef, offset, mask=None, ghost_scale=1.0):
        """Add coefficient ``coef`` (operator entry) at cell + offset.

        Out-of-range neighbours become boundary data with weight -coef * ghost_scale.
        """
        g = self.grid
        coef = np.broadcast_to(coef, g.cell_shape)
        sel = coef != 0 if mask is None else (mask & (coef != 0))
        if not np.any(sel):
            return
        cell = [c[sel] for c in self.cells]
        nb = [c + o for c, o in zip(cell, offset)]
        c = coef[sel]
        inside = np.ones(c.shape, dtype=bool)
        for ax, size in enumerate(g.cell_shape):
            inside &= (nb[ax] >= 0) & (nb[ax] < size)
        row = _ravel(g, cell)
        if np.any(inside):
            self.rows.append(row[inside])
            self.cols.append(_ravel(g, [v[inside] for v in nb]))
            self.vals.append(c[inside])
        out = ~inside
        if np.any(out):
            kind, col = _ghost(g, [v[out] for v in nb])
            for k in range(3):
                s = kind == k
                if np.any(s):
                    self.brows[k].append(row[out][s])
                    self.bcols[k].append(col[s])
                    self.bvals[k].append(-c[out][s] * ghost_scale)

    def matrices(self):
        g = self.grid
        N = self.N
        rows = np.concatenate(self.rows + [np.arange(N)])
        cols = np.concatenate(self.cols + [np.arange(N)])
        vals = np.concatenate(self.vals + [self.diag.ravel()])
        A = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
        A.sum_duplicates()
        widths = (int(np.prod(g.lat_shape)), int(np.prod(g.lat_shape)), g.n_side)
        Bs = []
        for k in range(3):
            if self.brows[k]:
                M = sp.csr_matrix((np.concatenate(self.bvals[k]),
                                   (np.concatenate(self.brows[k]), np.concatenate(self.bcols[k]))),
                                  shape=(N, widths[k]))
                M.sum_duplicates()
            else:
                M = sp.csr_matrix((N, widths[k]))
            Bs.append(M)
        return A, Bs


def _assemble_step(A: np.ndarray, B: Optional[np.ndarray], grid: Grid) -> StepOperator:
    n = grid.n
    hs = grid.spacings
    bld = _Builder(grid)
    unit = np.eye(n, dtype=int)
    for i in range(n):
        a = A[..., i, i]
        lo = np.take(a, np.arange(grid.cell_shape[i] - 1), axis=i)
        hi = np.take(a, np.arange(1, grid.cell_shape[i]), axis=i)
        with np.errstate(invalid="ignore", divide="ignore"):
            face = np.where(lo + hi > 0, 2 * lo * hi / (lo + hi), 0.0)
        T = face / hs[i] ** 2
        Tlo = np.zeros(grid.cell_shape)
        Thi = np.zeros(grid.cell_shape)
        sl_lo = [slice(None)] * n
        sl_hi = [slice(None)] * n
        sl_lo[i] = slice(0, -1)
        sl_hi[i] = slice(1, None)
        Thi[tuple(sl_lo)] = T        # flux to the +e_i neighbour
        Tlo[tuple(sl_hi)] = T        # flux to the -e_i neighbour
        bld.diag += Thi + Tlo
        bld.neighbour(-Thi, unit[i])
        bld.neighbour(-Tlo, -unit[i])
        # Dirichlet faces at distance h/2
        Tb = 2 * a / hs[i] ** 2
        first = np.zeros(grid.cell_shape, dtype=bool)
        last = np.zeros(grid.cell_shape, dtype=bool)
        idx = [slice(None)] * n
        idx[i] = 0
        first[tuple(idx)] = True
        idx[i] = -1
        last[tuple(idx)] = True
        bld.diag += np.where(first, Tb, 0.0) + np.where(last, Tb, 0.0)
        bld.neighbour(np.where(first, -Tb, 0.0), -unit[i])
        bld.neighbour(np.where(last, -Tb, 0.0), unit[i])
    for i in range(n):
        for j in range(i + 1, n):
            aij = 0.5 * (A[..., i, j] + A[..., j, i])
            if not np.any(aij):
                continue
            w = np.abs(aij) / (hs[i] * hs[j])
            for sgn in (1, -1):
                ws = np.where(np.sign(aij) == sgn, w, 0.0)
                if not np.any(ws):
                    continue
                d = unit[i] + sgn * unit[j]
                bld.neighbour(-ws, d)
                bld.neighbour(-ws, -d)
                bld.neighbour(ws, unit[i])
                bld.neighbour(ws, -unit[i])
                bld.neighbour(ws, unit[j])
                bld.neighbour(ws, -unit[j])
                bld.diag -= 2 * ws
    if B is not None:
        for i in range(n):
            b = B[..., i]
            for sgn, part in ((1, np.maximum(b, 0.0)), (-1, np.maximum(-b, 0.0))):
                if not np.any(part):
                    continue
                c = part / hs[i]
                edge = np.zeros(grid.cell_shape, dtype=bool)
                idx = [slice(None)] * n
                idx[i] = -1 if sgn > 0 else 0
                edge[tuple(idx)] = True
                bld.diag += np.where(edge, 2 * c, c)
                bld.neighbour(np.where(edge, 0.0, -c), sgn * unit[i])
                bld.neighbour(np.where(edge, -2 * c, 0.0), sgn * unit[i])
    Ah, (Bb, Bt, Bs) = bld.matrices()
    coo = Ah.tocoo()
    off = coo.data[coo.row != coo.col]
    max_off = float(off.max()) if off.size else 0.0
    mins = [float(M.data.min()) for M in (Bb, Bt, Bs) if M.nnz]
    min_b = min(mins) if mins else 0.0
    return StepOperator(Ah, Bb, Bt, Bs, max_off, min_b)


def assemble(coeffs: Coefficients, grid: Grid, check: bool = True, tol: float = 1e-12) -> DiscreteOperator:
    """Assemble every distinct step operator and verify the M-matrix property."""
    if coeffs.is_time_dependent(grid):
        steps = [_assemble_step(*coeffs.at_step(j, grid), grid) for j in range(grid.nt)]
        index = np.arange(grid.nt)
    else:
        steps = [_assemble_step(*coeffs.at_step(0, grid), grid)]
        index = np.zeros(grid.nt, dtype=int)
    scale = max(float(abs(s.A.diagonal()).max()) for s in steps)
    worst_off = max(s.max_offdiag for s in steps)
    worst_b = min(s.min_boundary for s in steps)
    row_defect = 0.0
    for s in steps:
        one_lat = np.ones(s.bot.shape[1])
        rs = s.A @ np.ones(grid.n_cells) - s.data_rhs(one_lat, one_lat, np.ones(grid.n_side))
        row_defect = max(row_defect, float(np.abs(rs).max()))
    report = {"max_offdiag": worst_off, "min_boundary_coupling": worst_b,
              "row_sum_defect": row_defect, "n_operators": len(steps),
              "mmatrix": worst_off <= tol * scale and worst_b >= -tol * scale}
    if check and not report["mmatrix"]:
        raise AssemblyError(f"M-matrix property violated: max off-diagonal {worst_off:.3e}, "
                            f"min boundary coupling {worst_b:.3e}")
    return DiscreteOperator(grid, steps, index, coeffs, report)


def _as_field(x, shape):
    return np.broadcast_to(np.asarray(x, dtype=float), shape)


@dataclass
class BoundaryData:
    """Dirichlet data.  Scalars broadcast; ``initial='elliptic'`` requests the
    steady extension of the first step's boundary data."""

    lateral: Union[float, np.ndarray] = 0.0
    top: Union[float, np.ndarray] = 0.0
    side: Union[float, np.ndarray] = 0.0
    initial: Union[float, str, np.ndarray] = 0.0

    def fields(self, grid: Grid):
        bs = grid.boundary_shape
        f = _as_field(self.lateral, bs).reshape(grid.nt, -1)
        g = _as_field(self.top, bs).reshape(grid.nt, -1)
        s = _as_field(self.side, (grid.nt, grid.n_side))
        return f, g, s

    def bounds(self, grid: Grid) -> tuple:
        parts = [np.asarray(self.lateral, dtype=float), np.asarray(self.top, dtype=float)]
        if grid.n_side:
            parts.append(np.asarray(self.side, dtype=float))
        if not isinstance(self.initial, str):
            parts.append(np.asarray(self.initial, dtype=float))
        lo = min(float(p.min()) for p in parts if p.size)
        hi = max(float(p.max()) for p in parts if p.size)
        return lo, hi


class _LinearSolver:
    def __init__(self, M: sp.csr_matrix, method: str, tol: float, max_iter: int):
        self.M = M
        self.method = method
        self.tol = tol
        self.max_iter = max_iter
        if method == "direct":
            self.lu = spla.splu(M.tocsc())
        elif method == "bicgstab":
            d = M.diagonal()
            self.pre = spla.LinearOperator(M.shape, matvec=lambda x: x / d, dtype=float)
            dT = d
            self.preT = spla.LinearOperator(M.shape, matvec=lambda x: x / dT, dtype=float)
            self.MT = M.T.tocsr()
        else:
            raise ValueError(f"unknown linear solver {method!r}")

    def _residual(self, M, x, b):
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(M @ x - b) / nb) if nb > 0 else float(np.linalg.norm(M @ x))

    def solve(self, b, x0=None, trans=False):
        M = self.MT if (trans and self.method != "direct") else (self.M.T if trans else self.M)
        if self.method == "direct":
            x = self.lu.solve(b, trans="T" if trans else "N")
            res = self._residual(M, x, b)
            if res > self.tol:
                x = x + self.lu.solve(b - M @ x, trans="T" if trans else "N")
                res = self._residual(M, x, b)
        else:
            x, info = spla.bicgstab(M, b, x0=x0, rtol=self.tol, atol=0.0,
                                    maxiter=self.max_iter, M=self.preT if trans else self.pre)
            res = self._residual(M, x, b)
            if info != 0 and res > self.tol:
                raise SolverError(f"bicgstab stopped with info={info}, residual {res:.3e}")
        if res > max(self.tol, 1e-13) * 10:
            raise SolverError(f"linear solve residual {res:.3e} above tolerance {self.tol:.1e}")
        return x, res


class _StepSolvers:
    def __init__(self, op: DiscreteOperator, method: str, tol: float, max_iter: int):
        self.op = op
        self.args = (method, tol, max_iter)
        self.cache = {}
        self.eye = sp.identity(op.grid.n_cells, format="csr")

    def __call__(self, k: int) -> _LinearSolver:
        j = int(self.op.step_index[k - 1])
        if j not in self.cache:
            if len(self.cache) > 2 and len(self.op.steps) > 1:
                self.cache.clear()
            M = (self.eye + self.op.grid.ht * self.op.steps[j].A).tocsr()
            self.cache[j] = _LinearSolver(M, *self.args)
        return self.cache[j]


@dataclass
class DiscreteSolution:
    grid: Grid
    v: np.ndarray                 # (nt + 1, *cell_shape)
    data: BoundaryData
    residual: np.ndarray          # (nt,)
    _grad: Optional[np.ndarray] = None

    @property
    def grad(self) -> np.ndarray:
        """Spatial gradient, shape (nt + 1, *cell_shape, n)."""
        if self._grad is None:
            self._grad = spatial_gradient(self)
        return self._grad

    def max_principle_gap(self) -> tuple:
        lo, hi = self.data.bounds(self.grid)
        return float(self.v.min() - lo), float(hi - self.v.max())


def elliptic_extension(op: DiscreteOperator, data: BoundaryData, method: str = "direct",
                       tol: float = 1e-10) -> np.ndarray:
    """Solve A_h v = boundary data of step 1 (the time-zero steady state)."""
    st = op.at(1)
    f, g, s = data.fields(op.grid)
    rhs = st.data_rhs(f[0], g[0], s[0])
    if method == "direct":
        v = spla.spsolve(st.A.tocsc(), rhs)
    else:
        v, info = spla.bicgstab(st.A, rhs, rtol=tol, atol=0.0, maxiter=10000)
        if info != 0:
            raise SolverError("elliptic extension did not converge")
    return v.reshape(op.grid.cell_shape)


def solve(op: DiscreteOperator, data: BoundaryData, method: str = "direct",
          tol: float = 1e-10, max_iter: int = 2000) -> DiscreteSolution:
    """March backward Euler: (I + ht A_k) v_k = v_{k-1} + ht (data terms)_k."""
    grid = op.grid
    f, g, s = data.fields(grid)
    if isinstance(data.initial, str):
        if data.initial != "elliptic":
            raise ValueError("initial must be an array, a scalar or 'elliptic'")
        v0 = elliptic_extension(op, data, method, tol)
    else:
        v0 = _as_field(data.initial, grid.cell_shape)
    out = np.empty((grid.nt + 1,) + grid.cell_shape)
    out[0] = v0
    res = np.zeros(grid.nt)
    solvers = _StepSolvers(op, method, tol, max_iter)
    v = v0.ravel().copy()
    for k in range(1, grid.nt + 1):
        st = op.at(k)
        rhs = v + grid.ht * st.data_rhs(f[k - 1], g[k - 1], s[k - 1])
        v, res[k - 1] = solvers(k).solve(rhs, x0=v)
        out[k] = v.reshape(grid.cell_shape)
    return DiscreteSolution(grid, out, data, res)


def _side_block(grid: Grid, s: np.ndarray, ax: int, wall: int) -> np.ndarray:
    """Side data of one wall reshaped to (nz, *lat) with a unit axis at ``ax``."""
    block = grid.nz * grid.nx ** (grid.m - 1)
    j = 2 * ax + wall
    b = s[..., j * block:(j + 1) * block].reshape(s.shape[:-1] + (grid.nz,) + (grid.nx,) * (grid.m - 1))
    return np.expand_dims(b, axis=s.ndim - 1 + 1 + ax)


def spatial_gradient(sol: DiscreteSolution) -> np.ndarray:
    """Average of the two face differences in each direction; boundary faces
    use the Dirichlet datum at distance h/2."""
    grid = sol.grid
    v = sol.v
    f, g, s = sol.data.fields(grid)
    f = np.concatenate([f[:1], f], axis=0).reshape((grid.nt + 1,) + grid.lat_shape)
    g = np.concatenate([g[:1], g], axis=0).reshape((grid.nt + 1,) + grid.lat_shape)
    s = np.concatenate([s[:1], s], axis=0)
    out = np.empty(v.shape + (grid.n,))
    for i in range(grid.n):
        ax = 1 + i
        h = grid.spacings[i]
        if i == 0:
            lo_ghost = f[:, None]
            hi_ghost = g[:, None]
        else:
            lo_ghost = _side_block(grid, s, i - 1, 0)
            hi_ghost = _side_block(grid, s, i - 1, 1)
        d = np.diff(v, axis=ax) / h
        first = (np.take(v, [0], axis=ax) - lo_ghost) / (h / 2)
        last = (hi_ghost - np.take(v, [v.shape[ax] - 1], axis=ax)) / (h / 2)
        faces = np.concatenate([first, d, last], axis=ax)
        lo = np.take(faces, np.arange(v.shape[ax]), axis=ax)
        hi = np.take(faces, np.arange(1, v.shape[ax] + 1), axis=ax)
        out[..., i] = 0.5 * (lo + hi)
    return out


@dataclass
class MeasureWeights:
    """Weights reproducing the pole value from every piece of data."""

    grid: Grid
    pole: tuple                       # (k, z, i...) with k in 1..nt
    lateral: np.ndarray               # (nt, *lat)
    top: np.ndarray                   # (nt, *lat)
    side: np.ndarray                  # (nt, n_side)
    initial: np.ndarray               # cell_shape

    def total(self) -> float:
        return float(self.lateral.sum() + self.top.sum() + self.side.sum() + self.initial.sum())

    def min_weight(self) -> float:
        parts = [self.lateral, self.top, self.initial] + ([self.side] if self.side.size else [])
        return float(min(p.min() for p in parts))

    def apply(self, data: BoundaryData) -> float:
        f, g, s = data.fields(self.grid)
        val = float(np.sum(self.lateral.reshape(f.shape) * f) + np.sum(self.top.reshape(g.shape) * g))
        if self.side.size:
            val += float(np.sum(self.side * s))
        if isinstance(data.initial, str):
            raise ValueError("apply() needs explicit initial data")
        val += float(np.sum(self.initial * _as_field(data.initial, self.grid.cell_shape)))
        return val


def pole_index(grid: Grid, x0: float, x=(), t: float = 0.0) -> tuple:
    """Index (k, z, i...) of the cell containing the point, k in 1..nt."""
    k = int(np.clip(np.ceil((t - grid.t0) / grid.ht - 1e-9), 1, grid.nt))
    z = int(np.clip(np.floor(x0 / grid.h), 0, grid.nz - 1))
    lat = tuple(int(np.clip(np.floor((c - grid.x_lo) / grid.hx), 0, grid.nx - 1)) for c in x)
    return (k, z) + lat


def adjoint_measure(op: DiscreteOperator, pole: tuple, method: str = "direct",
                    tol: float = 1e-12, max_iter: int = 5000) -> MeasureWeights:
    """Green row of the pole cell, marching the transposed steps backward.

    With mu = e_pole, each step k (from the pole step down to 1) solves
    lam = M_k^{-T} mu, books ht B_k^T lam as data weights, and passes mu = lam
    to the previous step; the last mu weights the initial state.
    """
    grid = op.grid
    kp = pole[0]
    if not 1 <= kp <= grid.nt:
        raise ValueError("pole step must lie in 1..nt")
    mu = np.zeros(grid.n_cells)
    mu[np.ravel_multi_index(tuple(pole[1:]), grid.cell_shape)] = 1.0
    nl = int(np.prod(grid.lat_shape))
    lat = np.zeros((grid.nt, nl))
    top = np.zeros((grid.nt, nl))
    side = np.zeros((grid.nt, grid.n_side))
    solvers = _StepSolvers(op, method, tol, max_iter)
    for k in range(kp, 0, -1):
        st = op.at(k)
        lam, _ = solvers(k).solve(mu, x0=mu, trans=True)
        lat[k - 1] = grid.ht * (st.bot.T @ lam)
        top[k - 1] = grid.ht * (st.top.T @ lam)
        if grid.n_side:
            side[k - 1] = grid.ht * (st.side.T @ lam)
        mu = lam
    return MeasureWeights(grid, tuple(pole), lat.reshape(grid.boundary_shape),
                          top.reshape(grid.boundary_shape), side, mu.reshape(grid.cell_shape))
