"""Reusable experiment drivers shared by the command line and the acceptance tests.

Every driver returns a plain dict of numbers (and numpy arrays) tagged with
the grid it ran on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dyadic import DyadicTree, build_grid, good_cover, kkpt_data, lower_bound_experiment
from .exponents import cz_reverse_holder
from .functionals import (bmo_norm, carleson_norm, cube_family, energy_integral,
                          oscillation_density, square_function, square_integral,
                          sup_ball_energy)
from .geometry import BoundaryBall, Grid
from .measure import KernelDensity, ainfty_scan, ball_mask, doubling_table, parabolic_measure
from .oracle import cone_slice_constant, quarter_plane_cell_mass
from .solver import (BoundaryData, DiscreteOperator, adjoint_measure, assemble,
                     identity_coefficients, pole_index, random_elliptic,
                     scalar_coefficients, solve)

__all__ = [
    "grid_tag",
    "FlatHeat",
    "flat_heat",
    "kernel_oracle_error",
    "unit_mass_trials",
    "comparison_trials",
    "square_identity",
    "random_block_data",
    "log_jump",
    "bounded_data_energies",
    "bmo_family_ratios",
    "ainfty_experiment",
    "doubling_experiment",
    "low_kernel_set",
    "lower_bound_run",
    "cover_lengths",
    "witness_coefficient",
    "bump_coefficient",
    "witness_norms",
    "witness_slope_theory",
    "cz_experiment",
    "oracle_validate",
]


def grid_tag(g: Grid) -> dict:
    return {"n": g.n, "nz": g.nz, "h": g.h, "nt": g.nt, "ht": g.ht, "nx": g.nx, "hx": g.hx}


# flat heat configuration (n = 1)

@dataclass
class FlatHeat:
    grid: Grid
    op: DiscreteOperator
    kernel: KernelDensity
    weights: object
    d: float                      # half-width of the reference ball Delta_d
    s: float                      # its centre time
    pre: int                      # first time cell of the dyadic root
    depth: int

    def tree(self) -> DyadicTree:
        return build_grid(self.kernel.omega, self.grid, self.depth, origin=(self.pre,))

    @property
    def ball(self) -> BoundaryBall:
        return BoundaryBall((), self.s, self.d)


def flat_heat(cells_per_unit: int, depth: int, pre_frac: float = 0.5,
              height_factor: float = 3.0) -> FlatHeat:
    """Heat equation in x0 > 0 with the pole at the corkscrew (d, s + 2 d^2) of
    the reference ball, where the ball spans the 4^depth time cells of the
    dyadic root and ht = h^2."""
    h = 1.0 / cells_per_unit
    ht = h * h
    nroot = 4 ** depth
    d = math.sqrt(nroot * ht / 2)
    pre = int(nroot * pre_frac)
    nt = pre + 2 * nroot
    nz = int(math.ceil(height_factor * d / h))
    g = Grid(1, nz, h, nt, ht)
    op = assemble(identity_coefficients(g), g)
    s = (pre + nroot / 2) * ht
    w = adjoint_measure(op, pole_index(g, d, (), s + 2 * d * d))
    return FlatHeat(g, op, KernelDensity.from_weights(w), w, d, s, pre, depth)


# criterion style drivers

def kernel_oracle_error(nz: int = 256, nt: int = 512, pole_cells: int = 16,
                        min_dist_cells: float = 8.0, radii_cells=(4, 8, 16),
                        ht_factor: float = 0.5) -> dict:
    """Quarter-plane discrete kernel against the exact caloric Poisson kernel.

    Returns the worst relative L1 error over boundary balls at parabolic
    distance at least ``min_dist_cells`` from the pole.
    """
    h = 1.0 / nz
    g = Grid(1, nz, h, nt, ht_factor * h * h)
    op = assemble(identity_coefficients(g), g)
    w = adjoint_measure(op, (nt, pole_cells))
    x0 = (pole_cells + 0.5) * h
    tp = g.times[-1]
    tk = g.times
    exact = quarter_plane_cell_mass(x0, tp - tk, tp - (tk - g.ht))
    num = w.lateral.ravel()
    worst = 0.0
    nballs = 0
    for rc in radii_cells:
        r = rc * h
        step = max(1, int(r * r / g.ht))
        for k in range(0, nt, step):
            s = tk[k]
            dist = math.sqrt(x0 ** 2 + max(tp - s, 0.0))
            if dist - r < min_dist_cells * h:
                continue
            m = np.abs(tk - s) < r * r
            ex = exact[m].sum()
            if ex <= 1e-300:
                continue
            worst = max(worst, float(np.abs(num[m] - exact[m]).sum() / ex))
            nballs += 1
    total = float(np.abs(num - exact).sum() / exact.sum())
    return {"max_ball_rel_l1": worst, "total_rel_l1": total, "balls": nballs,
            "grid": grid_tag(g)}


def unit_mass_trials(trials: int = 10, lam: float = 0.5, Lam: float = 2.0, seed: int = 0,
                     shape=(2, 16, 16, 24)) -> dict:
    rng = np.random.default_rng(seed)
    n, nz, nx, nt = shape
    h = 1.0 / nz
    g = Grid(n, nz, h, nt, h * h, nx=nx, hx=h)
    sums, mins = [], []
    for _ in range(trials):
        c = random_elliptic(g, lam, Lam, rng, offdiag=0.25, drift=1.0)
        op = assemble(c, g)
        pole = (nt, int(rng.integers(2, nz - 2)), int(rng.integers(2, nx - 2)))
        w = adjoint_measure(op, pole)
        sums.append(w.total())
        mins.append(w.min_weight())
    return {"sums": sums, "mins": mins, "grid": grid_tag(g), "seed": seed}


def comparison_trials(trials: int = 100, seed: int = 0, lam: float = 0.5,
                      Lam: float = 2.0) -> dict:
    """Random (coefficients, data) pairs: bounds and monotone dependence on data."""
    rng = np.random.default_rng(seed)
    worst_bound, worst_order = np.inf, np.inf
    for i in range(trials):
        n = int(rng.integers(1, 4))
        nz = int(rng.integers(6, 12))
        nx = int(rng.integers(4, 8)) if n > 1 else 1
        nt = int(rng.integers(3, 7))
        h = 1.0 / nz
        g = Grid(n, nz, h, nt, float(rng.uniform(0.3, 3.0)) * h * h, nx=nx, hx=h)
        c = random_elliptic(g, lam, Lam, rng, offdiag=0.25 if n > 1 else 0.0,
                            time_dependent=bool(rng.integers(0, 2)),
                            drift=float(rng.uniform(0, 3)))
        op = assemble(c, g)
        bs = g.boundary_shape
        d1 = BoundaryData(lateral=rng.uniform(-1, 1, bs), top=rng.uniform(-1, 1, bs),
                          side=rng.uniform(-1, 1, (nt, g.n_side)),
                          initial=rng.uniform(-1, 1, g.cell_shape))
        d2 = BoundaryData(lateral=d1.lateral + rng.uniform(0, 1, bs) * (rng.random(bs) < 0.5),
                          top=d1.top, side=d1.side + rng.uniform(0, 0.5, (nt, g.n_side)),
                          initial=d1.initial + rng.uniform(0, 0.2, g.cell_shape))
        s1 = solve(op, d1)
        s2 = solve(op, d2)
        lo_gap, hi_gap = s1.max_principle_gap()
        worst_bound = min(worst_bound, lo_gap, hi_gap)
        worst_order = min(worst_order, float((s2.v - s1.v).min()))
    return {"min_bound_gap": float(worst_bound), "min_order_gap": float(worst_order),
            "trials": trials, "seed": seed}


def square_identity(n: int, a: float, N: int, ht_factor: float, scale_cells: float,
                    r_factor: float = 3.0) -> dict:
    """Both sides of  int S_a^r(v)^2 dsigma = c(n, a) int_{y0<r} y0 |grad v|^2.

    n = 1 uses a time pulse of width (scale)^2 on an N x N grid; n = 2 uses
    a steady lateral Gaussian of width ``scale`` on an N^3 grid.
    """
    h = 1.0 / N
    L = scale_cells * h
    if n == 1:
        g = Grid(1, N, h, N, ht_factor * h * h)
        op = assemble(identity_coefficients(g), g)
        tc = g.times[N // 2]
        f = np.exp(-0.5 * ((g.times - tc) / L ** 2) ** 2)
        sol = solve(op, BoundaryData(lateral=f))
    else:
        g = Grid(2, N, h, N, ht_factor * h * h, nx=N, hx=h, x_lo=-0.5)
        op = assemble(identity_coefficients(g), g)
        f = np.ones(g.nt)[:, None] * np.exp(-0.5 * (g.lateral_centers / L) ** 2)[None, :]
        sol = solve(op, BoundaryData(lateral=f, initial="elliptic"))
    r = r_factor * L
    S = square_function(sol, a, r, extend=True)
    lhs = float((S ** 2).sum() * g.sigma_cell)
    rhs = cone_slice_constant(n, a) * energy_integral(sol, r)
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs,
            "fubini_ratio": square_integral(sol, a, r) / rhs, "grid": grid_tag(g)}


def random_block_data(rng: np.random.Generator, nt: int, max_log_block: int = 6) -> np.ndarray:
    """Piecewise constant data in [-1, 1] on blocks of a random dyadic length."""
    b = 2 ** int(rng.integers(0, max_log_block + 1))
    vals = rng.uniform(-1, 1, -(-nt // b))
    return np.repeat(vals, b)[:nt]


def log_jump(times: np.ndarray, t_star: float, length: float) -> np.ndarray:
    """log+(length / |t - t*|) plus a unit jump at t*; a BMO function."""
    d = np.abs(times - t_star)
    return np.maximum(np.log(length / d), 0.0) + (times > t_star)


def _energy_grid(cells_per_unit: int = 64, nt: int = 1024) -> Grid:
    h = 1.0 / cells_per_unit
    return Grid(1, cells_per_unit, h, nt, h * h)


def _energy_radii(g: Grid):
    return [g.h * 2 ** (k / 2) for k in range(2, 11)]


def bounded_data_energies(draws: int = 50, seed: int = 0, cells_per_unit: int = 64,
                          nt: int = 1024) -> dict:
    g = _energy_grid(cells_per_unit, nt)
    op = assemble(identity_coefficients(g), g)
    rng = np.random.default_rng(seed)
    skip = g.nt // 8
    vals = []
    for _ in range(draws):
        sol = solve(op, BoundaryData(lateral=random_block_data(rng, g.nt)))
        vals.append(sup_ball_energy(sol, _energy_radii(g), skip))
    vals = np.array(vals)
    return {"energies": vals, "max_over_median": float(vals.max() / np.median(vals)),
            "grid": grid_tag(g), "seed": seed}


def bmo_family_ratios(scales=(0.5, 1.0, 2.0), mode: str = "amplitude",
                      cells_per_unit: int = 64, nt: int = 1024) -> dict:
    """sup-ball energy / ||f||_*^2 over the log-jump family.

    ``mode="amplitude"`` multiplies the data by s; ``"dilation"`` stretches
    the logarithmic profile by s.
    """
    g = _energy_grid(cells_per_unit, nt)
    op = assemble(identity_coefficients(g), g)
    skip = g.nt // 8
    t_star = g.times[g.nt // 2] - g.ht / 2
    base = 256 * g.ht
    out = []
    for s in scales:
        f = s * log_jump(g.times, t_star, base) if mode == "amplitude" else log_jump(g.times, t_star, s * base)
        sol = solve(op, BoundaryData(lateral=f))
        e = sup_ball_energy(sol, _energy_radii(g), skip)
        b = bmo_norm(f[skip:], g)
        out.append(e / b ** 2)
    out = np.array(out)
    return {"ratios": out, "spread": float(out.max() / out.min()), "mode": mode,
            "grid": grid_tag(g)}


def _test_balls(fh: FlatHeat, frac: float = 0.25):
    """Balls of radius frac d inside Delta_d, away from the pole."""
    r = frac * fh.d
    return [BoundaryBall((), fh.s + c * fh.d ** 2, r) for c in (-0.75, -0.25, 0.25, 0.75)]


def ainfty_experiment(fh: FlatHeat, deltas=(0.1, 0.01, 0.001)) -> dict:
    scan = ainfty_scan(fh.kernel, fh.grid, _test_balls(fh), deltas)
    t = scan["table"]
    strict = bool(np.all(np.diff(t, axis=1) < 0))
    return {"table": t, "eps": scan["eps"], "strictly_decreasing": strict,
            "grid": grid_tag(fh.grid)}


def doubling_experiment(fh: FlatHeat, fractions=(0.125, 0.25, 0.5)) -> dict:
    balls = [BoundaryBall((), fh.s, f * fh.d) for f in fractions]
    rows = doubling_table(fh.kernel, fh.grid, balls)
    ratios = [r.ratio for r in rows]
    wd = parabolic_measure(fh.weights, ball_mask(fh.grid, fh.ball))
    return {"ratios": ratios, "max_ratio": float(np.nanmax(ratios)),
            "omega_Delta_d": wd, "grid": grid_tag(fh.grid)}


def low_kernel_set(tree: DyadicTree, delta0: float) -> np.ndarray:
    """Longest initial run of root cells (lowest kernel, earliest times) with
    omega fraction at most delta0; at least one cell."""
    om = tree.omega_cells.reshape(-1)
    cum = np.cumsum(om) / om.sum()
    E = np.zeros(om.size, dtype=bool)
    E[:max(1, int(np.searchsorted(cum, delta0, "right")))] = True
    return E.reshape(tree.cell_shape)


def lower_bound_run(fh: FlatHeat, delta0: float = 1e-3, eps0: float = 0.01,
                    rho: float = 0.1) -> dict:
    tree = fh.tree()
    E = low_kernel_set(tree, delta0)
    cover = good_cover(tree, tree.fine_mask_from_cells(E), eps0)
    kk = kkpt_data(tree, cover, rho)
    res = lower_bound_experiment(kk, E, fh.op)
    res.pop("solution")
    res.update({"cover_length": cover.length, "cover_checks": cover.verify(tree),
                "delta0_measured": cover.delta0, "grid": grid_tag(fh.grid),
                "f_range": (float(kk.f.min()), float(kk.f.max()))})
    return res


def cover_lengths(fh: FlatHeat, deltas=(1e-2, 1e-3, 1e-4), eps0: float = 0.1) -> dict:
    tree = fh.tree()
    lengths, measured = [], []
    for d0 in deltas:
        E = low_kernel_set(tree, d0)
        cov = good_cover(tree, tree.fine_mask_from_cells(E), eps0)
        lengths.append(cov.length)
        measured.append(cov.delta0)
    slope = float(np.polyfit(-np.log(measured), lengths, 1)[0])
    return {"lengths": lengths, "delta0": measured, "slope": slope, "eps0": eps0}


def cz_experiment(fh: FlatHeat, beta: float = 0.5) -> dict:
    """Measured (beta, eps) from the A-infinity scan on Delta_d, then the CZ
    certificate with alpha = 1 - eps."""
    scan = ainfty_scan(fh.kernel, fh.grid, [ball_mask(fh.grid, fh.ball)], [beta])
    eps = float(scan["eps"][0])
    cert = cz_reverse_holder(fh.tree(), beta, 1.0 - eps)
    return {"beta": beta, "eps": eps, "certificate": cert.as_dict()}


# coefficient Carleson witnesses (n = 1, coefficients depend on x0 only)

def witness_coefficient(heights: np.ndarray) -> np.ndarray:
    return 2.0 + np.sin(np.log(1.0 / heights))


def bump_coefficient(heights: np.ndarray, centre: float = 0.5, width: float = 0.1,
                     amp: float = 0.5) -> np.ndarray:
    return 2.0 + amp * np.exp(-((heights - centre) / width) ** 2)


def witness_slope_theory(lo: float = math.log(1.5), hi: float = math.log(2.0),
                         samples: int = 2000) -> float:
    """Phase average of (osc of sin over a log-window)^2: the growth rate of the
    Carleson norm per unit of log(1/h)."""
    out = []
    for p in np.linspace(0, 2 * np.pi, samples, endpoint=False):
        v = np.sin(np.linspace(p - lo, p + hi, 400))
        out.append((v.max() - v.min()) ** 2)
    return float(np.mean(out))


def witness_norms(coef, nzs=(256, 512, 1024), nt: int = 4, ht: float = 0.5) -> dict:
    norms = []
    for nz in nzs:
        h = 1.0 / nz
        g = Grid(1, nz, h, nt, ht)
        a = coef(g.heights)
        A = scalar_coefficients(g, a).A
        mu = oscillation_density(A, g)
        radii = [2.0 ** (-j / 2) for j in range(0, 60) if 2.0 ** (-j / 2) > h]
        norms.append(carleson_norm(mu, cube_family(g, radii)))
    slope = float(np.polyfit(np.log(nzs), norms, 1)[0])
    return {"nz": list(nzs), "norms": norms, "slope": slope}


def oracle_validate(mc_samples: int = 10 ** 7, seed: int = 0) -> dict:
    """Self-test of the analytic references; each entry is (value, passed)."""
    from scipy.special import erfc
    from .oracle import CaloricKernel, cone_slice_constant_mc, halfspace_solution, kernel_mass

    out = {}
    for x0 in (0.1, 1.0, 10.0):
        v = kernel_mass(x0, 1)
        out[f"kernel_mass_n1_x{x0:g}"] = (abs(v - 1), abs(v - 1) < 1e-10)
    v = kernel_mass(1.0, 2)
    out["kernel_mass_n2"] = (abs(v - 1), abs(v - 1) < 1e-8)

    pts = np.array([[0.3, 1.0], [0.1, 0.5], [1.0, 2.0]])
    u = halfspace_solution(lambda y, s: np.ones(np.shape(s)), pts, 1)
    ref = erfc(pts[:, 0] / (2 * np.sqrt(pts[:, 1])))
    out["unit_data_n1"] = (float(np.abs(u - ref).max()), bool(np.abs(u - ref).max() < 1e-8))

    pulse = lambda y, s: np.exp(-np.sum(y ** 2, axis=-1) - (s - 0.5) ** 2 / 0.02)
    pts2 = np.array([[0.2, 0.1, 0.8], [0.5, -0.3, 1.0]])
    a = halfspace_solution(pulse, pts2, 2, rule="z", time_breaks=(0.5,))
    b = halfspace_solution(pulse, pts2, 2, rule="tau", time_breaks=(0.5,))
    out["pulse_dual_rule_n2"] = (float(np.abs(a - b).max()), bool(np.abs(a - b).max() < 1e-6))
    out["pulse_bounds"] = (float(min(a.min(), 1 - a.max())), bool(a.min() >= 0 and a.max() <= 1))

    rng = np.random.default_rng(seed)
    for n, a_ in ((1, 1.0), (2, 1.0)):
        mc = cone_slice_constant_mc(n, a_, mc_samples, rng)
        ex = cone_slice_constant(n, a_)
        out[f"cone_constant_n{n}"] = (abs(mc / ex - 1), abs(mc / ex - 1) < 5e-3)

    k = CaloricKernel(2)
    x0, x, t, e = 0.7, np.array([0.2]), 0.4, 1e-3
    d_t = (k(x0, x, t + e) - k(x0, x, t - e)) / (2 * e)
    lap = ((k(x0 + e, x, t) - 2 * k(x0, x, t) + k(x0 - e, x, t))
           + (k(x0, x + e, t) - 2 * k(x0, x, t) + k(x0, x - e, t))) / e ** 2
    res = abs(float(d_t - lap)) / max(abs(float(d_t)), 1e-300)
    out["kernel_heat_residual"] = (res, res < 1e-4)
    return {key: {"value": float(v), "passed": bool(p)} for key, (v, p) in out.items()}
