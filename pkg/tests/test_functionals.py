import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabolic_lab.functionals import (
    CarlesonDensity, Cone, ConeError, bmo_norm, carleson_energy, carleson_norm,
    cone_stencil, cube_family, energy_integral, ntmax, oscillation_density,
    perturbation_density, square_function, square_integral, sup_ball_energy,
)
from parabolic_lab.geometry import BoundaryBall, Grid
from parabolic_lab.solver import BoundaryData, DiscreteSolution


def synthetic(grid, rng, grad=True):
    v = rng.normal(size=(grid.nt + 1,) + grid.cell_shape)
    sol = DiscreteSolution(grid, v, BoundaryData(), np.zeros(grid.nt))
    if grad:
        sol._grad = rng.normal(size=v.shape + (grid.n,))
    return sol


def in_cone(grid, a, dk, di, y):
    d = math.sqrt(abs(dk) * grid.ht) + grid.hx * math.sqrt(sum(c * c for c in di))
    return d < a * y or (dk == 0 and not any(di))


def brute_cone_fields(sol, a, r):
    """Nontangential max and square function by direct enumeration."""
    g = sol.grid
    G = np.sum(sol.grad[1:] ** 2, axis=-1)
    V = np.abs(sol.v[1:])
    N = np.zeros(g.boundary_shape)
    S2 = np.zeros(g.boundary_shape)
    for b in np.ndindex(*g.boundary_shape):
        for c in np.ndindex(*((g.nt,) + g.cell_shape)):
            y = g.heights[c[1]]
            if y >= r:
                continue
            di = tuple(ci - bi for ci, bi in zip(c[2:], b[1:]))
            if in_cone(g, a, c[0] - b[0], di, y):
                N[b] = max(N[b], V[c])
                S2[b] += y ** (-g.n) * G[c] * g.cell_volume
    return N, np.sqrt(S2)


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1.0, 2.0, 3.5]), st.sampled_from([1, 2]))
def test_cone_functionals_match_enumeration(seed, a, n):
    g = Grid(n, 4, 0.25, 6, 0.05, nx=5 if n > 1 else 1, hx=0.2)
    sol = synthetic(g, np.random.default_rng(seed))
    N, S = brute_cone_fields(sol, a, 0.8)
    assert np.allclose(ntmax(sol, a, 0.8), N)
    assert np.allclose(square_function(sol, a, 0.8), S, atol=1e-10)


def test_cone_contains_agrees_with_stencil():
    g = Grid(2, 4, 0.25, 30, 0.01, nx=21, hx=0.05)
    cone = Cone(2.0)
    st_ = cone_stencil(g, 2.0, 0.15)
    Kt, Kx = st_.shape[0] // 2, st_.shape[1] // 2
    for dk in range(-Kt, Kt + 1):
        for di in range(-Kx, Kx + 1):
            inside = cone.contains((0.0,), 0.0, 0.15, (di * g.hx,), dk * g.ht)
            assert st_[dk + Kt, di + Kx] == (inside or (dk == 0 and di == 0))


def test_stencil_monotone_in_aperture():
    g = Grid(2, 4, 0.25, 30, 0.01, nx=21, hx=0.05)
    small = cone_stencil(g, 1.0, 0.1)
    big = cone_stencil(g, 2.0, 0.1)
    pt, px = (big.shape[0] - small.shape[0]) // 2, (big.shape[1] - small.shape[1]) // 2
    padded = np.pad(small, ((pt, pt), (px, px)))
    assert np.all(big >= padded)
    assert np.array_equal(big, big[::-1, ::-1])


def test_square_integral_is_fubini_of_extended_square():
    g = Grid(2, 5, 0.2, 8, 0.04, nx=6, hx=0.2)
    sol = synthetic(g, np.random.default_rng(2))
    S = square_function(sol, 2.0, extend=True)
    assert float(np.sum(S ** 2)) * g.sigma_cell == pytest.approx(square_integral(sol, 2.0), rel=1e-10)


def test_cone_rejects_bad_input():
    g = Grid(1, 4, 0.25, 6, 0.05)
    sol = synthetic(g, np.random.default_rng(0))
    with pytest.raises(ConeError):
        ntmax(sol, 0.0)
    with pytest.raises(ConeError):
        square_function(sol, 2.0, r=0.1)


def test_energy_integral_weights():
    g = Grid(1, 4, 0.25, 3, 0.1)
    sol = synthetic(g, np.random.default_rng(0))
    sol._grad = np.ones_like(sol._grad)
    # sum of y over the cells times nt * cell volume
    assert energy_integral(sol) == pytest.approx(sum(g.heights) * 3 * g.cell_volume)
    assert energy_integral(sol, weight_power=0.0) == pytest.approx(4 * 3 * g.cell_volume)


def test_carleson_energy_brute():
    g = Grid(2, 6, 0.1, 20, 0.01, nx=9, hx=0.1, x_lo=-0.45)
    sol = synthetic(g, np.random.default_rng(7))
    ball = BoundaryBall((0.0,), 0.1, 0.3)
    G = np.sum(sol.grad[1:] ** 2, axis=-1)
    mass = 0.0
    for k, z, i in np.ndindex(*G.shape):
        d2 = g.heights[z] ** 2 + abs(g.times[k] - 0.1) + g.lateral_centers[i] ** 2
        if d2 < 0.09:
            mass += G[k, z, i] * g.heights[z] * g.cell_volume
    cnt = sum(1 for k, i in np.ndindex(g.nt, g.nx)
              if abs(g.times[k] - 0.1) + g.lateral_centers[i] ** 2 < 0.09)
    assert carleson_energy(sol, ball) == pytest.approx(mass / (cnt * g.sigma_cell))


def test_sup_ball_energy_constant_gradient_matches_half_ball():
    g = Grid(1, 40, 0.025, 400, 0.025 ** 2)
    sol = synthetic(g, np.random.default_rng(0))
    sol._grad = np.ones_like(sol._grad)
    # int over the half ball of x0 dx0 dt / sigma = int_0^r 2 y (r^2 - y^2) dy / (2 r^2) = r^2 / 4
    got = sup_ball_energy(sol, [0.25])
    assert got == pytest.approx(0.25 ** 2 / 4, rel=0.03)


def test_carleson_norm_brute():
    g = Grid(2, 8, 1 / 16, 16, 1 / 64, nx=8, hx=1 / 16)
    rng = np.random.default_rng(3)
    mu = CarlesonDensity(rng.uniform(size=(g.nt,) + g.cell_shape), g)
    fam = cube_family(g, [0.125, 0.25])
    best = 0.0
    for r, ts, (ls,) in fam:
        zs = g.heights < r
        m = mu.values[ts][:, zs][:, :, ls].sum() * g.cell_volume
        best = max(best, m / ((ts.stop - ts.start) * (ls.stop - ls.start) * g.sigma_cell))
    assert carleson_norm(mu, fam) == pytest.approx(best)
    # cubes of radius r use 2 r^2 / ht time cells and 2 r / hx lateral cells
    assert all(ts.stop - ts.start == round(2 * r * r * 64) for r, ts, _ in fam)


def test_carleson_density_nonnegative():
    g = Grid(1, 2, 0.5, 2, 0.25)
    with pytest.raises(ValueError):
        CarlesonDensity(-np.ones((2, 2)), g)


def test_oscillation_density_properties():
    g = Grid(2, 8, 1 / 8, 4, 1 / 64, nx=8, hx=1 / 8)
    const = np.broadcast_to(np.eye(2) * 1.5, g.cell_shape + (2, 2)).copy()
    assert np.all(oscillation_density(const, g).values == 0)
    rng = np.random.default_rng(0)
    A = const.copy()
    A[..., 0, 0] += rng.uniform(-0.2, 0.2, size=g.cell_shape)
    d1 = oscillation_density(A, g).values
    A[..., 0, 0] = 1.5 + 2 * (A[..., 0, 0] - 1.5)
    assert oscillation_density(A, g).values == pytest.approx(4 * d1)
    assert np.all(perturbation_density(const, const, g).values == 0)


def test_bmo_of_dyadic_step():
    g = Grid(1, 1, 1.0, 64, 1.0)
    f = np.where(np.arange(64) < 32, 0.0, 1.0)
    assert bmo_norm(f, g) == pytest.approx(0.5)
    rng = np.random.default_rng(1)
    h = rng.normal(size=64)
    assert bmo_norm(3 * h + 2, g) == pytest.approx(3 * bmo_norm(h, g))
    assert bmo_norm(np.ones(64), g, family="exhaustive") == 0.0
