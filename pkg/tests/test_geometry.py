import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from parabolic_lab.geometry import (
    BoundaryBall, GeometryError, GraphDomain, Grid, ParabolicCube, ParabolicPoint,
    boundary_distance, carleson_region, character, corkscrew, cube_mask,
    half_ball_volume, half_time_derivative, lip_half_constant, mean_oscillation_sup,
    par_dist, sigma_measure,
)
from oracles import lip_half_brute, mean_osc_brute, par_dist_mp

# mpmath references for the principal value on [-pi, pi]
HALF_SIN_AT_HALF = -1.25410583141343432664507879522
HALF_COS_AT_ZERO = -2.64513508749110937482354049482

coord = st.floats(-10, 10, allow_nan=False)


@given(st.tuples(coord, coord, coord), st.tuples(coord, coord, coord))
def test_par_dist_matches_high_precision(p, q):
    a = ParabolicPoint(p[0], (p[1],), p[2])
    b = ParabolicPoint(q[0], (q[1],), q[2])
    assert par_dist(a, b) == pytest.approx(par_dist_mp(p, q), rel=1e-12, abs=1e-12)


@given(st.tuples(coord, coord, coord), st.tuples(coord, coord, coord), st.floats(0.1, 10))
def test_par_dist_symmetric_and_scales(p, q, lam):
    a = ParabolicPoint(p[0], (p[1],), p[2])
    b = ParabolicPoint(q[0], (q[1],), q[2])
    assert par_dist(a, b) == pytest.approx(par_dist(b, a))
    # parabolic dilation (x, t) -> (lam x, lam^2 t)
    la = ParabolicPoint(lam * p[0], (lam * p[1],), lam * lam * p[2])
    lb = ParabolicPoint(lam * q[0], (lam * q[1],), lam * lam * q[2])
    assert par_dist(la, lb) == pytest.approx(lam * par_dist(a, b), rel=1e-9, abs=1e-9)


def test_ball_rejects_nonpositive_radius():
    with pytest.raises(GeometryError):
        BoundaryBall((), 0.0, 0.0)


def test_grid_shapes():
    g = Grid(3, 4, 0.25, 5, 0.1, nx=6, hx=0.5)
    assert g.cell_shape == (4, 6, 6)
    assert g.boundary_shape == (5, 6, 6)
    assert g.sigma_cell == pytest.approx(0.025)
    assert g.side_points().shape == (g.n_side, 3)
    f = g.refine()
    assert (f.nz, f.nt, f.nx) == (8, 20, 12)


def test_half_derivative_reference_values():
    ts = np.linspace(-np.pi, np.pi, 20001)
    assert half_time_derivative(np.sin(ts), ts, 0.5) == pytest.approx(HALF_SIN_AT_HALF, rel=1e-5)
    assert half_time_derivative(np.cos(ts), ts, 0.0) == pytest.approx(HALF_COS_AT_ZERO, rel=1e-4)
    assert abs(half_time_derivative(np.sin(ts), ts, 0.0)) < 1e-12


def test_half_derivative_of_linear_exact():
    # psi(s) = s on [-1, 1]: both halves cancel at the centre
    ts = np.linspace(-1, 1, 11)
    assert abs(half_time_derivative(ts, ts, 0.0)) < 1e-13
    # off centre: int_{-1}^{1} (s - t)|s - t|^{-3/2} ds = 2 sqrt(1 - t) - 2 sqrt(1 + t)
    t = 0.3
    ref = 2 * math.sqrt(1 - t) - 2 * math.sqrt(1 + t)
    assert half_time_derivative(ts, ts, t) == pytest.approx(ref, rel=1e-12)


def test_half_derivative_needs_samples():
    ts = np.linspace(0, 1, 5)
    with pytest.raises(GeometryError):
        half_time_derivative(ts, ts, 0.5)


@given(st.integers(0, 2**31 - 1), st.integers(2, 6), st.integers(1, 5))
def test_lip_half_exact_against_pair_scan(seed, nt, nx):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=(nt, nx))
    assert lip_half_constant(psi, 0.3, 0.05) == pytest.approx(lip_half_brute(psi, 0.3, 0.05), rel=1e-12)


def test_lip_half_of_linear_graph():
    # psi = x: the constant is 1 (attained by lateral neighbours)
    xs = np.arange(6) * 0.1
    psi = np.broadcast_to(xs, (4, 6))
    assert lip_half_constant(psi, 0.1, 0.01) == pytest.approx(1.0)


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.15, 0.25, 0.4]))
def test_mean_oscillation_against_box_scan(seed, r):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(12, 9))
    hx, ht = 0.1, 0.01
    p = max(math.ceil(r / hx - 1e-12) - 1, 0)
    q = max(math.ceil(r * r / ht - 1e-12) - 1, 0)
    got = mean_oscillation_sup(f, hx, ht, [r])
    assert got == pytest.approx(mean_osc_brute(f, q, p), rel=1e-12)


def test_mean_oscillation_invariances():
    rng = np.random.default_rng(3)
    f = rng.normal(size=(20, 10))
    a = mean_oscillation_sup(f, 0.1, 0.01, [0.2, 0.3])
    assert mean_oscillation_sup(f + 7.0, 0.1, 0.01, [0.2, 0.3]) == pytest.approx(a)
    assert mean_oscillation_sup(-2 * f, 0.1, 0.01, [0.2, 0.3]) == pytest.approx(2 * a)


def test_character_flat_and_sine():
    flat = GraphDomain.from_spec({"n": 2, "hx": 0.1, "time": [0, 0.2]}, compute_character=True)
    assert flat.ell_spatial == 0.0 and flat.halfder_bmo == 0.0
    dom = GraphDomain.from_spec({"n": 2, "hx": 0.05, "ht": 0.0025, "time": [0, 0.5],
                                 "psi": {"kind": "sine", "amp": 0.3, "kx": 1.0}})
    ell, bmo = character(dom)
    # time independent: the constant is the sampled slope, below 0.3
    assert 0.28 < ell <= 0.3 + 1e-12
    assert bmo == 0.0


def test_sigma_measure_flat_cube():
    dom = GraphDomain.from_spec({"n": 2, "hx": 0.1, "ht": 0.01, "time": [0, 1], "lateral": [-1, 1]})
    cube = ParabolicCube((0.0,), 0.5, 0.32)
    mask = cube_mask(dom, cube)
    # 6 lateral centres within 0.32 of 0, 21 times within 0.1024 of 0.5
    assert mask.sum() == 6 * 21
    assert sigma_measure(dom, mask) == pytest.approx(6 * 21 * 0.1 * 0.01)


def test_boundary_distance_windowed_matches_brute():
    dom = GraphDomain.from_spec({"n": 2, "hx": 0.05, "ht": 0.0025, "time": [0, 0.5],
                                 "psi": {"kind": "sine", "amp": 0.2, "kx": 3.0, "kt": 4.0}})
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = ParabolicPoint(rng.uniform(0.05, 0.5), (rng.uniform(-0.8, 0.8),), rng.uniform(0.05, 0.45))
        assert boundary_distance(dom, p) == pytest.approx(boundary_distance(dom, p, brute=True))


def test_corkscrew_flat():
    dom = GraphDomain.from_spec({"n": 2, "hx": 0.02, "ht": 0.0004, "time": [0, 1], "lateral": [-1, 1]})
    ck = corkscrew(dom, BoundaryBall((0.0,), 0.2, 0.2))
    assert ck.point.x0 == pytest.approx(0.1)
    assert ck.point.t == pytest.approx(0.28)
    assert 0.05 <= ck.delta <= 0.4
    with pytest.raises(GeometryError):
        corkscrew(dom, BoundaryBall((0.0,), 0.9, 0.5))


def test_half_ball_volume_monte_carlo():
    rng = np.random.default_rng(1)
    N = 400000
    for n in (1, 2):
        pts = rng.uniform(-1, 1, size=(N, n + 1))
        pts[:, 0] = np.abs(pts[:, 0])
        inside = np.sum(pts[:, :n] ** 2, axis=1) + np.abs(pts[:, n]) < 1
        box = 2.0 ** n  # x0 in (0, 1), other coordinates in (-1, 1)
        est = inside.mean() * box
        assert est == pytest.approx(half_ball_volume(n, 1.0), rel=0.01)
    assert half_ball_volume(2, 0.5) == pytest.approx(half_ball_volume(2, 1.0) * 0.5 ** 4)


def test_carleson_region_counts():
    g = Grid(1, 10, 0.1, 100, 0.01)
    mask = carleson_region(g, BoundaryBall((), 0.5, 0.5))
    z = g.heights[None, :]
    t = g.times[:, None]
    ref = z ** 2 + np.abs(t - 0.5) < 0.25
    assert np.array_equal(mask, ref)
