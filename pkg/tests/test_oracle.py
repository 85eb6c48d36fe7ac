import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from parabolic_lab.oracle import (
    CaloricKernel, cone_slice_constant, cone_slice_constant_mc, halfspace_solution,
    kernel_mass, manufactured_caloric, quarter_plane_cell_mass,
)

# |{|x| + |t|^(1/2) < 1}| in R^(n-1) x R, via mpmath
CONE_1 = 2.0
CONE_2 = 4.0 / 3.0
CONE_3 = float(mp.pi / 3)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("x0", [0.05, 0.5, 2.0])
def test_kernel_has_unit_mass(n, x0):
    assert kernel_mass(x0, n) == pytest.approx(1.0, abs=1e-9)


@given(st.floats(0.01, 3), st.floats(1e-3, 5), st.floats(1e-3, 5))
def test_cell_mass_is_integral_of_kernel(x0, a, b):
    lo, hi = min(a, b), max(a, b)
    ref = float(mp.quad(lambda t: x0 / (2 * mp.sqrt(mp.pi)) * t ** -1.5 * mp.exp(-x0 ** 2 / (4 * t)), [lo, hi]))
    assert float(quarter_plane_cell_mass(x0, lo, hi)) == pytest.approx(ref, rel=1e-8, abs=1e-14)


@given(st.floats(0.1, 2), st.floats(-1, 1), st.floats(0.05, 2), st.floats(0.3, 3))
def test_kernel_parabolic_scaling(x0, x, tau, r):
    k = CaloricKernel(2)
    a = k.scaled(r, x0, np.array([x]), tau)
    b = k(x0, np.array([x]), tau)
    # k(r X, r^2 t) r^(n+1) = k(X, t)
    assert float(a) == pytest.approx(float(b), rel=1e-10)


def test_kernel_vanishes_before_pole_time():
    k = CaloricKernel(2)
    assert float(k(0.3, np.array([0.1]), -0.2)) == 0.0
    assert float(k(0.3, np.array([0.1]), 0.0)) == 0.0


def test_constant_data_gives_erfc():
    pts = np.array([[0.2, 0.5], [0.5, 1.0], [1.0, 0.3]])
    f = lambda y, s: np.ones(np.shape(s))
    got = halfspace_solution(f, pts, 1)
    ref = [math.erfc(x0 / (2 * math.sqrt(t))) for x0, t in pts]
    assert got == pytest.approx(ref, abs=1e-10)


def test_two_rules_agree_in_plane():
    f = lambda y, s: np.exp(-np.asarray(y)[..., 0] ** 2) * (np.asarray(s) > 0.1)
    pts = np.array([[0.3, 0.1, 0.6], [0.15, -0.4, 0.35]])
    a = halfspace_solution(f, pts, 2, rule="z", time_breaks=[0.1])
    b = halfspace_solution(f, pts, 2, rule="tau", time_breaks=[0.1])
    assert a == pytest.approx(b, rel=1e-7, abs=1e-10)


def test_cone_constants():
    assert cone_slice_constant(1, 1.0) == pytest.approx(CONE_1)
    assert cone_slice_constant(2, 1.0) == pytest.approx(CONE_2)
    assert cone_slice_constant(3, 1.0) == pytest.approx(CONE_3)
    # scales like a^(n+1)
    assert cone_slice_constant(3, 2.0) == pytest.approx(CONE_3 * 16)


@pytest.mark.parametrize("n", [2, 3])
def test_cone_constant_monte_carlo(n):
    est = cone_slice_constant_mc(n, 1.0, samples=2 * 10**6, rng=np.random.default_rng(5))
    assert est == pytest.approx(cone_slice_constant(n, 1.0), rel=5e-3)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_manufactured_solution_is_caloric(n):
    diag = (1.3, 0.7, 2.0)[:n]
    u = manufactured_caloric(n, diag)
    y0, y, t, e = 0.4, np.array([0.3, -0.2][: n - 1]), 0.5, 1e-4
    ut = (u(y0, y, t + e) - u(y0, y, t - e)) / (2 * e)
    lap = 0.0
    for i in range(n):
        def shifted(d):
            if i == 0:
                return u(y0 + d, y, t)
            yy = y.copy()
            yy[i - 1] += d
            return u(y0, yy, t)
        lap += diag[i] * (shifted(e) - 2 * shifted(0) + shifted(-e)) / e ** 2
    assert float(ut) == pytest.approx(float(lap), abs=1e-5)
    g = u.grad(y0, y, t)
    assert g.shape == (n,)
