import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabolic_lab.geometry import BoundaryBall, Grid
from parabolic_lab.measure import (
    KernelDensity, ainfty_scan, ball_mask, best_p, doubling_table, greedy_fraction,
    parabolic_measure, reverse_holder,
)
from parabolic_lab.solver import adjoint_measure, assemble, identity_coefficients
from oracles import brute_force_fraction

pos = st.floats(0.01, 10.0)


@settings(max_examples=60)
@given(st.lists(pos, min_size=2, max_size=10), st.data(), st.floats(0.01, 0.99))
def test_greedy_bounds_whole_cell_optimum(k, data, delta):
    s = data.draw(st.lists(pos, min_size=len(k), max_size=len(k)))
    k, s = np.array(k), np.array(s)
    g = greedy_fraction(k, s, delta)
    b = brute_force_fraction(k, s, delta)
    # the fractional relaxation is an upper bound, loose by at most one cell
    assert g >= b - 1e-12
    assert g <= b + s.max() / s.sum() + 1e-12


@given(st.lists(pos, min_size=1, max_size=30), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_greedy_monotone(k, d1, d2):
    k = np.array(k)
    s = np.ones_like(k)
    lo, hi = sorted((d1, d2))
    assert greedy_fraction(k, s, lo) <= greedy_fraction(k, s, hi) + 1e-12
    assert greedy_fraction(k, s, 1.0) == pytest.approx(1.0)


def test_greedy_uniform_density_is_identity():
    k = np.full(50, 3.0)
    for d in (0.1, 0.37, 0.9):
        assert greedy_fraction(k, np.ones(50), d) == pytest.approx(d)


@given(st.lists(pos, min_size=2, max_size=40), st.floats(1.1, 5.0), st.floats(1.1, 5.0))
def test_reverse_holder_properties(k, p, q):
    k = np.array(k)
    g = Grid(1, 1, 1.0, len(k), 1.0)
    mask = np.ones(len(k), bool)
    kd = KernelDensity(k, 1.0)
    a = reverse_holder(kd, g, p, [mask])
    assert a >= 1.0 - 1e-12
    # scale invariance and monotonicity in p
    assert reverse_holder(KernelDensity(7 * k, 1.0), g, p, [mask]) == pytest.approx(a)
    lo, hi = sorted((p, q))
    assert reverse_holder(kd, g, lo, [mask]) <= reverse_holder(kd, g, hi, [mask]) + 1e-12


def test_best_p_constant_and_spiky():
    g = Grid(1, 1, 1.0, 16, 1.0)
    mask = np.ones(16, bool)
    assert best_p(KernelDensity(np.ones(16), 1.0), g, [mask], cap=10) == 10.0
    k = np.ones(16)
    k[0] = 30.0
    p = best_p(KernelDensity(k, 1.0), g, [mask], cap=10, bound=2.0)
    assert 1.0 < p < 10.0
    assert reverse_holder(KernelDensity(k, 1.0), g, p, [mask]) <= 2.0 + 1e-9


def test_kernel_from_adjoint_weights_and_measure():
    g = Grid(2, 8, 0.125, 24, 0.125 ** 2, nx=8, hx=0.125, x_lo=-0.5)
    w = adjoint_measure(assemble(identity_coefficients(g), g), (g.nt, 3, 4))
    kd = KernelDensity.from_weights(w)
    assert kd.omega.sum() == pytest.approx(kd.lateral_mass)
    assert kd.lateral_mass + kd.other_mass == pytest.approx(1.0)
    ball = BoundaryBall((0.0,), g.times[-1] - 0.1, 0.3)
    m = ball_mask(g, ball)
    assert parabolic_measure(w, m) == pytest.approx(kd.omega[m].sum())
    rows = doubling_table(kd, g, [ball])
    assert rows[0].ratio >= 1.0
    far = BoundaryBall((0.0,), g.times[-1] + 1.0, 0.1)
    assert doubling_table(kd, g, [far])[0].flagged


def test_ainfty_scan_shapes():
    g = Grid(1, 1, 1.0, 32, 1.0)
    rng = np.random.default_rng(0)
    kd = KernelDensity(rng.lognormal(size=32), 1.0)
    masks = [np.arange(32) < 16, np.arange(32) >= 8]
    out = ainfty_scan(kd, g, masks, [0.1, 0.3, 0.6])
    assert out["table"].shape == (2, 3)
    assert np.all(np.diff(out["eps"]) >= 0)


def test_kernel_density_rejects_negative():
    with pytest.raises(ValueError):
        KernelDensity(np.array([-1.0, 2.0]), 1.0)
