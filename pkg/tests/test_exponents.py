import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from parabolic_lab.dyadic import DyadicTree
from parabolic_lab.exponents import (
    ExponentInputs, alpha_of_epsilon, cz_reverse_holder, delta0_residual, delta0_solve,
    dyadic_rh_quotient, empirical_delta, epsilon_of_beta, iterate_compose, p0_estimate,
    rh_compose,
)

# mpmath references
DELTA0_1_HALF_HALF = 0.129055259061271355477407613721
P0_1_1_0 = 218.392600132576956312441044811
RH_TWO_VALUE = 1.29206094577744504517917540797
COMPOSE_2_10 = 1.00048851978505129457743038593

unit = st.floats(0.01, 0.99)


def test_frozen_values():
    assert delta0_solve(1, 0.5, 0.5) == pytest.approx(DELTA0_1_HALF_HALF, rel=1e-14)
    assert p0_estimate(1, 1.0, 0.0) == pytest.approx(P0_1_1_0, rel=1e-14)
    assert iterate_compose(2.0, 10) == pytest.approx(COMPOSE_2_10, rel=1e-14)


@given(st.sampled_from([1, 2, 3]), unit, unit)
def test_delta0_root_in_unit_interval(n, eps, beta):
    d = delta0_solve(n, eps, beta)
    assert 0 < d < 1
    assert abs(delta0_residual(d, n, eps, beta)) < 1e-12
    # the defining relation in its original form
    assert 1 / d == pytest.approx(2 ** n / ((1 - eps) * beta ** (1 + d) * (1 + d)), rel=1e-10)


@given(st.sampled_from([1, 2, 3]), unit, unit, unit)
def test_delta0_decreases_in_eps(n, e1, e2, beta):
    lo, hi = sorted((e1, e2))
    assert delta0_solve(n, hi, beta) <= delta0_solve(n, lo, beta) + 1e-15


@given(st.floats(1.01, 50), st.floats(1.01, 50))
def test_compose_symmetric_and_shrinking(p, q):
    r = rh_compose(p, q)
    assert r == pytest.approx(rh_compose(q, p))
    assert 1 < r <= min(p, q) + 1e-12


def test_iterate_compose_closed_form():
    seq = iterate_compose(2.0, 6, sequence=True)
    assert seq == pytest.approx([2 ** k / (2 ** k - 1) for k in range(1, 8)])


def test_domain_errors():
    with pytest.raises(ValueError):
        epsilon_of_beta(1, 0, 1.0)
    with pytest.raises(ValueError):
        rh_compose(1.0, 2.0)
    with pytest.raises(ValueError):
        ExponentInputs(1, 1.0, 0.0, beta=1.5)
    assert epsilon_of_beta(1.0, 1.0, math.exp(-4)) == pytest.approx(0.5)
    assert alpha_of_epsilon(0.3) == pytest.approx(0.7)


def test_two_value_rh_quotient():
    tree = DyadicTree(np.array([1.0, 1.0, 10.0, 10.0]), 1.0, 1, 1)
    assert dyadic_rh_quotient(tree, 2.0) == pytest.approx(RH_TWO_VALUE, rel=1e-14)
    assert empirical_delta(tree, bound=RH_TWO_VALUE + 1e-9, cap=1.0) == 1.0


def test_empirical_delta_constant_kernel():
    tree = DyadicTree(np.ones((16, 4)), 1.0, 2, 2)
    assert empirical_delta(tree) == 1.0


def test_cz_certificate_on_lognormal_weight():
    rng = np.random.default_rng(0)
    om = rng.lognormal(sigma=0.7, size=(64, 8))
    tree = DyadicTree(om, 1.0, 2, 3)
    cert = cz_reverse_holder(tree, 0.5, 0.5)
    assert cert.passes
    assert all(lv.outside_ok for lv in cert.levels)
    assert cert.delta0_prediction == pytest.approx(delta0_solve(2, 0.5, 0.5))
    assert 0 < cert.empirical_delta <= 1
    d = cert.as_dict()
    assert d["levels"] and "empirical_delta" in d
