"""Acceptance criteria, one test each.  Every test prints a PASS/FAIL line
(collected again in the terminal summary) before asserting."""
import math
import time

import numpy as np
import pytest

from parabolic_lab import experiments as ex
from parabolic_lab.exponents import delta0_residual, delta0_solve, p0_estimate, rh_compose
from parabolic_lab.geometry import BoundaryBall
from parabolic_lab.measure import ball_mask, greedy_fraction
from oracles import brute_force_fraction_chunked

RESULTS = []


def record(num, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def flat_pair():
    return ex.flat_heat(16, 5), ex.flat_heat(32, 6)


def test_criterion_1_kernel_oracle():
    t0 = time.process_time()
    res = ex.kernel_oracle_error(nz=256, nt=512)
    cpu = time.process_time() - t0
    ok = res["max_ball_rel_l1"] < 0.05 and cpu < 60 and res["balls"] > 0
    assert record(1, ok, f"max ball rel L1 {res['max_ball_rel_l1']:.4f} < 0.05 over "
                         f"{res['balls']} balls, total {res['total_rel_l1']:.4f}, {cpu:.1f} s cpu")


def test_criterion_2_unit_mass():
    res = ex.unit_mass_trials(10, 0.5, 2.0, seed=0)
    dev = max(abs(s - 1) for s in res["sums"])
    low = min(res["mins"])
    ok = dev <= 1e-8 and low >= -1e-12 and len(res["sums"]) == 10
    assert record(2, ok, f"max |sum - 1| {dev:.2e} <= 1e-8, min weight {low:.2e} >= -1e-12")


def test_criterion_3_comparison():
    res = ex.comparison_trials(100, seed=0)
    ok = res["min_bound_gap"] >= -1e-8 and res["min_order_gap"] >= -1e-8
    assert record(3, ok, f"min bound gap {res['min_bound_gap']:.2e}, "
                         f"min order gap {res['min_order_gap']:.2e} (both >= -1e-8)")


@pytest.mark.parametrize("n,a,N,htf,scale,tol", [
    (1, 1.0, 256, 1.0, 12, 0.05),
    (1, 2.0, 256, 1.0, 12, 0.05),
    (2, 1.0, 96, 0.5, 16, 0.08),
    (2, 2.0, 96, 0.5, 16, 0.08),
])
def test_criterion_4_square_identity(n, a, N, htf, scale, tol):
    res = ex.square_identity(n, a, N, htf, scale)
    ok = abs(res["ratio"] - 1) < tol
    assert record(4, ok, f"n={n} a={a:g}: int S^2 / (c int y|grad v|^2) = {res['ratio']:.4f} "
                         f"(within {tol:.0%})")


def test_criterion_5_bmo_surrogate():
    e = ex.bounded_data_energies(50, seed=0)
    amp = ex.bmo_family_ratios(mode="amplitude")
    dil = ex.bmo_family_ratios(mode="dilation")
    ok = e["max_over_median"] < 3 and amp["spread"] < 2 and dil["spread"] < 2
    assert record(5, ok, f"bounded data max/median {e['max_over_median']:.3f} < 3; "
                         f"log-jump energy/BMO^2 spread {amp['spread']:.3f} (amplitude), "
                         f"{dil['spread']:.3f} (dilation) < 2")


def small_ball_masks(fh):
    g = fh.grid
    masks = []
    for rc in (1.5, 2.0, 3.0):
        r = rc * g.h
        for c in np.linspace(-0.9, 0.9, 7):
            m = ball_mask(g, BoundaryBall((), fh.s + c * fh.d ** 2, r))
            if 0 < m.sum() <= 20:
                masks.append(m)
    return masks


def test_criterion_6_ainfty(flat_pair):
    fh = flat_pair[0]
    res = ex.ainfty_experiment(fh)
    worst = 0.0
    balls = small_ball_masks(fh)
    exact = True
    for m in balls:
        k, s = fh.kernel.K[m], fh.kernel.sigma[m]
        for d in (0.1, 0.01, 0.001):
            g = greedy_fraction(k, s, d)
            b = brute_force_fraction_chunked(k, s, d)
            cell = s.max() / s.sum()
            exact &= b - 1e-12 <= g <= b + cell + 1e-12
            worst = max(worst, (g - b) / cell)
    ok = res["strictly_decreasing"] and exact and len(balls) > 0
    assert record(6, ok, f"eps(delta) strictly decreasing on {len(res['table'])} balls; greedy vs "
                         f"brute force on {len(balls)} balls <= 20 cells, worst gap {worst:.3f} cells")


def test_criterion_7_doubling(flat_pair):
    a = ex.doubling_experiment(flat_pair[0])
    b = ex.doubling_experiment(flat_pair[1])
    rel = abs(a["max_ratio"] - b["max_ratio"]) / b["max_ratio"]
    ok = math.isfinite(a["max_ratio"]) and math.isfinite(b["max_ratio"]) and rel < 0.2
    assert record(7, ok, f"max doubling ratio {a['max_ratio']:.3f} vs {b['max_ratio']:.3f} "
                         f"after refinement ({rel:.1%} < 20%)")


def test_criterion_8_lower_bound(flat_pair):
    coarse = ex.lower_bound_run(flat_pair[0], 1e-3, 0.01, 0.1)
    fine = ex.lower_bound_run(flat_pair[1], 1e-3, 0.01, 0.1)
    lengths = ex.cover_lengths(flat_pair[0], (1e-2, 1e-3, 1e-4), eps0=0.1)
    c1, c2 = coarse["c_meas"], fine["c_meas"]
    stable = c1 > 0 and c2 > 0 and max(c1, c2) / min(c1, c2) <= 2
    ok = (coarse["fraction_ok"] >= 0.9 and fine["fraction_ok"] >= 0.9 and stable
          and all(coarse["cover_checks"].values()) and all(fine["cover_checks"].values())
          and lengths["slope"] > 0)
    assert record(8, ok, f"fraction {coarse['fraction_ok']:.2f}/{fine['fraction_ok']:.2f} >= 0.9, "
                         f"c_meas {c1:.3g} vs {c2:.3g} (factor <= 2), cover checks pass, "
                         f"lengths {lengths['lengths']} slope {lengths['slope']:.3f} > 0")


def test_criterion_9_exponents(flat_pair):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10 ** 4):
        n = int(rng.integers(1, 4))
        eps, beta = rng.uniform(1e-6, 1 - 1e-6, 2)
        d = delta0_solve(n, eps, beta)
        worst = max(worst, abs(delta0_residual(d, n, eps, beta)))
    p0 = all(p0_estimate(1, 0.0, K) == 4.0 for K in (0.0, 1.0, 7.5))
    comp = rh_compose(2.0, 2.0) == 4.0 / 3.0
    cz = ex.cz_experiment(flat_pair[0])["certificate"]
    ok = worst < 1e-12 and p0 and comp and cz["empirical_delta"] >= cz["delta0_prediction"]
    assert record(9, ok, f"max residual {worst:.1e} < 1e-12, p0(1,0,K)=4: {p0}, "
                         f"rh_compose(2,2)=4/3: {comp}, empirical delta {cz['empirical_delta']:.3f} "
                         f">= prediction {cz['delta0_prediction']:.4f}")


def test_criterion_10_witness():
    wit = ex.witness_norms(ex.witness_coefficient)
    bump = ex.bump_coefficient
    bn = ex.witness_norms(bump)
    theory = ex.witness_slope_theory()
    spread = max(bn["norms"]) / min(bn["norms"]) - 1
    ok = wit["slope"] > 0.5 * theory and spread < 0.1
    assert record(10, ok, f"witness slope {wit['slope']:.3f} > {0.5 * theory:.3f} (half the "
                          f"log-rate {theory:.3f}); bump norms {[round(v, 5) for v in bn['norms']]} "
                          f"spread {spread:.2%} < 10%")
