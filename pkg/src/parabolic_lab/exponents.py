"""Exponent calculus linking A-infinity constants to reverse Hoelder exponents.

The closed forms are pure and total on their domains.  ``cz_reverse_holder``
runs a discrete Calderon-Zygmund stopping time on a dyadic ball and checks
the level-set chain that underlies the exponent relation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

__all__ = [
    "ExponentInputs",
    "epsilon_of_beta",
    "delta0_residual",
    "delta0_solve",
    "p0_estimate",
    "rh_compose",
    "iterate_compose",
    "alpha_of_epsilon",
    "CZLevel",
    "CZCertificate",
    "cz_reverse_holder",
    "dyadic_rh_quotient",
    "empirical_delta",
]


@dataclass(frozen=True)
class ExponentInputs:
    n: int
    C: float
    K: float
    beta: float = 0.5
    eps: float = 0.5

    def __post_init__(self):
        if not (0 < self.beta < 1 and 0 < self.eps < 1):
            raise ValueError("beta and eps must lie in (0, 1)")
        if self.K < 0 or self.C < 0:
            raise ValueError("C and K must be nonnegative")


def epsilon_of_beta(C: float, K: float, beta: float) -> float:
    """eps = C (1 + K) / (-log beta)."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    return C * (1.0 + K) / (-math.log(beta))


def delta0_residual(delta: float, n: int, eps: float, beta: float) -> float:
    """g(delta) = 2^n delta - (1 - eps) beta^(1 + delta) (1 + delta).

    The defining relation 1/delta = 2^n / ((1-eps) beta^(1+delta) (1+delta))
    holds exactly when g vanishes.  g is strictly increasing, negative at 0 and
    positive at 1, so the root is unique and lies in (0, 1).
    """
    return 2.0 ** n * delta - (1.0 - eps) * beta ** (1.0 + delta) * (1.0 + delta)


def delta0_solve(n: int, eps: float, beta: float) -> float:
    if not (0 < eps < 1 and 0 < beta < 1):
        raise ValueError("eps and beta must lie in (0, 1)")
    g = lambda d: delta0_residual(d, n, eps, beta)
    root = optimize.brentq(g, 0.0, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                           maxiter=500)
    # polish with bisection steps on the final bracket if needed
    if abs(g(root)) >= 1e-12:
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) < 0:
                lo = mid
            else:
                hi = mid
        root = 0.5 * (lo + hi)
    return root


def p0_estimate(n: int, C: float, K: float) -> float:
    """p0 = 2^(n+1) exp(4 C (1 + K))."""
    if C < 0 or K < 0:
        raise ValueError("C and K must be nonnegative")
    return 2.0 ** (n + 1) * math.exp(4.0 * C * (1.0 + K))


def rh_compose(p1: float, p2: float) -> float:
    """Exponent of a product of reverse Hoelder weights: p1 p2 / (p1 + p2 - 1)."""
    if p1 <= 1 or p2 <= 1:
        raise ValueError("exponents must exceed 1")
    return p1 * p2 / (p1 + p2 - 1.0)


def iterate_compose(p: float, m: int, sequence: bool = False):
    """Compose ``p`` with itself ``m`` times: r_1 = p, r_{k+1} = rh_compose(r_k, p)."""
    seq = [p]
    for _ in range(m):
        seq.append(rh_compose(seq[-1], p))
    return seq if sequence else seq[-1]


def alpha_of_epsilon(eps: float) -> float:
    """(beta, eps) in the A-infinity sense gives (beta, 1 - eps) in the A' sense."""
    return 1.0 - eps


@dataclass
class CZLevel:
    k: int
    lam: float
    n_cubes: int
    upper_mass: float         # integral of K over {K > lam}
    cube_mass: float          # sum of integrals of K over the stopping cubes
    cube_sigma: float
    beta_level_sigma: float   # sigma({K > beta lam})
    max_avg_over_lam: float   # max over cubes of (average of K) / lam
    outside_ok: bool          # K <= lam outside the cubes
    chain_nominal: bool       # chain with constant 2^n
    chain_actual: bool        # chain with the actual child count
    a_prime_ok: bool          # (beta, alpha) condition on each stopping cube


@dataclass
class CZCertificate:
    n: int
    beta: float
    alpha: float
    mean: float
    levels: list = field(default_factory=list)
    delta0_prediction: float = float("nan")
    empirical_delta: float = float("nan")
    rh_bound: float = 2.0
    passes: bool = True

    def as_dict(self):
        return {
            "n": self.n, "beta": self.beta, "alpha": self.alpha, "mean": self.mean,
            "delta0_prediction": self.delta0_prediction,
            "empirical_delta": self.empirical_delta, "rh_bound": self.rh_bound,
            "passes": self.passes,
            "levels": [vars(lv) for lv in self.levels],
        }


def dyadic_rh_quotient(tree, p: float) -> float:
    """sup over all cubes of the tree of (avg K^p)^(1/p) / avg K."""
    om = tree.omega_level(tree.depth)
    sg = tree.sigma_level(tree.depth)
    K = np.where(sg > 0, om / np.where(sg > 0, sg, 1.0), 0.0)
    Kp = K ** p * sg
    best = 1.0
    for j in range(tree.depth, -1, -1):
        if j < tree.depth:
            f = tree.factors_to_fine(j)
            o, s, q = (_sum_blocks(a, f) for a in (om, sg, Kp))
        else:
            o, s, q = om, sg, Kp
        ok = (s > 0) & (o > 0)
        if ok.any():
            ratio = (q[ok] / s[ok]) ** (1.0 / p) / (o[ok] / s[ok])
            best = max(best, float(ratio.max()))
    return best


def _sum_blocks(a, factors):
    shp = []
    for L, f in zip(a.shape, factors):
        shp += [L // f, f]
    return a.reshape(shp).sum(axis=tuple(range(1, 2 * a.ndim, 2)))


def empirical_delta(tree, bound: float = 2.0, cap: float = 1.0, iters: int = 40) -> float:
    """Largest delta <= cap with the dyadic reverse Hoelder quotient at
    p = 1 + delta bounded by ``bound``; 0 if no positive delta qualifies."""
    q = lambda d: dyadic_rh_quotient(tree, 1.0 + d)
    if q(cap) <= bound:
        return float(cap)
    lo, hi = 0.0, float(cap)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if q(mid) <= bound:
            lo = mid
        else:
            hi = mid
    return lo


def cz_reverse_holder(tree, beta: float, alpha: float, max_levels: int = 60,
                      tol: float = 1e-12, rh_bound: float = 2.0,
                      delta_cap: float = 1.0) -> CZCertificate:
    """Discrete Calderon-Zygmund stopping time at levels lam = 2^k m.

    ``tree`` is a :class:`parabolic_lab.dyadic.DyadicTree` whose finest cubes
    carry the kernel as omega / sigma.  For every level the maximal cubes with
    average above lam are collected and the chain

        int_{K > lam} K  <=  sum_Q int_Q K  <=  c lam sum_Q sigma(Q)
                         <=  (c lam / alpha) sigma(K > beta lam)

    is checked with c = 2^n (the bound quoted for the construction) and with
    c = number of children per cube.
    """
    n = tree.n
    om_f = tree.omega_level(tree.depth)
    sg_f = tree.sigma_level(tree.depth)
    K_f = np.where(sg_f > 0, om_f / np.where(sg_f > 0, sg_f, 1.0), 0.0)
    total_sigma = float(sg_f.sum())
    mean = float(om_f.sum()) / total_sigma
    cert = CZCertificate(n=n, beta=beta, alpha=alpha, mean=mean, rh_bound=rh_bound)
    eps = 1.0 - alpha
    if 0 < eps < 1 and 0 < beta < 1:
        cert.delta0_prediction = delta0_solve(n, eps, beta)
    cert.empirical_delta = empirical_delta(tree, rh_bound, delta_cap)
    nchild = tree.n_children
    for k in range(max_levels):
        lam = 2.0 ** k * mean
        cubes = tree.maximal_cubes(lambda om, sg: om > lam * sg * (1 + tol))
        if not cubes and not np.any(K_f > lam * (1 + tol)):
            cert.levels.append(CZLevel(k, lam, 0, 0.0, 0.0, 0.0,
                                       float(sg_f[K_f > beta * lam].sum()),
                                       0.0, True, True, True, True))
            break
        covered = tree.cubes_to_mask(cubes)
        upper = float(om_f[K_f > lam].sum())
        cmass = sum(tree.omega(c) for c in cubes)
        csig = sum(tree.sigma(c) for c in cubes)
        ratios = [tree.omega(c) / (tree.sigma(c) * lam) for c in cubes]
        bl_sigma = float(sg_f[K_f > beta * lam].sum())
        outside_ok = bool(np.all(K_f[~covered] <= lam * (1 + tol)))
        a_ok = True
        for c in cubes:
            avg = tree.omega(c) / tree.sigma(c)
            sub = tree.restrict_mask(c)
            s_hi = float(sg_f[sub & (K_f > beta * avg)].sum())
            a_ok &= s_hi > alpha * tree.sigma(c) * (1 - tol)
        chain1 = upper <= cmass * (1 + tol)

        def chain(c):
            return (chain1 and cmass <= c * lam * csig * (1 + tol)
                    and c * lam * csig <= c * lam / alpha * bl_sigma * (1 + tol))

        lv = CZLevel(k, lam, len(cubes), upper, cmass, csig, bl_sigma,
                     max(ratios) if ratios else 0.0, outside_ok,
                     chain(2.0 ** n), chain(float(nchild)), bool(a_ok))
        cert.levels.append(lv)
        cert.passes &= lv.outside_ok and lv.chain_actual
    return cert
