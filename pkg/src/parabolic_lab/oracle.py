"""Exact and semi-analytic references for the flat heat equation.

The caloric Poisson kernel of the upper half space {x0 > 0} is

    k(x0, x, tau) = x0 / (2 sqrt(pi)) * tau**-1.5 * exp(-x0**2 / (4 tau))
                    * (4 pi tau)**(-(n-1)/2) * exp(-|x|**2 / (4 tau))

for tau > 0.  Everything here is independent of the finite volume code and
is used to judge it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "QuadratureError",
    "CaloricKernel",
    "kernel_mass",
    "halfspace_solution",
    "quarter_plane_cell_mass",
    "cone_slice_constant",
    "cone_slice_constant_mc",
    "ManufacturedSolution",
    "manufactured_caloric",
    "sphere_area",
]

SQRT_PI = math.sqrt(math.pi)


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


def sphere_area(m: int) -> float:
    """Surface measure of the unit sphere in R^m (counting measure 2 for m=1)."""
    return 2.0 * math.pi ** (m / 2) / math.gamma(m / 2)


def _quad(fun, a, b, epsabs=1e-13, epsrel=1e-11, limit=400, points=None):
    out = integrate.quad(fun, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit,
                         points=points, full_output=1)
    if len(out) == 4 and out[2].get("last", 0) >= limit:
        raise QuadratureError(out[3])
    return out[0]


@dataclass(frozen=True)
class CaloricKernel:
    """Poisson kernel of the heat equation on the half space, dimension ``n``."""

    n: int

    def __call__(self, x0, x, tau):
        x0 = np.asarray(x0, dtype=float)
        tau = np.asarray(tau, dtype=float)
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast_shapes(x0.shape, tau.shape,
                                           x.shape[:-1] if self.n > 1 else ()))
        pos = np.broadcast_to(tau > 0, out.shape)
        t = np.broadcast_to(tau, out.shape)[pos]
        z = np.broadcast_to(x0, out.shape)[pos]
        val = z / (2 * SQRT_PI) * t ** -1.5 * np.exp(-z * z / (4 * t))
        if self.n > 1:
            r2 = np.broadcast_to(np.sum(x * x, axis=-1), out.shape)[pos]
            val = val * (4 * np.pi * t) ** (-(self.n - 1) / 2) * np.exp(-r2 / (4 * t))
        out[pos] = val
        return out

    def normal_part(self, x0, tau):
        """The quarter-plane factor (the whole kernel when n == 1)."""
        return CaloricKernel(1)(x0, np.zeros(np.shape(tau) + (0,)), tau)

    def scaled(self, r: float, x0, x, tau):
        """k evaluated at the dilated point, times r**(n+1)."""
        return r ** (self.n + 1) * self(r * np.asarray(x0), r * np.asarray(x),
                                        r * r * np.asarray(tau))


def kernel_mass(x0: float, n: int) -> float:
    """Integrate k over the lateral boundary and tau in (0, inf).

    Uses tau = x0**2 / (4 z**2), which maps the singular layer near tau = 0
    onto a smooth Gaussian tail in z.  The lateral integral is done in radial
    form with its own adaptive rule (a product quadrature).
    """
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    kern = CaloricKernel(1)
    m = n - 1

    def lateral(tau):
        if m == 0:
            return 1.0
        g = lambda r: r ** (m - 1) * (4 * np.pi * tau) ** (-m / 2) * math.exp(-r * r / (4 * tau))
        scale = 2 * math.sqrt(tau)
        return sphere_area(m) * _quad(g, 0.0, 40 * scale, points=[scale, 4 * scale])

    def integrand(z):
        if z == 0.0:
            return 0.0
        tau = x0 * x0 / (4 * z * z)
        jac = x0 * x0 / (2 * z ** 3)
        return float(kern.normal_part(x0, tau)) * jac * lateral(tau)

    return _quad(integrand, 0.0, np.inf)


def quarter_plane_cell_mass(x0, tau_lo, tau_hi):
    """Exact integral of the n = 1 kernel over tau in [tau_lo, tau_hi].

    The antiderivative of the kernel in tau is erfc(x0 / (2 sqrt(tau))).
    """
    x0 = np.asarray(x0, dtype=float)
    lo = np.asarray(tau_lo, dtype=float)
    hi = np.asarray(tau_hi, dtype=float)
    with np.errstate(divide="ignore"):
        e_hi = np.where(hi > 0, special.erfc(x0 / (2 * np.sqrt(np.maximum(hi, 1e-300)))), 0.0)
        e_lo = np.where(lo > 0, special.erfc(x0 / (2 * np.sqrt(np.maximum(lo, 1e-300)))), 0.0)
    return e_hi - e_lo


def _hermite_lateral(m: int, nodes: int):
    xi, w = np.polynomial.hermite.hermgauss(nodes)
    w = w / SQRT_PI
    if m == 1:
        return xi[:, None], w
    grids = np.meshgrid(*([xi] * m), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(len(pts))
    for ax in np.meshgrid(*([w] * m), indexing="ij"):
        wts = wts * ax.ravel()
    return pts, wts


def halfspace_solution(f: Callable, points, n: int, t_min: float = 0.0,
                       rule: str = "z", hermite_nodes: int | None = None,
                       time_breaks: Sequence[float] = ()) -> np.ndarray:
    """Evaluate u = int k * f at interior points of the half space.

    ``f(y, s)`` is vectorised with ``y`` of shape (..., n-1) and vanishes for
    s < t_min.  ``points`` has rows (x0, x_1..x_{n-1}, t).

    Two independent rules are available.  ``"z"`` substitutes
    tau = x0**2/(4 z**2) and averages laterally with a Gauss-Hermite product
    rule.  ``"tau"`` integrates tau directly with nested adaptive quadrature
    (n <= 2 only).  ``time_breaks`` lists times where f jumps.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != n + 1:
        raise ValueError("points must have n + 1 columns")
    m = n - 1
    out = np.empty(len(pts))
    if rule == "z":
        if m:
            q = hermite_nodes or (160 if m == 1 else 48)
            xi, wq = _hermite_lateral(m, q)
        for i, p in enumerate(pts):
            x0, x, t = p[0], p[1:-1], p[-1]
            if t <= t_min:
                out[i] = 0.0
                continue
            zmin = x0 / (2 * math.sqrt(t - t_min))

            def integrand(z):
                tau = x0 * x0 / (4 * z * z)
                if m == 0:
                    val = float(f(np.zeros((1, 0)), np.array([t - tau]))[0])
                else:
                    y = x[None, :] - 2 * math.sqrt(tau) * xi
                    val = float(np.dot(wq, f(y, np.full(len(y), t - tau))))
                return 2 / SQRT_PI * math.exp(-z * z) * val

            brk = [x0 / (2 * math.sqrt(t - b)) for b in time_breaks if t_min < b < t]
            hi = max(zmin, 0.0) + 10.0
            out[i] = _quad(integrand, zmin, hi, points=sorted(brk) or None,
                           epsabs=1e-12, epsrel=1e-10)
        return out
    if rule == "tau":
        if m > 1:
            raise ValueError("the tau rule supports n <= 2")
        kern = CaloricKernel(1)
        for i, p in enumerate(pts):
            x0, x, t = p[0], p[1:-1], p[-1]
            span = t - t_min
            if span <= 0:
                out[i] = 0.0
                continue

            def lateral(tau):
                if m == 0:
                    return float(f(np.zeros((1, 0)), np.array([t - tau]))[0])
                sd = math.sqrt(2 * tau)
                g = lambda w: (math.exp(-w * w / (4 * tau)) / math.sqrt(4 * np.pi * tau)
                               * float(f(np.array([[x[0] - w]]), np.array([t - tau]))[0]))
                return _quad(g, -12 * sd, 12 * sd, points=[-sd, 0.0, sd],
                             epsabs=1e-13, epsrel=1e-10)

            def integrand(tau):
                return float(kern.normal_part(x0, tau)) * lateral(tau)

            peak = x0 * x0 / 6.0
            brk = sorted({min(c, span) for c in (peak / 8, peak, 8 * peak)}
                         | {t - b for b in time_breaks if t_min < b < t})
            brk = [b for b in brk if 0 < b < span]
            out[i] = _quad(integrand, 0.0, span, points=brk or None,
                           epsabs=1e-12, epsrel=1e-10)
        return out
    raise ValueError(f"unknown rule {rule!r}")


def cone_slice_constant(n: int, a: float) -> float:
    """Measure of {(x, t) in R^(n-1) x R : |x| + |t|**0.5 < a}.

    Each lateral radius r contributes a time interval of length 2 (a - r)**2,
    so c = 2 S_m int_0^a (a - r)**2 r**(m-1) dr with m = n - 1, which is a
    Beta integral.
    """
    if a <= 0:
        raise ValueError("aperture must be positive")
    m = n - 1
    if m == 0:
        return 2.0 * a * a
    beta = math.gamma(m) * 2.0 / math.gamma(m + 3)
    return 2.0 * sphere_area(m) * beta * a ** (m + 2)


def cone_slice_constant_mc(n: int, a: float, samples: int = 10**7,
                           rng: np.random.Generator | None = None,
                           chunk: int = 10**6) -> float:
    """Monte Carlo estimate of :func:`cone_slice_constant` in the box |x_i|<a, |t|<a^2."""
    rng = np.random.default_rng(0) if rng is None else rng
    m = n - 1
    hits = 0
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        x = rng.uniform(-a, a, size=(k, m))
        t = rng.uniform(-a * a, a * a, size=k)
        hits += int(np.count_nonzero(np.linalg.norm(x, axis=1) + np.sqrt(np.abs(t)) < a))
        done += k
    box = (2 * a) ** m * 2 * a * a
    return box * hits / samples


@dataclass(frozen=True)
class ManufacturedSolution:
    """u(y0, y, t) = exp(-c t) sin(y_1) y0, caloric for diag(a0, a1, ...)."""

    n: int
    diag: tuple

    @property
    def rate(self) -> float:
        return float(self.diag[1]) if self.n > 1 else 0.0

    def __call__(self, y0, y, t):
        y0 = np.asarray(y0, dtype=float)
        s = np.sin(np.asarray(y)[..., 0]) if self.n > 1 else 1.0
        return np.exp(-self.rate * np.asarray(t)) * s * y0

    def grad(self, y0, y, t):
        y0 = np.asarray(y0, dtype=float)
        e = np.exp(-self.rate * np.asarray(t))
        comps = []
        if self.n > 1:
            y1 = np.asarray(y)[..., 0]
            comps.append(e * np.sin(y1) + 0 * y0)
            comps.append(e * np.cos(y1) * y0)
            for _ in range(self.n - 2):
                comps.append(0 * y0)
        else:
            comps.append(e + 0 * y0)
        return np.stack(comps, axis=-1)


def manufactured_caloric(n: int, diag: Sequence[float] | None = None) -> ManufacturedSolution:
    """Exact solution of u_t = div(A grad u) for a constant diagonal A."""
    if diag is None:
        diag = (1.0,) * n
    if len(diag) != n:
        raise ValueError("diag must have n entries")
    return ManufacturedSolution(n, tuple(float(d) for d in diag))
