"""Peierls-Nabarro model: 1D reduction, profile ODE and continuum energy.

For y-independent fields with u+ = -u- = phi/2 the PN energy per unit length
in y is the functional  int (alpha1/2) phi'^2 + gamma(phi) dx,  whose
minimiser with phi(-inf) = 0, phi(+inf) = 1, phi(0) = 1/2 solves

    phi' = (2 / sqrt(alpha_pn)) sqrt(gamma(phi)),   alpha_pn = 2 alpha1.

Coordinates and gamma are the rescaled ones (gamma_xx(0) = sqrt(alpha1 alpha2)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Chebyshev
from scipy import integrate, linalg

from .material import GammaSurface, Material

NEGATIVE_GAMMA_TOL = 1e-12
ScalarFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class PNProfile:
    """Monotone profile phi on [-x_max, x_max], with phi(-x) = 1 - phi(x).

    The ODE state is w = log(1 - phi) on x >= 0, so the small side of the
    profile keeps full relative accuracy in both tails."""

    alpha_pn: float
    gamma: ScalarFn
    x_max: float
    _sol: object
    tail_rate: float

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        inside = ax <= self.x_max
        small = np.empty_like(ax)
        if inside.any():
            small[inside] = np.exp(self._sol.sol(ax[inside])[0])
        # exponential tail beyond the integration range
        edge = np.exp(self._sol.sol(self.x_max)[0])
        small[~inside] = edge * np.exp(-self.tail_rate * (ax[~inside] - self.x_max))
        return np.where(x >= 0, 1.0 - small, small)

    def dphi(self, x):
        p = self.phi(x)
        return (2.0 / np.sqrt(self.alpha_pn)) * np.sqrt(np.maximum(self.gamma(p), 0.0))

    def u_plus(self, x):
        return 0.5 * self.phi(x)

    def energy(self, a_pn: float | None = None, n: int = 4001) -> float:
        """int (alpha_pn/4) phi'^2 + gamma(phi) dx by quadrature of the profile."""
        x = np.linspace(-self.x_max, self.x_max, n)
        d = self.dphi(x)
        dens = 0.25 * self.alpha_pn * d * d + self.gamma(self.phi(x))
        return float(integrate.simpson(dens, x=x))


def sqrt_gamma_quotient(gamma: ScalarFn, deg: int = 96) -> Chebyshev:
    """Chebyshev interpolant of q(t) = sqrt(gamma(t)) / sin(pi t) on [0, 1].

    gamma vanishes quadratically at the integers, so q is smooth and
    positive there and one vectorised gamma call is enough to fit it."""
    def q(t):
        t = np.asarray(t, dtype=float)
        g = np.asarray(gamma(t), dtype=float)
        if np.any(g < -NEGATIVE_GAMMA_TOL):
            raise ValueError(f"gamma is negative on the Burgers path (min {g.min():.3e})")
        return np.sqrt(np.maximum(g, 0.0)) / np.sin(np.pi * t)
    return Chebyshev.interpolate(q, deg, domain=[0.0, 1.0])


def solve_profile(gamma: ScalarFn, alpha_pn: float, gamma_xx0: float,
                  x_max: float = 20.0, rtol: float = 1e-12, atol: float = 1e-14,
                  deg: int = 96) -> PNProfile:
    """Integrate the first-order profile ODE from phi(0) = 1/2 to x_max.

    With psi = 1 - phi and w = log psi the equation reads
    w' = -k q(1 - psi) pi sinc(psi), smooth and bounded away from zero."""
    if alpha_pn <= 0 or gamma_xx0 <= 0:
        raise ValueError("alpha_pn and gamma_xx(0) must be positive")
    k = 2.0 / np.sqrt(alpha_pn)
    q = sqrt_gamma_quotient(gamma, deg)

    def rhs(_, y):
        psi = min(np.exp(y[0]), 1.0)
        # sin(pi psi) / psi = pi sinc(psi), and sin(pi (1 - psi)) = sin(pi psi)
        return [-k * q(1.0 - psi) * np.pi * np.sinc(psi)]

    sol = integrate.solve_ivp(rhs, (0.0, x_max), [np.log(0.5)], method="DOP853", rtol=rtol,
                              atol=atol, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"profile integration failed: {sol.message}")
    rate = k * np.sqrt(gamma_xx0 / 2.0)
    return PNProfile(alpha_pn=alpha_pn, gamma=gamma, x_max=x_max, _sol=sol, tail_rate=rate)


def profile_for_material(mat: Material, x_max: float = 20.0, rtol: float = 1e-12) -> PNProfile:
    """Profile in rescaled coordinates for the rescaled gamma of ``mat``."""
    surf = mat.rescaled_gamma()
    g = lambda t: surf.along_x(np.asarray(t), order=0)[0]
    return solve_profile(g, mat.elastic.alpha_pn, surf.gamma_xx0(), x_max=x_max, rtol=rtol)


def bps_energy(gamma: ScalarFn, alpha_pn: float) -> float:
    """Lower bound int_0^1 sqrt(alpha_pn gamma(eta)) d eta, attained by the profile."""
    val, _ = integrate.quad(lambda t: np.sqrt(alpha_pn * max(float(gamma(np.array([t]))[0]), 0.0)),
                            0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(val)


def sinusoidal_profile(x, K: float, alpha_pn: float):
    """Closed-form profile for gamma = K sin^2(pi phi)."""
    k = 2.0 * np.sqrt(K) / np.sqrt(alpha_pn)
    return (2.0 / np.pi) * np.arctan(np.exp(np.pi * k * np.asarray(x)))


@dataclass(frozen=True)
class ContinuumStability:
    theta: float
    theta_a: float
    theta_b: float
    residual: float = 0.0  # eigen-residual of the discrete problems

    @property
    def theta_bar(self) -> float:
        return min(self.theta_a, self.theta_b)


def _half_line_quotient(prof: PNProfile, alpha1: float, curvature: ScalarFn,
                        el_num: float, n: int, length: float) -> float:
    """min over h with h(0) = h(length) = 0 of
    (el_num alpha1 |h'|^2 + 4 int c(phi) h^2) / (2 alpha1 |h'|^2 + (16 sqrt3/3) |h|^2)
    with P1 finite elements."""
    x = np.linspace(0.0, length, n + 1)
    hx = np.diff(x)
    mid = 0.5 * (x[:-1] + x[1:])
    c = curvature(prof.phi(mid))
    # interior nodes only (Dirichlet at both ends)
    Kd = 1.0 / hx[:-1] + 1.0 / hx[1:]
    Ko = -1.0 / hx[1:-1]
    Md = (hx[:-1] + hx[1:]) / 3.0
    Mo = hx[1:-1] / 6.0
    Cd = (c[:-1] * hx[:-1] + c[1:] * hx[1:]) / 3.0
    Co = c[1:-1] * hx[1:-1] / 6.0
    mass = 16.0 * np.sqrt(3.0) / 3.0
    ad = el_num * alpha1 * Kd + 4.0 * Cd
    ao = el_num * alpha1 * Ko + 4.0 * Co
    bd = 2.0 * alpha1 * Kd + mass * Md
    bo = 2.0 * alpha1 * Ko + mass * Mo
    A = np.diag(ad) + np.diag(ao, 1) + np.diag(ao, -1)
    B = np.diag(bd) + np.diag(bo, 1) + np.diag(bo, -1)
    w, v = linalg.eigh(A, B, subset_by_index=[0, 0])
    vec = v[:, 0]
    resid = float(np.linalg.norm(A @ vec - w[0] * (B @ vec)) / np.linalg.norm(B @ vec))
    return float(w[0]), resid


def continuum_stability(mat: Material, prof: PNProfile, n: int = 800, length: float = 20.0) -> ContinuumStability:
    """Minimum Rayleigh quotients of the second variation of the PN energy at
    the profile over y-independent fields vanishing on x = 0.

    The symmetric mode (f+ = f-) has quotient exactly 2 (total energy) or 1
    (A/B parts); the antisymmetric mode is computed on the half line.
    """
    surf = mat.rescaled_gamma()
    a1 = mat.elastic.alpha1
    curv = {p: (lambda t, p=p: surf.along_x(t, part=p, order=2)[2]) for p in ("total", "A", "B")}
    th, r0 = _half_line_quotient(prof, a1, curv["total"], 4.0, n, length)
    # A and B parts carry half the elastic energy
    tha, r1 = _half_line_quotient(prof, a1, curv["A"], 2.0, n, length)
    thb, r2 = _half_line_quotient(prof, a1, curv["B"], 2.0, n, length)
    return ContinuumStability(theta=min(2.0, th), theta_a=min(1.0, tha), theta_b=min(1.0, thb),
                              residual=max(r0, r1, r2))
