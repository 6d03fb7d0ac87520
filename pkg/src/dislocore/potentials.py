"""Intra-layer three-body and inter-layer two-body potentials.

All evaluators are vectorised: vector arguments have shape (..., 2) and
scalar results broadcast over the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINGULAR_NORM = 1e-9


LAYER_GAP = 1.0 / np.sqrt(3.0)
MORSE_C = 2.5
MORSE_RE = 1.6 * LAYER_GAP
# tail below 1e-10 of the depth, plus the blending width
MORSE_RCUT = MORSE_RE + np.log(2.0e10) / MORSE_C + 0.5


class SingularConfigurationError(ValueError):
    """Raised when a three-body argument has (near) zero length."""


@dataclass(frozen=True)
class ThreeBodyPotential:
    """Stillinger-Weber angular term V(r1, r2).

    V = lam * exp(gamma/(|r1| - rc) + gamma/(|r2| - rc)) * (cos(theta) + 1/3)^2
    for |r1|, |r2| < rc, and zero otherwise.
    """

    lam: float = 1.0
    gamma: float = 0.2
    rc: float = 1.58

    @property
    def support(self) -> float:
        return self.rc

    def _radial(self, r):
        """exp(g(r)) and its first two derivatives, zero outside the support."""
        inside = r < self.rc
        dr = np.where(inside, r - self.rc, -1.0)
        g = self.gamma / dr
        g1 = -self.gamma / dr**2
        g2 = 2.0 * self.gamma / dr**3
        h = np.where(inside, np.exp(g), 0.0)
        return h, h * g1, h * (g2 + g1 * g1)

    def value(self, r1, r2):
        return self.evaluate(r1, r2, order=0)[0]

    def evaluate(self, r1, r2, order: int = 2):
        """Return V, and for order >= 1 the gradients (d1V, d2V), and for
        order 2 the Hessian blocks (H11, H12, H22) with H12[a, b] = d2V/dr1_a dr2_b.
        """
        r1 = np.asarray(r1, dtype=float)
        r2 = np.asarray(r2, dtype=float)
        n1 = np.linalg.norm(r1, axis=-1)
        n2 = np.linalg.norm(r2, axis=-1)
        if np.any(n1 < SINGULAR_NORM) or np.any(n2 < SINGULAR_NORM):
            raise SingularConfigurationError("three-body argument of zero length")
        u1 = r1 / n1[..., None]
        u2 = r2 / n2[..., None]
        c = np.sum(u1 * u2, axis=-1)
        h1, dh1, ddh1 = self._radial(n1)
        h2, dh2, ddh2 = self._radial(n2)
        q = (c + 1.0 / 3.0) ** 2
        dq = 2.0 * (c + 1.0 / 3.0)
        lam = self.lam
        val = lam * h1 * h2 * q
        if order == 0:
            return (val,)
        # gradients of the cosine
        a1 = (u2 - c[..., None] * u1) / n1[..., None]
        a2 = (u1 - c[..., None] * u2) / n2[..., None]
        g1 = lam * h2[..., None] * (dh1[..., None] * u1 * q[..., None] + h1[..., None] * dq[..., None] * a1)
        g2 = lam * h1[..., None] * (dh2[..., None] * u2 * q[..., None] + h2[..., None] * dq[..., None] * a2)
        if order == 1:
            return val, g1, g2
        eye = np.eye(2)
        o = np.einsum
        P1 = eye - o("...a,...b->...ab", u1, u1)
        P2 = eye - o("...a,...b->...ab", u2, u2)
        uu1 = o("...a,...b->...ab", u1, u1)
        uu2 = o("...a,...b->...ab", u2, u2)
        # Hessians of the cosine
        c11 = -(o("...a,...b->...ab", u1, a1) + o("...a,...b->...ab", a1, u1)) / n1[..., None, None] \
            - c[..., None, None] * P1 / n1[..., None, None] ** 2
        c22 = -(o("...a,...b->...ab", u2, a2) + o("...a,...b->...ab", a2, u2)) / n2[..., None, None] \
            - c[..., None, None] * P2 / n2[..., None, None] ** 2
        c12 = (eye - uu1 - uu2 + c[..., None, None] * o("...a,...b->...ab", u1, u2)) \
            / (n1 * n2)[..., None, None]
        hh1 = ddh1[..., None, None] * uu1 + (dh1 / n1)[..., None, None] * P1
        hh2 = ddh2[..., None, None] * uu2 + (dh2 / n2)[..., None, None] * P2
        X = lambda s: s[..., None, None]
        H11 = lam * X(h2) * (
            hh1 * X(q)
            + X(dh1 * dq) * (o("...a,...b->...ab", u1, a1) + o("...a,...b->...ab", a1, u1))
            + X(h1) * (2.0 * o("...a,...b->...ab", a1, a1) + X(dq) * c11)
        )
        H22 = lam * X(h1) * (
            hh2 * X(q)
            + X(dh2 * dq) * (o("...a,...b->...ab", u2, a2) + o("...a,...b->...ab", a2, u2))
            + X(h2) * (2.0 * o("...a,...b->...ab", a2, a2) + X(dq) * c22)
        )
        H12 = lam * (
            X(dh1 * dh2 * q) * o("...a,...b->...ab", u1, u2)
            + X(dh1 * h2 * dq) * o("...a,...b->...ab", u1, a2)
            + X(h1 * dh2 * dq) * o("...a,...b->...ab", a1, u2)
            + X(h1 * h2) * (2.0 * o("...a,...b->...ab", a1, a2) + X(dq) * c12)
        )
        return val, g1, g2, H11, H12, H22


@dataclass(frozen=True)
class HarmonicTriplet:
    """Zero-rest-length harmonic springs on the three sides of a triple,
    V = k/2 (|r1|^2 + |r2|^2 + |r1 - r2|^2), with the support of the
    stencil it is used with. Its Hessian is constant and positive
    semidefinite, so any stencil subset gives a stable lattice; used as the
    nearest-interaction test potential for the stability gap.
    """

    k: float = 1.0
    rc: float = 1.58

    @property
    def support(self) -> float:
        return self.rc

    def value(self, r1, r2):
        return self.evaluate(r1, r2, order=0)[0]

    def evaluate(self, r1, r2, order: int = 2):
        r1 = np.asarray(r1, dtype=float)
        r2 = np.asarray(r2, dtype=float)
        k = self.k
        val = 0.5 * k * (np.sum(r1 * r1, -1) + np.sum(r2 * r2, -1) + np.sum((r1 - r2) ** 2, -1))
        if order == 0:
            return (val,)
        g1 = k * (2.0 * r1 - r2)
        g2 = k * (2.0 * r2 - r1)
        if order == 1:
            return val, g1, g2
        eye = np.broadcast_to(np.eye(2), r1.shape[:-1] + (2, 2))
        return val, g1, g2, 2.0 * k * eye, -k * eye, 2.0 * k * eye


def smooth_switch(t):
    """Quintic switch S(t): 1 for t <= 0, 0 for t >= 1, C2 at both ends.

    Returns (S, S', S'').
    """
    t = np.clip(t, 0.0, 1.0)
    s = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    ds = -30.0 * t * t * (1.0 - t) ** 2
    dds = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return s, ds, dds


@dataclass(frozen=True)
class TwoBodyPotential:
    """Morse inter-layer potential of the 3D distance r = sqrt(|xi|^2 + dz^2).

    V(r) = De * ((1 - exp(-c (r - re)))^2 - 1), multiplied by a C2 switch
    over [r_cut - blend, r_cut] and zero beyond r_cut.
    """

    De: float = 1.0
    c: float = MORSE_C
    re: float = MORSE_RE
    dz: float = LAYER_GAP
    r_cut: float = MORSE_RCUT
    blend: float = 0.5

    @property
    def planar_reach(self) -> float:
        """Largest in-plane offset with a nonzero interaction."""
        return float(np.sqrt(max(self.r_cut**2 - self.dz**2, 0.0)))

    def radial(self, r):
        """Morse value and first two r-derivatives, with the switch applied."""
        r = np.asarray(r, dtype=float)
        e = np.exp(-self.c * (r - self.re))
        # De ((1 - e)^2 - 1) without cancellation in the tail
        m = self.De * e * (e - 2.0)
        dm = 2.0 * self.De * self.c * e * (1.0 - e)
        ddm = 2.0 * self.De * self.c**2 * e * (2.0 * e - 1.0)
        s, ds, dds = smooth_switch((r - (self.r_cut - self.blend)) / self.blend)
        ds = ds / self.blend
        dds = dds / self.blend**2
        return m * s, dm * s + m * ds, ddm * s + 2.0 * dm * ds + m * dds

    def evaluate(self, xi, order: int = 2, scale: float = 1.0):
        """V_d(xi) and its in-plane gradient and Hessian, times ``scale``.

        With scale = eps**-2 this is the rescaled U(xi).
        """
        xi = np.asarray(xi, dtype=float)
        r = np.sqrt(np.sum(xi * xi, axis=-1) + self.dz**2)
        f, df, ddf = self.radial(r)
        if order == 0:
            return (scale * f,)
        n = xi / r[..., None]
        grad = scale * df[..., None] * n
        if order == 1:
            return scale * f, grad
        nn = np.einsum("...a,...b->...ab", n, n)
        hess = scale * (ddf[..., None, None] * nn + (df / r)[..., None, None] * (np.eye(2) - nn))
        return scale * f, grad, hess

    def value(self, xi, scale: float = 1.0):
        return self.evaluate(xi, order=0, scale=scale)[0]

    def increment(self, xi, dxi, scale: float = 1.0):
        """V(xi + dxi) - V(xi) without cancellation for small dxi."""
        xi = np.asarray(xi, dtype=float)
        dxi = np.asarray(dxi, dtype=float)
        x1 = xi + dxi
        r0 = np.sqrt(np.sum(xi * xi, axis=-1) + self.dz**2)
        r1 = np.sqrt(np.sum(x1 * x1, axis=-1) + self.dz**2)
        dr = np.sum(dxi * (2.0 * xi + dxi), axis=-1) / (r0 + r1)
        e0 = np.exp(-self.c * (r0 - self.re))
        de = e0 * np.expm1(-self.c * dr)
        # m = De (e^2 - 2 e), so dm = De de (e0 + e1 - 2)
        dm = self.De * de * (2.0 * e0 + de - 2.0)
        m0 = self.De * (e0 * e0 - 2.0 * e0)
        s0 = smooth_switch((r0 - (self.r_cut - self.blend)) / self.blend)[0]
        s1 = smooth_switch((r1 - (self.r_cut - self.blend)) / self.blend)[0]
        return scale * (dm * s1 + m0 * (s1 - s0))


def decay_cutoff(c: float, re: float, dz: float, rel_tol: float = 1e-10, blend: float = 0.5) -> float:
    """Radius beyond which the Morse tail is below ``rel_tol`` of its depth.

    The tail |V|/De <= 2 exp(-c (r - re)) is solved for r, then the blending
    width is added so the switch only acts below the tolerance.
    """
    r = re + np.log(2.0 / rel_tol) / c
    return float(max(r, dz) + blend)
