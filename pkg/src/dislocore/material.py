"""Continuum inputs of the Peierls-Nabarro model: gamma surface, elastic
constants and the small parameter eps."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lattice import CELL_AREA, D, E1, E2, P, SQRT3, SUB_A, SUB_B, bravais_within, intra_stencil
from .potentials import ThreeBodyPotential, TwoBodyPotential


HESSIAN_PD_TOL = 1e-12


class ModelAssumptionError(RuntimeError):
    """Raised when the potentials violate a standing modelling assumption."""


def reduce_to_cell(phi):
    """Shift phi by the nearest lattice vector so that increments stay small."""
    phi = np.asarray(phi, dtype=float)
    basis = np.array([E1, E2])
    coords = phi @ np.linalg.inv(basis)
    return phi - np.round(coords) @ basis


@dataclass
class GammaSurface:
    """Misfit energy per unit area for a rigid in-plane shift phi of the upper
    layer, with its A- and B-centered parts.

    gamma = gamma_A + gamma_B, each normalised per unit area. ``scale``
    multiplies every value (use eps**-2 for the rescaled surface).
    """

    inter: TwoBodyPotential
    scale: float = 1.0

    def __post_init__(self):
        reach = self.inter.planar_reach + 2.0
        _, s = bravais_within(reach)
        # split by the lower-layer sublattice: A+A- and B+A- rows form
        # gamma_A, A+B- and B+B- rows form gamma_B
        self._xi_a = np.concatenate([s - D, s + P - D])
        self._xi_b = np.concatenate([s - D - P, s - D])

    def _part(self, xis, phi, order):
        phi = np.asarray(phi, dtype=float)
        shape = phi.shape[:-1]
        k = self.scale / CELL_AREA
        flat = reduce_to_cell(phi).reshape(-1, 1, 2)
        val = k * self.inter.increment(xis[None], flat).sum(axis=1)
        if order == 0:
            return (val.reshape(shape),)
        out = self.inter.evaluate(flat + xis[None], order=order)
        grad = k * out[1].sum(axis=1)
        if order == 1:
            return val.reshape(shape), grad.reshape(shape + (2,))
        hess = k * out[2].sum(axis=1)
        return val.reshape(shape), grad.reshape(shape + (2,)), hess.reshape(shape + (2, 2))

    def gamma_a(self, phi, order: int = 0):
        return self._part(self._xi_a, phi, order)

    def gamma_b(self, phi, order: int = 0):
        return self._part(self._xi_b, phi, order)

    def gamma(self, phi, order: int = 0):
        a = self.gamma_a(phi, order)
        b = self.gamma_b(phi, order)
        return tuple(x + y for x, y in zip(a, b))

    def value(self, phi):
        return self.gamma(phi)[0]

    def along_x(self, t, part: str = "total", order: int = 2):
        """gamma(t*e1) and its first two t-derivatives for scalar or array t."""
        t = np.asarray(t, dtype=float)
        phi = np.stack([t, np.zeros_like(t)], axis=-1)
        fn = {"total": self.gamma, "A": self.gamma_a, "B": self.gamma_b}[part]
        out = fn(phi, order=order)
        res = [out[0]]
        if order >= 1:
            res.append(out[1][..., 0])
        if order >= 2:
            res.append(out[2][..., 0, 0])
        return tuple(res)

    def gamma_xx0(self, part: str = "total") -> float:
        return float(self.along_x(0.0, part=part)[2])


@dataclass(frozen=True)
class ElasticConstants:
    alpha1: float
    alpha2: float
    cross: float
    residual_stress: float

    @property
    def alpha(self) -> float:
        """Isotropised constant 1/2 sqrt(alpha1 alpha2)."""
        return 0.5 * np.sqrt(self.alpha1 * self.alpha2)

    @property
    def alpha_pn(self) -> float:
        """Coefficient of the reduced profile equation phi' = 2 sqrt(gamma/alpha_pn)."""
        return 2.0 * self.alpha1


def _stencil_terms(V: ThreeBodyPotential, kappa: int, stencil_filter=None):
    st = intra_stencil(kappa, V.support)
    keep = np.ones(len(st.weight), dtype=bool)
    if stencil_filter is not None:
        keep = np.asarray(stencil_filter(kappa, st), dtype=bool)
    _, g1, g2, h11, h12, h22 = V.evaluate(st.r1, st.r2)
    return st, keep, g1, g2, h11, h12, h22


def elastic_constants(V: ThreeBodyPotential, split: str = "total", stencil_filter=None) -> ElasticConstants:
    """Coefficients of u_x^2, u_y^2 and u_x u_y in the Cauchy-Born energy
    density of one layer under an x-displacement u(x, y).

    ``split`` selects the A-centered, B-centered or total intra-layer energy;
    ``stencil_filter(kappa, stencil)`` optionally drops stencil rows.
    """
    kappas = {"total": (SUB_A, SUB_B), "A": (SUB_A,), "B": (SUB_B,)}[split]
    a1 = a2 = cr = st_x = 0.0
    for kappa in kappas:
        st, keep, g1, g2, h11, h12, h22 = _stencil_terms(V, kappa, stencil_filter)
        w = st.weight * keep
        x1, y1 = st.r1[:, 0], st.r1[:, 1]
        x2, y2 = st.r2[:, 0], st.r2[:, 1]
        A, B, C = h11[:, 0, 0], h12[:, 0, 0], h22[:, 0, 0]
        # second-order Taylor term 1/2 (A d1^2 + 2 B d1 d2 + C d2^2), d_i = r_i . grad u
        a1 += 0.5 * np.sum(w * (A * x1 * x1 + 2 * B * x1 * x2 + C * x2 * x2))
        a2 += 0.5 * np.sum(w * (A * y1 * y1 + 2 * B * y1 * y2 + C * y2 * y2))
        cr += np.sum(w * (A * x1 * y1 + B * (x1 * y2 + y1 * x2) + C * x2 * y2))
        st_x += np.sum(w * (g1[:, 0] * x1 + g2[:, 0] * x2))
    k = 1.0 / CELL_AREA
    return ElasticConstants(alpha1=k * a1, alpha2=k * a2, cross=k * cr, residual_stress=k * st_x)


def cauchy_born_density(V: ThreeBodyPotential, grad_u, split: str = "total") -> float:
    """Intra-layer energy per unit area of one layer under u = grad_u . x,
    summed directly from potential values (no derivatives)."""
    kappas = {"total": (SUB_A, SUB_B), "A": (SUB_A,), "B": (SUB_B,)}[split]
    g = np.asarray(grad_u, dtype=float)
    tot = 0.0
    for kappa in kappas:
        st = intra_stencil(kappa, V.support)
        d1 = (st.r1 @ g)[:, None] * E1
        d2 = (st.r2 @ g)[:, None] * E1
        tot += np.sum(st.weight * (V.value(st.r1 + d1, st.r2 + d2) - V.value(st.r1, st.r2)))
    return tot / CELL_AREA


def cauchy_born_alpha(V: ThreeBodyPotential, direction: int, eta: float) -> float:
    """Symmetric strain-energy quotient [e(eta) + e(-eta)] / (2 eta^2); the
    odd part from residual stress cancels."""
    g = np.zeros(2)
    g[direction] = eta
    return (cauchy_born_density(V, g) + cauchy_born_density(V, -g)) / (2.0 * eta * eta)


@dataclass(frozen=True)
class Material:
    """Everything the continuum model needs at a given inter-layer strength."""

    intra: ThreeBodyPotential
    inter: TwoBodyPotential
    elastic: ElasticConstants
    eps: float
    gamma_xx0: float

    def rescaled_gamma(self) -> GammaSurface:
        return GammaSurface(self.inter, scale=self.eps**-2)


def compute_eps(intra: ThreeBodyPotential, inter: TwoBodyPotential,
                elastic: ElasticConstants | None = None) -> Material:
    """eps^2 = gamma_xx(0) / sqrt(alpha1 alpha2); validates positivity."""
    el = elastic or elastic_constants(intra)
    if el.alpha1 <= 0 or el.alpha2 <= 0:
        raise ModelAssumptionError(f"non-positive elastic constants {el.alpha1:.6g}, {el.alpha2:.6g}")
    surf = GammaSurface(inter)
    hess = surf.gamma(np.zeros(2), order=2)[2]
    lam = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    if lam[0] <= HESSIAN_PD_TOL:
        raise ModelAssumptionError(f"Hessian of gamma at 0 is not positive definite (eigenvalues {lam[0]:.6g}, {lam[1]:.6g})")
    gxx = hess[0, 0]
    eps = float(np.sqrt(gxx / np.sqrt(el.alpha1 * el.alpha2)))
    return Material(intra=intra, inter=inter, elastic=el, eps=eps, gamma_xx0=float(gxx))


def de_for_eps(intra: ThreeBodyPotential, inter: TwoBodyPotential, eps: float) -> float:
    """Well depth giving the requested eps (eps^2 is linear in D_e)."""
    unit = compute_eps(intra, replace(inter, De=1.0))
    return (eps / unit.eps) ** 2


def sample_gamma_x(surface: GammaSurface, n: int = 201):
    """gamma along the x-shift t in [0, 1] for tabulation."""
    t = np.linspace(0.0, 1.0, n)
    return t, surface.along_x(t, order=0)[0], surface.along_x(t, "A", 0)[0], surface.along_x(t, "B", 0)[0]


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    value: float
    detail: str


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def get(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self):
        return [(c.name, "PASS" if c.passed else "FAIL", c.value, c.detail) for c in self.checks]


def gamma_grid_minima(surface: GammaSurface, n: int = 200, rel_tol: float = 1e-9):
    """Sample gamma on an n x n grid over one cell (phi = t1 e1 + t2 e2) plus the
    high-symmetry stackings p and 2p, which the grid misses unless 3 divides n.
    Return the sampled shifts within rel_tol * max|gamma| of the minimum and the minimum."""
    t = np.arange(n) / n
    t1, t2 = np.meshgrid(t, t, indexing="ij")
    phi = np.concatenate([(t1[..., None] * E1 + t2[..., None] * E2).reshape(-1, 2), np.array([P, 2.0 * P])])
    g = surface.value(phi)
    tol = rel_tol * float(np.abs(g).max())
    hit = g <= g.min() + tol
    return phi[hit], float(g.min())


def _on_lattice(pts, tol: float) -> np.ndarray:
    coords = np.atleast_2d(pts) @ np.linalg.inv(np.array([E1, E2]))
    return np.all(np.abs(coords - np.round(coords)) <= tol, axis=1)


def check_assumptions(intra: ThreeBodyPotential, inter: TwoBodyPotential, continuum=None, gaps=None,
                      eps_max: float = 0.2, grid: int = 200, seed: int = 0) -> AssumptionReport:
    """Numerical spot checks of the standing assumptions.

    ``continuum`` is a ContinuumStability (needed for A7/A8) and ``gaps`` a
    pair of StabilityGap for the A and B parts (needed for A8); checks whose
    inputs are missing are reported as failed with an explanation.
    """
    rng = np.random.default_rng(seed)
    checks = []
    el = elastic_constants(intra)
    surf = GammaSurface(inter)
    hess = surf.gamma(np.zeros(2), order=2)[2]
    lam = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    scale = np.sqrt(abs(el.alpha1 * el.alpha2))
    eps = float(np.sqrt(hess[0, 0] / scale)) if hess[0, 0] > 0 and el.alpha1 > 0 and el.alpha2 > 0 else float("nan")
    checks.append(AssumptionCheck("A1", bool(eps < eps_max), eps, f"eps = {eps:.6g}, threshold {eps_max}"))

    # A2: symmetry of the potentials and of gamma
    r1 = rng.uniform(-1.2, 1.2, (50, 2))
    r2 = rng.uniform(-1.2, 1.2, (50, 2))
    ok = (np.linalg.norm(r1, axis=1) > 0.3) & (np.linalg.norm(r2, axis=1) > 0.3)
    v_swap = float(np.max(np.abs(intra.value(r1[ok], r2[ok]) - intra.value(r2[ok], r1[ok]))))
    v_refl = float(np.max(np.abs(intra.value(r1[ok], r2[ok]) - intra.value(-r1[ok], -r2[ok]))))
    phi = rng.uniform(-1.0, 1.0, (50, 2))
    g0 = surf.value(phi)
    per = float(np.max(np.abs(surf.value(phi + E1) - g0)))
    mir = float(np.max(np.abs(surf.value(phi * np.array([-1.0, 1.0])) - g0)))
    resid = max(v_swap, v_refl, per, mir, abs(el.cross) / max(abs(el.alpha1), abs(el.alpha2)))
    checks.append(AssumptionCheck("A2", bool(resid <= 1e-10), resid,
                                  f"swap {v_swap:.2e}, inversion {v_refl:.2e}, period {per:.2e}, "
                                  f"mirror {mir:.2e}, cross {el.cross:.2e}"))

    # A4: decay of the inter-layer potential at the cutoff
    near = abs(float(inter.radial(np.array([inter.re]))[0][0]))
    tail = float(np.max(np.abs(inter.radial(np.linspace(inter.r_cut - inter.blend, inter.r_cut, 11))[0])))
    far = abs(float(inter.radial(np.array([inter.r_cut + 1.0]))[0][0]))
    ratio = tail / near if near > 0 else float("inf")
    checks.append(AssumptionCheck("A4", bool(ratio <= 1e-10 and far == 0.0), ratio,
                                  f"max |U| over the blend / |U(r_e)| = {ratio:.2e}"))

    checks.append(AssumptionCheck("A5", bool(el.alpha1 > 0 and el.alpha2 > 0), min(el.alpha1, el.alpha2),
                                  f"alpha1 = {el.alpha1:.6g}, alpha2 = {el.alpha2:.6g}"))

    # A6: positive Hessian at 0 and minima of gamma on the Bravais lattice
    pts, gmin = gamma_grid_minima(surf, grid)
    on = _on_lattice(pts, 1e-9)
    a6 = bool(lam[0] > HESSIAN_PD_TOL and on.all())
    off = pts[~on]
    detail = f"Hessian eigenvalues {lam[0]:.6g}, {lam[1]:.6g}; {len(pts)} grid minima, {int((~on).sum())} off the lattice"
    if len(off):
        detail += f" (e.g. {off[0][0]:.6f}, {off[0][1]:.6f})"
    checks.append(AssumptionCheck("A6", a6, float(lam[0]), detail))
    tx = np.arange(grid + 1) / grid
    gx = surf.along_x(tx, order=0)[0]
    path_ok = bool(lam[0] > HESSIAN_PD_TOL and np.all(gx[1:-1] > 0.0) and abs(gx[0]) <= 1e-12)
    checks.append(AssumptionCheck("A6-x-path", path_ok, float(gx[1:-1].min()),
                                  "gamma(t e1) > 0 for 0 < t < 1"))

    if continuum is None:
        checks.append(AssumptionCheck("A7", False, float("nan"), "continuum stability not supplied"))
    else:
        tb, th = continuum.theta_bar, continuum.theta
        checks.append(AssumptionCheck("A7", bool(tb >= th / 3.0), tb,
                                      f"theta_bar = {tb:.6g}, theta = {th:.6g}"))
    if continuum is None or gaps is None:
        checks.append(AssumptionCheck("A8", False, float("nan"), "continuum stability or gaps not supplied"))
    else:
        delta = max(g.delta for g in gaps)
        bound = min(1.0 / 3.0, continuum.theta_bar / 3.0)
        checks.append(AssumptionCheck("A8", bool(delta < bound), delta,
                                      f"Delta = {delta:.6g}, bound {bound:.6g}"))
    return AssumptionReport(tuple(checks))


__all__ = [
    "AssumptionCheck", "AssumptionReport", "check_assumptions", "gamma_grid_minima", "HESSIAN_PD_TOL",
    "GammaSurface", "ElasticConstants", "Material", "ModelAssumptionError",
    "elastic_constants", "cauchy_born_density", "cauchy_born_alpha",
    "compute_eps", "de_for_eps", "sample_gamma_x", "SQRT3",
]
