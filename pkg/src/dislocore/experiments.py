"""Verification experiments: consistency residual, stability spectra and the
eps-sweep convergence study.

eps is varied by scaling the Morse well depth D_e (eps^2 is linear in D_e
and the elastic constants do not depend on it); the window half-width is
fixed in rescaled units, so the physical window grows like 1/eps.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import linregress

from .analysis import StabilityGap, nearest_filter, stability_gap
from .atomistic import AtomisticModel, SolverError
from .kernels import thread_count
from .lattice import build_lattice
from .material import Material, compute_eps, de_for_eps
from .pn_solver import ContinuumStability, PNProfile, continuum_stability, profile_for_material
from .potentials import HarmonicTriplet, ThreeBodyPotential, TwoBodyPotential


def default_sweep(n: int = 6, lo: float = 0.02, hi: float = 0.06) -> list[float]:
    """Geometric eps values, largest first."""
    return [float(e) for e in np.geomspace(hi, lo, n)]


@dataclass(frozen=True)
class Setup:
    """Potentials, window and tolerances shared by the experiments.

    ``L`` is the window half-width in rescaled units (physical L / eps);
    ``R_cut`` defaults to the inter-layer cutoff.
    """

    intra: ThreeBodyPotential = field(default_factory=ThreeBodyPotential)
    inter: TwoBodyPotential = field(default_factory=TwoBodyPotential)
    L: float = 20.0
    n_y: int = 1
    R_cut: float | None = None
    ode_tol: float = 1e-12
    newton_tol: float = 1e-10
    krylov_tol: float = 1e-8
    backend: str | None = None

    @property
    def cutoff(self) -> float:
        return self.R_cut if self.R_cut is not None else self.inter.r_cut


@dataclass
class Point:
    """One eps of a sweep: material, PN profile and atomistic model."""

    eps: float
    material: Material
    profile: PNProfile
    model: AtomisticModel


def material_for_eps(setup: Setup, eps: float) -> Material:
    De = de_for_eps(setup.intra, setup.inter, eps)
    return compute_eps(setup.intra, replace(setup.inter, De=De))


def build_point(setup: Setup, eps: float) -> Point:
    mat = material_for_eps(setup, eps)
    prof = profile_for_material(mat, rtol=setup.ode_tol)
    lat = build_lattice(setup.L / mat.eps, setup.n_y, setup.cutoff)
    model = AtomisticModel(lat, setup.intra, mat.inter, mat.eps, prof.phi, backend=setup.backend)
    return Point(mat.eps, mat, prof, model)


def fit_slope(eps, values) -> tuple[float, float]:
    """Least-squares slope of log(values) against log(eps) and its standard error."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(eps) < 2:
        return float("nan"), float("nan")
    if len(eps) == 2:
        s = float(np.diff(np.log(values))[0] / np.diff(np.log(eps))[0])
        return s, float("nan")
    fit = linregress(np.log(eps), np.log(values))
    return float(fit.slope), float(fit.stderr)


def _map(fn, items, workers: int | None):
    workers = thread_count() if workers is None else workers
    workers = min(workers, len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# consistency

@dataclass
class ConsistencyReport:
    eps: list
    residual: list
    slope: float
    stderr: float

    def rows(self):
        return list(zip(self.eps, self.residual))


def _consistency_point(args):
    setup, eps = args
    pt = build_point(setup, eps)
    return pt.eps, pt.model.consistency_residual()


def consistency(setup: Setup, eps_list=None, workers: int | None = 1) -> ConsistencyReport:
    """X_eps-dual norm of the atomistic first variation at the sampled PN solution."""
    eps_list = default_sweep() if eps_list is None else list(eps_list)
    out = _map(_consistency_point, [(setup, e) for e in eps_list], workers)
    eps = [o[0] for o in out]
    res = [o[1] for o in out]
    slope, stderr = fit_slope(eps, res)
    return ConsistencyReport(eps, res, slope, stderr)


# convergence

@dataclass
class ConvergencePoint:
    eps: float
    error: float
    residual: float
    iterations: int
    ndof: int
    seconds: float


@dataclass
class ConvergenceReport:
    points: list
    excluded: list  # (eps, reason)
    slope: float
    stderr: float
    metadata: dict

    @property
    def eps(self):
        return [p.eps for p in self.points]

    @property
    def errors(self):
        return [p.error for p in self.points]

    def rows(self):
        return [(p.eps, p.error, p.residual, p.iterations, p.ndof, p.seconds) for p in self.points]


def _converge_point(args):
    setup, eps = args
    t0 = time.perf_counter()
    try:
        pt = build_point(setup, eps)
        res = pt.model.solve(tol=setup.newton_tol, krylov_tol=setup.krylov_tol)
    except (SolverError, FloatingPointError) as exc:
        return ("fail", eps, str(exc))
    err = pt.model.error_norm(res.x)
    return ("ok", ConvergencePoint(pt.eps, err, res.residual, res.iterations, pt.model.ndof,
                                   time.perf_counter() - t0))


def converge(setup: Setup, eps_list=None, workers: int | None = 1) -> ConvergenceReport:
    """Solve the atomistic model at every eps and measure ||v_eps - v||_{X_eps}."""
    eps_list = default_sweep() if eps_list is None else list(eps_list)
    out = _map(_converge_point, [(setup, e) for e in eps_list], workers)
    points = [o[1] for o in out if o[0] == "ok"]
    excluded = [(o[1], o[2]) for o in out if o[0] == "fail"]
    slope, stderr = fit_slope([p.eps for p in points], [p.error for p in points])
    meta = {"L_rescaled": setup.L, "n_y": setup.n_y, "R_cut": setup.cutoff,
            "newton_tol": setup.newton_tol, "krylov_tol": setup.krylov_tol}
    return ConvergenceReport(points, excluded, slope, stderr, meta)


# stability

@dataclass
class StabilityReport:
    eps: float
    continuum: ContinuumStability
    lambda_min: float
    lambda_residual: float
    gap_a: StabilityGap
    gap_b: StabilityGap
    gap_a_coarse: StabilityGap
    nearest_gap: StabilityGap

    @property
    def theta(self) -> float:
        return self.continuum.theta

    @property
    def theta_bar(self) -> float:
        return self.continuum.theta_bar

    def rows(self):
        c = self.continuum
        g = self.gap_a
        return [
            ("theta", c.theta, c.residual),
            ("theta_A", c.theta_a, c.residual),
            ("theta_B", c.theta_b, c.residual),
            ("theta_bar", c.theta_bar, c.residual),
            ("lambda_min_atomistic", self.lambda_min, self.lambda_residual),
            ("Delta_A", self.gap_a.delta, 0.0),
            ("Delta_B", self.gap_b.delta, 0.0),
            (f"Delta_A_eps_{self.gap_a_coarse.eps:g}", self.gap_a_coarse.delta, 0.0),
            ("Delta_A_literal", g.delta_literal, 0.0),
            ("Delta_A_nearest", self.nearest_gap.delta, 0.0),
            ("Delta_A_nearest_literal", self.nearest_gap.delta_literal, 0.0),
        ]


def nearest_gap(n: int = 18, eps: float = 0.025) -> StabilityGap:
    """Stability gap of the nearest-interaction-only test potential."""
    return stability_gap(HarmonicTriplet(), "A", eps=eps, n=n, stencil_filter=nearest_filter)


def stability(setup: Setup, eps: float, x=None, gap_eps: float = 0.025, gap_n: int = 18) -> StabilityReport:
    """Continuum Rayleigh quotients at the PN profile, the smallest eigenvalue of the
    reduced atomistic Hessian at the solved dislocation, and stability gaps at two eps."""
    pt = build_point(setup, eps)
    if x is None:
        x = pt.model.solve(tol=setup.newton_tol, krylov_tol=setup.krylov_tol).x
    lam, lres = pt.model.lambda_min(x)
    cont = continuum_stability(pt.material, pt.profile)
    ga = stability_gap(setup.intra, "A", eps=gap_eps, n=gap_n)
    gb = stability_gap(setup.intra, "B", eps=gap_eps, n=gap_n)
    gc = stability_gap(setup.intra, "A", eps=2.0 * gap_eps, n=gap_n)
    return StabilityReport(pt.eps, cont, lam, lres, ga, gb, gc, nearest_gap(gap_n, gap_eps))


__all__ = [
    "Setup", "Point", "default_sweep", "material_for_eps", "build_point", "fit_slope",
    "ConsistencyReport", "consistency", "ConvergencePoint", "ConvergenceReport", "converge",
    "StabilityReport", "stability", "nearest_gap",
]
