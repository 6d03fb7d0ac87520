"""Discrete calculus on the complex lattice: difference operators, the
X_eps and X_0 norms, piecewise-linear interpolation, and the stability gap
between the atomistic and continuum second variations at the perfect
lattice.

Discrete functions live on the stored atoms of a TruncatedLattice. Both
layers use the cell convention: the value at cell s and sublattice kappa
samples f(eps s) for A and f(eps (s + p)) for B, whatever the layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .kernels import backend_for, get_backend
from .lattice import (
    CELL_AREA, E1, E2, KIND_MIXED, KIND_SAME, LOWER, P, SQRT3, SUB_A, SUB_B, UPPER,
    TruncatedLattice, Triangulation, intra_stencil, sublattice_offset, triangulate, triangulate_window,
)
from .material import elastic_constants
from .potentials import ThreeBodyPotential, TwoBodyPotential

_TOL = 1e-9


# nearest-interaction potential

def nearest_filter(kappa: int, st) -> np.ndarray:
    """Stencil rows kept by the nearest-interaction potential.

    Same-sublattice triples: equilateral unit triangles containing a site
    of the other sublattice at their centroid. Mixed triples: a nearest
    other-sublattice neighbour at 1/sqrt(3), a same-sublattice neighbour
    at 1, and the two neighbours themselves at distance 1/sqrt(3).
    """
    sign = 1.0 if kappa == SUB_A else -1.0
    n1 = np.linalg.norm(st.r1, axis=1)
    n2 = np.linalg.norm(st.r2, axis=1)
    n12 = np.linalg.norm(st.r2 - st.r1, axis=1)
    same = st.kind == KIND_SAME
    c = (st.r1 + st.r2) / 3.0 - sign * P
    basis = np.array([E1, E2])
    coords = c @ np.linalg.inv(basis)
    on_lattice = np.all(np.abs(coords - np.round(coords)) < _TOL, axis=1)
    keep_same = same & (np.abs(n1 - 1) < _TOL) & (np.abs(n2 - 1) < _TOL) & (np.abs(n12 - 1) < _TOL) & on_lattice
    r3 = 1.0 / SQRT3
    keep_mixed = (st.kind == KIND_MIXED) & (np.abs(n1 - r3) < _TOL) & (np.abs(n2 - 1) < _TOL) & \
        (np.abs(n12 - r3) < _TOL)
    return keep_same | keep_mixed


# discrete functions and differences

@dataclass
class DiscreteFunction:
    """Values on the stored atoms (both layers) at scale eps."""

    lat: TruncatedLattice
    eps: float
    values: np.ndarray

    @classmethod
    def sample(cls, lat: TruncatedLattice, eps: float, f_plus, f_minus=None) -> "DiscreteFunction":
        """Sample continuum fields at eps * (cell position of the upper-layer site)."""
        f_minus = f_plus if f_minus is None else f_minus
        pos = lat.cell[:, 0, None] * E1 + lat.cell[:, 1, None] * E2
        pos = pos + np.where(lat.kappa[:, None] == SUB_B, P, 0.0)
        pts = eps * pos
        vals = np.where(lat.layer == UPPER, f_plus(pts[:, 0], pts[:, 1]), f_minus(pts[:, 0], pts[:, 1]))
        return cls(lat, float(eps), np.asarray(vals, dtype=float))

    def __add__(self, other: "DiscreteFunction") -> "DiscreteFunction":
        return DiscreteFunction(self.lat, self.eps, self.values + other.values)

    def __mul__(self, c: float) -> "DiscreteFunction":
        return DiscreteFunction(self.lat, self.eps, c * self.values)

    __rmul__ = __mul__

    def perp(self) -> np.ndarray:
        """f+ - f- per upper atom (NaN where the lower partner is not stored)."""
        lat = self.lat
        up = np.nonzero(lat.layer == UPPER)[0]
        low = lat.index(LOWER, lat.kappa[up], lat.cell[up, 0], lat.cell[up, 1])
        out = np.full(len(up), np.nan)
        ok = low >= 0
        out[ok] = self.values[up[ok]] - self.values[low[ok]]
        return out


def diff(f: DiscreteFunction, s, variant: str = "plain") -> np.ndarray:
    """D_s f per atom: (f(x + eps s') - f(x)) / eps with s' = s, s + p (from A
    to B) or s - p (from B to A). NaN where undefined or the neighbour is missing."""
    lat = f.lat
    s = np.asarray(s, dtype=np.int64)
    target = lat.kappa.copy()
    valid = np.ones(lat.n_atoms, dtype=bool)
    if variant == "+p":
        valid = lat.kappa == SUB_A
        target[:] = SUB_B
    elif variant == "-p":
        valid = lat.kappa == SUB_B
        target[:] = SUB_A
    elif variant != "plain":
        raise ValueError(f"unknown variant {variant!r}")
    j = lat.index(lat.layer, target, lat.cell[:, 0] + s[0], lat.cell[:, 1] + s[1])
    out = np.full(lat.n_atoms, np.nan)
    ok = valid & (j >= 0)
    out[ok] = (f.values[j[ok]] - f.values[ok]) / f.eps
    return out


# X_eps inner product

class XepsForm:
    """(f, g)_{X_eps} = [1/2 <H0 f+, g+> + 1/2 <H0 f-, g-> + eps^2 sum f_perp g_perp] / Y

    with H0 the intra-layer Hessian at the perfect lattice and Y = eps sqrt(3) n_y
    the rescaled period. Terms touching boundary atoms are left out.
    """

    def __init__(self, lat: TruncatedLattice, V: ThreeBodyPotential, eps: float, backend: str | None = None):
        from .atomistic import build_terms

        self.lat = lat
        self.eps = float(eps)
        self.be = backend_for(V, TwoBodyPotential(), backend)
        tab = build_terms(lat, V, TwoBodyPotential(De=0.0), inter=False)
        inner = lat.interior[tab.idx3].all(axis=1)
        self.tab = tab.subset(inner, np.zeros(len(tab.idx2), dtype=bool))
        self.h3 = self.be.evaluate(np.zeros(lat.n_atoms), self.tab, 2)[2]
        self.y_length = self.eps * SQRT3 * lat.n_y
        up = np.nonzero((lat.layer == UPPER) & lat.interior)[0]
        low = lat.index(LOWER, lat.kappa[up], lat.cell[up, 0], lat.cell[up, 1])
        ok = low >= 0
        ok[ok] &= lat.interior[low[ok]]
        self._up, self._low = up[ok], low[ok]

    def _vals(self, f):
        if isinstance(f, DiscreteFunction):
            if f.lat is not self.lat:
                raise ValueError("discrete function lives on a different lattice")
            return f.values
        v = np.asarray(f, dtype=float)
        if v.shape != (self.lat.n_atoms,):
            raise ValueError("field does not match the lattice")
        return v

    def hess(self, f) -> np.ndarray:
        return self.be.hessvec(self.tab, self.h3, np.zeros(0), self._vals(f))

    def inner(self, f, g) -> float:
        fv, gv = self._vals(f), self._vals(g)
        elastic = 0.5 * float(gv @ self.hess(fv))
        fp = fv[self._up] - fv[self._low]
        gp = gv[self._up] - gv[self._low]
        return (elastic + self.eps**2 * float(fp @ gp)) / self.y_length

    def norm_sq(self, f) -> float:
        return self.inner(f, f)


# piecewise-linear interpolation

@dataclass
class InterpolantPL:
    """T(x, y) = A x + B y + C on each triangle (rescaled coordinates)."""

    tri: Triangulation
    verts: np.ndarray   # (nt, 3, 2) rescaled vertex positions
    values: np.ndarray  # (nt, 3)
    coef: np.ndarray    # (nt, 3) columns A, B, C
    y0: float
    y_length: float

    def gradient(self) -> np.ndarray:
        return self.coef[:, :2]

    def area(self) -> np.ndarray:
        v = self.verts
        a = v[:, 1] - v[:, 0]
        b = v[:, 2] - v[:, 0]
        return 0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def locate(self, pts) -> np.ndarray:
        """Index of the lowest-numbered triangle containing each point, -1 if none."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        pts[:, 1] = self.y0 + np.mod(pts[:, 1] - self.y0, self.y_length)
        v = self.verts
        out = np.full(len(pts), -1, dtype=np.int64)
        for k, q in enumerate(pts):
            d0 = v[:, 0] - q
            d1 = v[:, 1] - q
            d2 = v[:, 2] - q
            c0 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
            c1 = d2[:, 0] * d0[:, 1] - d2[:, 1] * d0[:, 0]
            c2 = d0[:, 0] * d1[:, 1] - d0[:, 1] * d1[:, 0]
            tol = 1e-12 * max(1.0, float(np.abs(q).max()))
            inside = ((c0 >= -tol) & (c1 >= -tol) & (c2 >= -tol)) | ((c0 <= tol) & (c1 <= tol) & (c2 <= tol))
            hit = np.nonzero(inside)[0]
            if len(hit):
                out[k] = hit[0]
        return out

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        t = self.locate(pts)
        if np.any(t < 0):
            raise ValueError("point outside the triangulated window")
        y = self.y0 + np.mod(pts[:, 1] - self.y0, self.y_length)
        c = self.coef[t]
        return c[:, 0] * pts[:, 0] + c[:, 1] * y + c[:, 2]


def plane_coefficients(verts: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Solve A x + B y + C = T at the three vertices of every triangle."""
    M = np.concatenate([verts, np.ones(verts.shape[:2] + (1,))], axis=2)
    return np.linalg.solve(M, values[..., None])[..., 0]


def interpolate(f: DiscreteFunction, base: int = SUB_A, layer: int = UPPER,
                tri: Triangulation | None = None) -> InterpolantPL:
    """Piecewise-linear interpolant of one layer of f on the base triangulation,
    with vertices at eps times the cell-convention positions."""
    lat = f.lat
    if tri is None:
        tri = triangulate_window(lat, base, layer)
    idx = lat.index(layer, tri.subl, tri.cells[..., 0], tri.cells[..., 1])
    verts = f.eps * tri.positions(UPPER)
    vals = f.values[idx]
    coef = plane_coefficients(verts, vals)
    y0 = f.eps * sublattice_offset(UPPER, base)[1]
    return InterpolantPL(tri, verts, vals, coef, y0, f.eps * lat.y_length)


def interpolate_pair(f: DiscreteFunction, base: int = SUB_A) -> tuple[InterpolantPL, InterpolantPL]:
    """Interpolants of both layers on the triangles stored in both layers."""
    tri = triangulate_window(f.lat, base, None)
    return interpolate(f, base, UPPER, tri), interpolate(f, base, LOWER, tri)


def norm_X0_pl(fp: InterpolantPL, fm: InterpolantPL, alpha1: float, alpha2: float) -> float:
    """alpha1 |d_x f|^2 + alpha2 |d_y f|^2 for both layers plus (4 sqrt3/3) |f_perp|^2,
    integrated exactly over the triangles and averaged over the y-period."""
    if fp.tri.cells.shape != fm.tri.cells.shape or not np.array_equal(fp.tri.cells, fm.tri.cells):
        raise ValueError("layers use different triangulations")
    area = fp.area()
    tot = 0.0
    for it in (fp, fm):
        g = it.gradient()
        tot += np.sum(area * (alpha1 * g[:, 0] ** 2 + alpha2 * g[:, 1] ** 2))
    d = fp.values - fm.values
    # exact integral of a linear function squared over a triangle
    sq = area / 6.0 * (np.sum(d * d, axis=1) + d[:, 0] * d[:, 1] + d[:, 1] * d[:, 2] + d[:, 2] * d[:, 0])
    tot += 4.0 * SQRT3 / 3.0 * np.sum(sq)
    return float(tot / fp.y_length)


def adc_field(lat: TruncatedLattice, rng, scale: float = 1.0, width: float | None = None) -> np.ndarray:
    """Random upper-layer values f with f + 1/4 satisfying the ADC: zero at
    atoms on x = 0, opposite values on the pair at x = +-1/2 of each row.
    Lower-layer values are minus the upper partner."""
    n = lat.n_atoms
    x = lat.pos[:, 0]
    vals = scale * rng.standard_normal(n)
    if width is not None:
        vals *= np.exp(-(x / width) ** 2)
    up = lat.layer == UPPER
    vals[up & (np.abs(x) < _TOL)] = 0.0
    minus = np.nonzero(up & (np.abs(x + 0.5) < _TOL))[0]
    plus = lat.index(UPPER, lat.kappa[minus], lat.cell[minus, 0] + 1, lat.cell[minus, 1])
    vals[minus] = -vals[plus]
    low = np.nonzero(lat.layer == LOWER)[0]
    partner = lat.index(UPPER, lat.kappa[low], lat.cell[low, 0], lat.cell[low, 1])
    ok = partner >= 0
    vals[low[ok]] = -vals[partner[ok]]
    vals[low[~ok]] = 0.0
    return vals


# stability gap at the perfect lattice

def _torus_hessian(V: ThreeBodyPotential, n: int, kappa: int, stencil_filter=None) -> sparse.csr_matrix:
    """Hessian at the perfect lattice of the kappa-centred intra-layer terms of
    one layer on an n x n torus. Dofs: 2 * (v1 * n + v2) + sublattice."""
    st = intra_stencil(kappa, V.support)
    keep = np.ones(len(st.weight), dtype=bool)
    if stencil_filter is not None:
        keep = np.asarray(stencil_filter(kappa, st), dtype=bool)
    _, _, _, h11, h12, h22 = V.evaluate(st.r1[keep], st.r2[keep])
    w = st.weight[keep]
    a, b, c = w * h11[:, 0, 0], w * h12[:, 0, 0], w * h22[:, 0, 0]
    v1, v2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v1 = v1.ravel()[:, None]
    v2 = v2.ravel()[:, None]
    i0 = 2 * (v1 * n + v2) + kappa
    i1 = 2 * (np.mod(v1 + st.off1[keep, 0], n) * n + np.mod(v2 + st.off1[keep, 1], n)) + st.sub1[keep]
    i2 = 2 * (np.mod(v1 + st.off2[keep, 0], n) * n + np.mod(v2 + st.off2[keep, 1], n)) + st.sub2[keep]
    i0 = np.broadcast_to(i0, i1.shape)
    rows, cols, vals = [], [], []
    # local block for (d1, d2) = (u1 - u0, u2 - u0)
    for (p, q), coeff in (((1, 1), (1, 0, 0)), ((1, 2), (0, 1, 0)), ((2, 1), (0, 1, 0)), ((2, 2), (0, 0, 1))):
        h = coeff[0] * a + coeff[1] * b + coeff[2] * c
        for sp, ip in ((1, (i1, i2)[p - 1]), (-1, i0)):
            for sq, iq in ((1, (i1, i2)[q - 1]), (-1, i0)):
                rows.append(ip.ravel())
                cols.append(iq.ravel())
                vals.append(np.broadcast_to(sp * sq * h, ip.shape).ravel())
    m = 2 * n * n
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))


def _torus_p1_stiffness(n: int, base: int, alpha1: float, alpha2: float) -> sparse.csr_matrix:
    """2 * int (alpha1 f_x^2 + alpha2 f_y^2) for the base-triangulation P1
    interpolant on the n x n torus (physical lattice units)."""
    tri = triangulate(n, n, base, True)
    pos = tri.positions(UPPER)
    dofs = 2 * (np.mod(tri.cells[..., 0], n) * n + np.mod(tri.cells[..., 1], n)) + tri.subl
    a = pos[:, 1] - pos[:, 0]
    b = pos[:, 2] - pos[:, 0]
    det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    area = 0.5 * np.abs(det)
    # gradients of the three hat functions
    inv = np.stack([np.stack([b[:, 1], -a[:, 1]], 1), np.stack([-b[:, 0], a[:, 0]], 1)], 1) / det[:, None, None]
    gl = np.stack([-inv[:, :, 0] - inv[:, :, 1], inv[:, :, 0], inv[:, :, 1]], axis=2)  # (nt, 2, 3)
    K = 2.0 * area[:, None, None] * (alpha1 * gl[:, 0, :, None] * gl[:, 0, None, :]
                                     + alpha2 * gl[:, 1, :, None] * gl[:, 1, None, :])
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    m = 2 * n * n
    return sparse.csr_matrix((K.ravel(), (rows, cols)), shape=(m, m))


@dataclass(frozen=True)
class StabilityGap:
    delta: float          # max(0, -lambda_min): how far R_g1 can fall below zero
    delta_literal: float  # -lambda_max: minus the sup of R_g1 over the unit ball
    lambda_min: float     # extremes of R_g1(f) / |f|^2_{X_eps}
    lambda_max: float
    n: int
    eps: float


def stability_gap(V, part: str = "A", eps: float = 0.025, n: int = 18, stencil_filter=None) -> StabilityGap:
    """Extremes of R_g1(f) / |f|^2_{X_eps} on an n x n torus at the perfect lattice.

    R_g1 is the part-``part`` atomistic second variation minus that of the
    continuum energy of the base-``part`` interpolant. Test functions are
    layer-antisymmetric (f- = -f+); both forms act layer by layer, so one
    layer is enough. Raises ValueError when the intra-layer Hessian of the
    (filtered) potential is indefinite, since X_eps is then not a norm.
    """
    if part not in ("A", "B"):
        raise ValueError("part must be 'A' or 'B'")
    kappa = SUB_A if part == "A" else SUB_B
    el = elastic_constants(V, part, stencil_filter=stencil_filter)
    Qa = _torus_hessian(V, n, kappa, stencil_filter)
    Qc = _torus_p1_stiffness(n, kappa, el.alpha1, el.alpha2)
    full = _torus_hessian(V, n, SUB_A, stencil_filter) + _torus_hessian(V, n, SUB_B, stencil_filter)
    # per layer: 1/2 <H f, f> + 1/2 eps^2 |2 f|^2
    G = (0.5 * full).toarray() + 2.0 * eps**2 * np.eye(full.shape[0])
    R = (Qa - Qc).toarray()
    R = 0.5 * (R + R.T)
    G = 0.5 * (G + G.T)
    try:
        w = linalg.eigh(R, G, eigvals_only=True)
    except linalg.LinAlgError as exc:
        raise ValueError("X_eps Gram matrix is not positive definite for this potential") from exc
    lam_min, lam_max = float(w[0]), float(w[-1])
    return StabilityGap(delta=max(0.0, -lam_min), delta_literal=-lam_max, lambda_min=lam_min,
                        lambda_max=lam_max, n=n, eps=eps)


# diagnostics

def point_symmetry_residual(lat: TruncatedLattice, u: np.ndarray, free_halfwidth: float) -> float:
    """max |u_s + u_{-s} - 1/2| over upper atoms with |x| <= free_halfwidth,
    pairing sites by cell index (A at s with A at -s, B at s + p with B at -s + p)."""
    up = np.nonzero((lat.layer == UPPER) & (np.abs(lat.pos[:, 0]) <= free_halfwidth))[0]
    mirror = lat.index(UPPER, lat.kappa[up], -lat.cell[up, 0], -lat.cell[up, 1])
    ok = mirror >= 0
    return float(np.max(np.abs(u[up[ok]] + u[mirror[ok]] - 0.5))) if ok.any() else 0.0


def norm_equivalence_ratio(lat: TruncatedLattice, V: ThreeBodyPotential, eps: float, f: DiscreteFunction) -> float:
    """|f_A|^2_{X_0} / |f|^2_{X_eps} for the base-A interpolants of both layers."""
    el = elastic_constants(V)
    ip, im = interpolate_pair(f, SUB_A)
    form = XepsForm(lat, V, eps)
    return norm_X0_pl(ip, im, el.alpha1, el.alpha2) / form.norm_sq(f)


__all__ = [
    "nearest_filter", "DiscreteFunction", "diff", "XepsForm", "InterpolantPL", "plane_coefficients",
    "interpolate", "interpolate_pair", "norm_X0_pl", "adc_field", "StabilityGap", "stability_gap",
    "point_symmetry_residual", "norm_equivalence_ratio", "CELL_AREA",
]
