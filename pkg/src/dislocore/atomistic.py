"""Atomistic energy of the bilayer, constrained dofs and the Newton solver.

Displacements are x-components in lattice units. The energy is the sum of
three-body increments (same-sublattice triples weight 1/6 per ordered pair,
mixed triples 1/2) and inter-layer Morse increments over the four
upper/lower sublattice rows. Rescaled energies divide by the y-length of
the window in rescaled units, eps * sqrt(3) * n_y.

Constraints are eliminated, not penalised: the lower layer is minus the
upper layer of the same cell and sublattice, each upper row obeys the
atomistic dislocation condition, and atoms near the window edge are clamped
to the sampled PN profile.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg, eigsh

from .kernels import backend_for, get_backend
from .lattice import (
    LOWER, MISFIT_ROWS, SQRT3, SUB_A, SUB_B, UPPER, TruncatedLattice, bravais_within, intra_stencil,
)
from .potentials import ThreeBodyPotential, TwoBodyPotential

ADC_TOL = 1e-9
CHECKPOINT_MAGIC = b"DCOR1"


class SolverError(RuntimeError):
    """Newton failure; carries the last iterate and its residual."""

    def __init__(self, message: str, x=None, residual: float = float("nan")):
        super().__init__(message)
        self.x = x
        self.residual = residual


@dataclass
class TermTable:
    """Flat lists of interaction terms over full atom indices."""

    idx3: np.ndarray
    sid3: np.ndarray
    st3: dict
    idx2: np.ndarray
    sid2: np.ndarray
    st2: dict
    V: ThreeBodyPotential
    U: TwoBodyPotential

    @property
    def n_terms(self) -> int:
        return len(self.idx3) + len(self.idx2)

    def subset(self, keep3, keep2) -> "TermTable":
        return TermTable(
            np.ascontiguousarray(self.idx3[keep3]), np.ascontiguousarray(self.sid3[keep3]), self.st3,
            np.ascontiguousarray(self.idx2[keep2]), np.ascontiguousarray(self.sid2[keep2]), self.st2,
            self.V, self.U,
        )


StencilFilter = Callable[[int, object], np.ndarray]


# The relative layer shift u+ - u- is the disregistry, which stays in [0, 1]
# along x, so pairs within one lattice constant beyond the cutoff can enter.
INTER_SKIN = 1.0


def build_terms(lat: TruncatedLattice, V: ThreeBodyPotential, U: TwoBodyPotential,
                intra: bool = True, inter: bool = True, touch=None,
                stencil_filter: StencilFilter | None = None) -> TermTable:
    """All terms whose atoms are stored in ``lat``.

    ``touch`` (boolean per atom) keeps only terms involving at least one
    flagged atom. ``stencil_filter(kappa, stencil)`` may drop three-body
    stencil rows (used for the nearest-interaction potential).
    """
    idx3, sid3 = [], []
    r1s, r2s, ws = [], [], []
    base = 0
    for kappa in (SUB_A, SUB_B):
        st = intra_stencil(kappa, V.rc)
        rows = np.arange(len(st.weight))
        if stencil_filter is not None:
            rows = rows[np.asarray(stencil_filter(kappa, st), dtype=bool)]
        r1s.append(st.r1)
        r2s.append(st.r2)
        ws.append(st.weight)
        if intra and len(rows):
            centres = lat.sites(UPPER, kappa).tolist() + lat.sites(LOWER, kappa).tolist()
            centres = np.array(centres, dtype=np.int64)
            c = lat.cell[centres]
            lay = lat.layer[centres][:, None]
            a1 = lat.index(lay, st.sub1[rows][None], c[:, None, 0] + st.off1[rows, 0][None],
                           c[:, None, 1] + st.off1[rows, 1][None])
            a2 = lat.index(lay, st.sub2[rows][None], c[:, None, 0] + st.off2[rows, 0][None],
                           c[:, None, 1] + st.off2[rows, 1][None])
            a0 = np.broadcast_to(centres[:, None], a1.shape)
            ok = (a1 >= 0) & (a2 >= 0)
            idx3.append(np.stack([a0[ok], a1[ok], a2[ok]], axis=1))
            sid3.append(np.broadcast_to(base + rows[None], a1.shape)[ok])
        base += len(st.weight)
    r1 = np.concatenate(r1s)
    r2 = np.concatenate(r2s)
    st3 = {"r1": np.ascontiguousarray(r1), "r2": np.ascontiguousarray(r2),
           "w": np.concatenate(ws), "v0": V.value(r1, r2)}

    idx2, sid2, xis = [], [], []
    base = 0
    for ku, kl, shift in MISFIT_ROWS:
        off, vec = bravais_within(U.planar_reach + INTER_SKIN, shift=shift)
        xis.append(vec)
        if inter:
            lows = lat.sites(LOWER, kl)
            c = lat.cell[lows]
            up = lat.index(UPPER, ku, c[:, None, 0] + off[None, :, 0], c[:, None, 1] + off[None, :, 1])
            lo = np.broadcast_to(lows[:, None], up.shape)
            ok = up >= 0
            idx2.append(np.stack([up[ok], lo[ok]], axis=1))
            sid2.append(np.broadcast_to(base + np.arange(len(vec))[None], up.shape)[ok])
        base += len(vec)
    xi = np.ascontiguousarray(np.concatenate(xis))
    st2 = {"xi": xi, "v0": U.value(xi)}

    i3 = np.concatenate(idx3) if idx3 else np.zeros((0, 3), dtype=np.int64)
    s3 = np.concatenate(sid3) if sid3 else np.zeros(0, dtype=np.int64)
    i2 = np.concatenate(idx2) if idx2 else np.zeros((0, 2), dtype=np.int64)
    s2 = np.concatenate(sid2) if sid2 else np.zeros(0, dtype=np.int64)
    if touch is not None:
        touch = np.asarray(touch, dtype=bool)
        k3 = touch[i3].any(axis=1)
        k2 = touch[i2].any(axis=1)
        i3, s3, i2, s2 = i3[k3], s3[k3], i2[k2], s2[k2]
    # group terms by their first atom for memory locality
    o3 = np.argsort(i3[:, 0], kind="stable")
    o2 = np.argsort(i2[:, 1], kind="stable")
    return TermTable(
        np.ascontiguousarray(i3[o3], dtype=np.int64), np.ascontiguousarray(s3[o3], dtype=np.int32), st3,
        np.ascontiguousarray(i2[o2], dtype=np.int64), np.ascontiguousarray(s2[o2], dtype=np.int32), st2,
        V, U,
    )


@dataclass
class DofMap:
    """Affine map from reduced dofs x to full displacements:
    u[a] = const[a] + coef[a] * x[dof[a]] (coef = 0 where dof = -1)."""

    dof: np.ndarray
    coef: np.ndarray
    const: np.ndarray
    ndof: int
    pinned: np.ndarray  # upper atoms pinned to 1/4
    paired: np.ndarray  # (m, 2) upper atoms (-1/2, +1/2) with u sum 1/2
    free: np.ndarray    # atoms owning a dof, in dof order

    def full(self, x):
        x = np.asarray(x, dtype=float)
        xe = np.concatenate([x, [0.0]])
        return self.const + self.coef * xe[self.dof]

    def expand(self, v):
        """Linear part only: coef * v[dof]."""
        ve = np.concatenate([np.asarray(v, dtype=float), [0.0]])
        return self.coef * ve[self.dof]

    def reduce(self, g):
        m = self.dof >= 0
        return np.bincount(self.dof[m], self.coef[m] * g[m], minlength=self.ndof)

    def restrict(self, u):
        """Dof values of a full field (read from the owning atoms)."""
        return np.asarray(u, dtype=float)[self.free] / self.coef[self.free]

    @property
    def adc_count(self) -> int:
        return len(self.pinned) + len(self.paired)


def build_dofmap(lat: TruncatedLattice, upper_profile: Callable[[np.ndarray], np.ndarray],
                 free_halfwidth: float | None = None) -> DofMap:
    """Constrained parametrisation of the window.

    ``upper_profile(x)`` gives the clamped upper-layer displacement at
    physical position x. Upper atoms with |x| <= free_halfwidth (default
    L - 2 R_cut) are unknowns, apart from the ADC atoms.
    """
    n = lat.n_atoms
    x = lat.pos[:, 0]
    if free_halfwidth is None:
        free_halfwidth = lat.L - 2.0 * lat.R_cut
    upper = lat.layer == UPPER
    dof = np.full(n, -1, dtype=np.int64)
    coef = np.zeros(n)
    const = np.zeros(n)

    pinned = np.nonzero(upper & (np.abs(x) < ADC_TOL))[0]
    minus = np.nonzero(upper & (np.abs(x + 0.5) < ADC_TOL))[0]
    plus = lat.index(UPPER, lat.kappa[minus], lat.cell[minus, 0] + 1, lat.cell[minus, 1])
    if np.any(plus < 0):
        raise ValueError("a row has no atoms straddling x = 0")
    n_rows = len({(k, v2) for k, v2 in zip(lat.kappa[upper], lat.cell[upper, 1])})
    if len(pinned) + len(minus) != n_rows:
        raise ValueError("ADC classification does not cover every row exactly once")

    free = upper & (np.abs(x) <= free_halfwidth + 1e-9)
    free[pinned] = False
    free[minus] = False
    if not free[plus].all():
        raise ValueError("window too small for the ADC pairs")
    owners = np.nonzero(free)[0]
    dof[owners] = np.arange(len(owners))
    coef[owners] = 1.0
    const[pinned] = 0.25
    dof[minus] = dof[plus]
    coef[minus] = -1.0
    const[minus] = 0.5
    clamp = upper & (dof < 0)
    clamp[pinned] = False
    const[clamp] = upper_profile(x[clamp])

    low = np.nonzero(lat.layer == LOWER)[0]
    partner = lat.index(UPPER, lat.kappa[low], lat.cell[low, 0], lat.cell[low, 1])
    have = partner >= 0
    lp = low[have]
    dof[lp] = dof[partner[have]]
    coef[lp] = -coef[partner[have]]
    const[lp] = -const[partner[have]]
    lm = low[~have]
    # the upper partner of a lower site sits 1/2 to its left
    const[lm] = -upper_profile(x[lm] - 0.5)
    return DofMap(dof=dof, coef=coef, const=const, ndof=len(owners), pinned=pinned,
                  paired=np.stack([minus, plus], axis=1), free=owners)


def bandwidth(tab: TermTable, dmap: DofMap) -> int:
    """Largest dof distance coupled by a single term."""
    bw = 0
    for idx in (tab.idx3, tab.idx2):
        if len(idx) == 0:
            continue
        d = dmap.dof[idx]
        big = np.where(d >= 0, d, -1).max(axis=1)
        small = np.where(d >= 0, d, np.iinfo(np.int64).max).min(axis=1)
        ok = big >= 0
        if ok.any():
            bw = max(bw, int((big[ok] - small[ok]).max()))
    return bw


def factor_banded(ab: np.ndarray, max_tries: int = 40):
    """Cholesky of an upper-band matrix, shifting the diagonal until it succeeds.

    Returns (factor, shift)."""
    diag = np.abs(ab[-1]).max() if ab.size else 1.0
    shift = 0.0
    for _ in range(max_tries):
        work = ab.copy()
        work[-1] += shift
        try:
            return linalg.cholesky_banded(work, lower=False), shift
        except linalg.LinAlgError:
            shift = max(2.0 * shift, 1e-8 * diag)
    raise SolverError("could not make the reduced Hessian positive definite")


@dataclass
class NewtonResult:
    x: np.ndarray
    energy: float
    residual: float
    history: list = field(default_factory=list)
    iterations: int = 0
    shifts: list = field(default_factory=list)


class AtomisticModel:
    """Rescaled atomistic energy on a truncated window with eliminated constraints."""

    def __init__(self, lat: TruncatedLattice, V: ThreeBodyPotential, U: TwoBodyPotential, eps: float,
                 profile: Callable[[np.ndarray], np.ndarray], backend: str | None = None,
                 free_halfwidth: float | None = None, restrict_terms: bool = True):
        """``profile(x_rescaled)`` is the PN disregistry phi; clamped upper atoms
        take phi(eps x)/2."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.lat = lat
        self.V = V
        self.U = U
        self.eps = float(eps)
        self.profile = profile
        self.be = backend_for(V, U, backend)
        self.dmap = build_dofmap(lat, self.upper_sample, free_halfwidth)
        touch = (self.dmap.dof >= 0) if restrict_terms else None
        self.tab = build_terms(lat, V, U, touch=touch)
        self.bw = max(bandwidth(self.tab, self.dmap), 1)
        self.y_length = self.eps * SQRT3 * lat.n_y
        self._h3_ref = None
        self._gram = None

    # sampling of the continuum solution
    def upper_sample(self, x_phys):
        return 0.5 * self.profile(self.eps * np.asarray(x_phys, dtype=float))

    def sampled_dofs(self) -> np.ndarray:
        """Dofs of the PN solution sampled at the upper atoms."""
        owners = self.dmap.free
        return self.upper_sample(self.lat.pos[owners, 0])

    @property
    def ndof(self) -> int:
        return self.dmap.ndof

    # energy and derivatives, all divided by the rescaled y-length
    def energy(self, x) -> float:
        E = self.be.evaluate(self.dmap.full(x), self.tab, 0)[0]
        if not np.isfinite(E):
            raise FloatingPointError("non-finite energy (atom collision)")
        return E / self.y_length

    def gradient(self, x) -> np.ndarray:
        g = self.be.evaluate(self.dmap.full(x), self.tab, 1)[1]
        return self.dmap.reduce(g) / self.y_length

    def hessian_apply(self, x, v) -> np.ndarray:
        _, _, h3, h2 = self.be.evaluate(self.dmap.full(x), self.tab, 2)
        hv = self.be.hessvec(self.tab, h3, h2, self.dmap.expand(v))
        return self.dmap.reduce(hv) / self.y_length

    def hessian_band(self, x) -> np.ndarray:
        """Reduced Hessian (divided by the y-length) in upper band storage."""
        _, _, h3, h2 = self.be.evaluate(self.dmap.full(x), self.tab, 2)
        return self._band(h3, h2) / self.y_length

    def _band(self, h3, h2):
        return self.be.band_assemble(self.tab, np.ascontiguousarray(h3), np.ascontiguousarray(h2),
                                     self.dmap.dof, self.dmap.coef, self.ndof, self.bw)

    def forces(self, x) -> np.ndarray:
        """Unscaled reduced gradient: per-dof force on the lattice."""
        return self.gradient(x) * self.y_length

    # Newton solver
    def solve(self, x0=None, tol: float = 1e-10, krylov_tol: float = 1e-8, max_iter: int = 50,
              verbose: bool = False) -> NewtonResult:
        """Newton iteration on the reduced energy, seeded by the sampled PN solution.

        Each step solves H p = -g by preconditioned CG (preconditioner: banded
        Cholesky of the assembled reduced Hessian, shifted if indefinite)
        and is followed by a backtracking line search on the energy.
        ``tol`` bounds the max-norm of the unscaled forces."""
        x = self.sampled_dofs() if x0 is None else np.array(x0, dtype=float)
        res = NewtonResult(x=x, energy=float("nan"), residual=float("inf"))
        for it in range(max_iter + 1):
            E, gf, h3, h2 = self.be.evaluate(self.dmap.full(x), self.tab, 2)
            g = self.dmap.reduce(gf)
            r = float(np.max(np.abs(g))) if len(g) else 0.0
            res.history.append(r)
            res.energy = E / self.y_length
            res.residual = r
            res.x = x
            res.iterations = it
            if verbose:
                print(f"newton {it}: E={res.energy:.15e} |g|inf={r:.3e}")
            if r <= tol:
                return res
            if it == max_iter:
                break
            ab = self._band(h3, h2)
            chol, shift = factor_banded(ab)
            res.shifts.append(shift)
            if shift == 0.0:
                op = LinearOperator((self.ndof, self.ndof), dtype=float,
                                    matvec=lambda v: self.dmap.reduce(
                                        self.be.hessvec(self.tab, h3, h2, self.dmap.expand(v))))
                pre = LinearOperator((self.ndof, self.ndof), dtype=float,
                                     matvec=lambda v: linalg.cho_solve_banded((chol, False), v))
                p, info = cg(op, -g, rtol=krylov_tol, atol=0.0, M=pre, maxiter=200)
                if info != 0:
                    p = -linalg.cho_solve_banded((chol, False), g)
            else:
                p = -linalg.cho_solve_banded((chol, False), g)
            x = self._line_search(x, E, g, p)
        raise SolverError(f"Newton did not converge in {max_iter} iterations (residual {r:.3e})", x, r)

    def _line_search(self, x, E0, g, p, c1: float = 1e-4, max_halvings: int = 40):
        slope = float(g @ p)
        if slope >= 0:  # not a descent direction, use the gradient
            p = -g
            slope = -float(g @ g)
        # energy differences below this level are rounding noise
        noise = 1e-13 * (abs(E0) + 1e-3 * self.tab.n_terms)
        t = 1.0
        for _ in range(max_halvings):
            xt = x + t * p
            Et = self.be.evaluate(self.dmap.full(xt), self.tab, 0)[0]
            if np.isfinite(Et) and Et <= E0 + c1 * t * slope + noise:
                return xt
            t *= 0.5
        raise SolverError("line search failed", x, float(np.max(np.abs(g))))

    # norms
    def _reference_h3(self):
        if self._h3_ref is None:
            zero = np.zeros(self.lat.n_atoms)
            self._h3_ref = self.be.evaluate(zero, self.tab, 2)[2]
        return self._h3_ref

    def perp_weight(self) -> np.ndarray:
        """Per dof: sum over upper atoms a with stored lower partner b of
        (coef_a - coef_b)^2; f_perp of a dof direction."""
        lat, d = self.lat, self.dmap
        up = np.nonzero((lat.layer == UPPER) & (d.dof >= 0))[0]
        low = lat.index(LOWER, lat.kappa[up], lat.cell[up, 0], lat.cell[up, 1])
        cb = np.where(low >= 0, d.coef[np.maximum(low, 0)], 0.0)
        return np.bincount(d.dof[up], (d.coef[up] - cb) ** 2, minlength=self.ndof)

    def norm_sq_full(self, f_full) -> float:
        """||f||^2 in X_eps for a full field f that vanishes off the dofs."""
        f_full = np.asarray(f_full, dtype=float)
        h3 = self._reference_h3()
        hv = self.be.hessvec(self.tab, h3, np.zeros(len(self.tab.idx2)), f_full)
        elastic = 0.5 * float(f_full @ hv)
        lat = self.lat
        up = np.nonzero(lat.layer == UPPER)[0]
        low = lat.index(LOWER, lat.kappa[up], lat.cell[up, 0], lat.cell[up, 1])
        ok = low >= 0
        perp = f_full[up[ok]] - f_full[low[ok]]
        return (elastic + self.eps**2 * float(perp @ perp)) / self.y_length

    def norm(self, dx) -> float:
        """X_eps norm of a dof-space perturbation."""
        return float(np.sqrt(max(self.norm_sq_full(self.dmap.expand(dx)), 0.0)))

    def gram_band(self) -> np.ndarray:
        """X_eps Gram matrix on the dofs (times the y-length), upper band storage."""
        if self._gram is None:
            h3 = 0.5 * self._reference_h3()
            ab = self._band(h3, np.zeros(len(self.tab.idx2)))
            ab[-1] += self.eps**2 * self.perp_weight()
            self._gram = ab
        return self._gram

    def dual_norm(self, g_scaled) -> float:
        """X_eps dual norm of a rescaled reduced gradient (a functional on the dofs)."""
        M = self.gram_band() / self.y_length
        chol = linalg.cholesky_banded(M, lower=False)
        r = linalg.cho_solve_banded((chol, False), g_scaled)
        return float(np.sqrt(max(float(g_scaled @ r), 0.0)))

    def consistency_residual(self) -> float:
        """Dual norm of the first variation at the sampled PN solution."""
        return self.dual_norm(self.gradient(self.sampled_dofs()))

    def error_norm(self, x) -> float:
        """||v_eps - v||_{X_eps} between a dof vector and the sampled PN solution."""
        return self.norm(np.asarray(x) - self.sampled_dofs())

    def lambda_min(self, x, tol: float = 1e-10):
        """Smallest eigenvalue of the reduced Hessian (divided by the y-length),
        by Lanczos on the inverse. Returns (lambda, residual norm)."""
        ab = self.hessian_band(x)
        n = self.ndof
        full_mv = lambda v: self._band_matvec(ab, v)
        try:
            chol = linalg.cholesky_banded(ab, lower=False)
        except linalg.LinAlgError:
            op = LinearOperator((n, n), dtype=float, matvec=full_mv)
            vals, vecs = eigsh(op, k=1, which="SA", tol=tol)
            lam = float(vals[0])
        else:
            inv = LinearOperator((n, n), dtype=float,
                                 matvec=lambda v: linalg.cho_solve_banded((chol, False), v))
            vals, vecs = eigsh(inv, k=1, which="LA", tol=tol)
            lam = 1.0 / float(vals[0])
        v = vecs[:, 0]
        resid = float(np.linalg.norm(full_mv(v) - lam * v))
        return lam, resid

    @staticmethod
    def _band_matvec(ab, v):
        bw = ab.shape[0] - 1
        n = len(v)
        out = ab[-1] * v
        for k in range(1, bw + 1):
            d = ab[bw - k, k:]
            out[:-k] += d * v[k:]
            out[k:] += d * v[:-k]
        return out

    # output
    def field_rows(self, x):
        """Rows (cell_i, cell_j, sublattice, layer, x, y, u) for every stored atom."""
        u = self.dmap.full(x)
        lat = self.lat
        return [(int(c[0]), int(c[1]), "AB"[k], "+-"[l], float(p[0]), float(p[1]), float(v))
                for c, k, l, p, v in zip(lat.cell, lat.kappa, lat.layer, lat.pos, u)]

    def checkpoint_params(self) -> np.ndarray:
        lat = self.lat
        return np.array([1.0, self.U.dz, lat.L, float(lat.n_y), lat.R_cut, self.eps])


def write_checkpoint(path, params, x) -> None:
    """Binary checkpoint: magic, parameter count and floats, dof count, dofs (little-endian)."""
    params = np.asarray(params, dtype="<f8")
    x = np.asarray(x, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<q", len(params)))
        fh.write(params.tobytes())
        fh.write(struct.pack("<q", len(x)))
        fh.write(x.tobytes())


def read_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    pos = 5
    (npar,) = struct.unpack_from("<q", data, pos)
    pos += 8
    params = np.frombuffer(data, dtype="<f8", count=npar, offset=pos).copy()
    pos += 8 * npar
    (n,) = struct.unpack_from("<q", data, pos)
    pos += 8
    x = np.frombuffer(data, dtype="<f8", count=n, offset=pos).copy()
    if pos + 8 * n != len(data):
        raise ValueError("truncated or oversized checkpoint")
    return params, x
