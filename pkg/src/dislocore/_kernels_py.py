"""Pure numpy implementation of the atomistic kernels.

Terms are stored as index arrays into the full displacement vector u plus a
stencil id selecting reference vectors, weights and reference values.
Three-body term t: w * V(r1 + (u[i1] - u[i0]) e_x, r2 + (u[i2] - u[i0]) e_x).
Pair term t: V_d(xi + (u[i] - u[j]) e_x) with i upper, j lower.
"""

from __future__ import annotations

import numpy as np

from .potentials import ThreeBodyPotential, TwoBodyPotential

NAME = "numpy"
CHUNK = 200_000


def _three_body_chunk(u, idx, sid, st, V: ThreeBodyPotential, order):
    d1 = u[idx[:, 1]] - u[idx[:, 0]]
    d2 = u[idx[:, 2]] - u[idx[:, 0]]
    r1 = st["r1"][sid].copy()
    r2 = st["r2"][sid].copy()
    r1[:, 0] += d1
    r2[:, 0] += d2
    w = st["w"][sid]
    out = V.evaluate(r1, r2, order=order)
    e = w * (out[0] - st["v0"][sid])
    if order == 0:
        return e, None, None
    g = np.stack([w * out[1][:, 0], w * out[2][:, 0]], axis=1)
    if order == 1:
        return e, g, None
    h = np.stack([w * out[3][:, 0, 0], w * out[4][:, 0, 0], w * out[5][:, 0, 0]], axis=1)
    return e, g, h


def _pair_chunk(u, idx, sid, st, U: TwoBodyPotential, order):
    xi = st["xi"][sid].copy()
    xi[:, 0] += u[idx[:, 0]] - u[idx[:, 1]]
    out = U.evaluate(xi, order=order)
    e = out[0] - st["v0"][sid]
    if order == 0:
        return e, None, None
    g = out[1][:, 0]
    if order == 1:
        return e, g, None
    return e, g, out[2][:, 0, 0]


def evaluate(u, tab, order: int = 1):
    """Energy, full gradient (order >= 1) and per-term Hessian coefficients
    (order 2): h3 with columns (d11, d12, d22) and h2."""
    n = len(u)
    E = 0.0
    grad = np.zeros(n) if order >= 1 else None
    h3 = np.empty((len(tab.idx3), 3)) if order >= 2 else None
    h2 = np.empty(len(tab.idx2)) if order >= 2 else None
    for a in range(0, len(tab.idx3), CHUNK):
        sl = slice(a, a + CHUNK)
        idx = tab.idx3[sl]
        e, g, h = _three_body_chunk(u, idx, tab.sid3[sl], tab.st3, tab.V, order)
        E += e.sum()
        if order >= 1:
            grad += np.bincount(idx[:, 1], g[:, 0], n) + np.bincount(idx[:, 2], g[:, 1], n)
            grad -= np.bincount(idx[:, 0], g[:, 0] + g[:, 1], n)
        if order >= 2:
            h3[sl] = h
    for a in range(0, len(tab.idx2), CHUNK):
        sl = slice(a, a + CHUNK)
        idx = tab.idx2[sl]
        e, g, h = _pair_chunk(u, idx, tab.sid2[sl], tab.st2, tab.U, order)
        E += e.sum()
        if order >= 1:
            grad += np.bincount(idx[:, 0], g, n) - np.bincount(idx[:, 1], g, n)
        if order >= 2:
            h2[sl] = h
    return E, grad, h3, h2


def hessvec(tab, h3, h2, v):
    """Full Hessian applied to v from precomputed per-term coefficients."""
    n = len(v)
    out = np.zeros(n)
    for a in range(0, len(tab.idx3), CHUNK):
        sl = slice(a, a + CHUNK)
        idx = tab.idx3[sl]
        h = h3[sl]
        d1 = v[idx[:, 1]] - v[idx[:, 0]]
        d2 = v[idx[:, 2]] - v[idx[:, 0]]
        f1 = h[:, 0] * d1 + h[:, 1] * d2
        f2 = h[:, 1] * d1 + h[:, 2] * d2
        out += np.bincount(idx[:, 1], f1, n) + np.bincount(idx[:, 2], f2, n) - np.bincount(idx[:, 0], f1 + f2, n)
    for a in range(0, len(tab.idx2), CHUNK):
        sl = slice(a, a + CHUNK)
        idx = tab.idx2[sl]
        f = h2[sl] * (v[idx[:, 0]] - v[idx[:, 1]])
        out += np.bincount(idx[:, 0], f, n) - np.bincount(idx[:, 1], f, n)
    return out


_LOCAL3 = [  # (a, b, coefficients of d11, d12, d22) of the local 3x3 block
    (0, 0, (1.0, 2.0, 1.0)), (0, 1, (-1.0, -1.0, 0.0)), (0, 2, (0.0, -1.0, -1.0)),
    (1, 0, (-1.0, -1.0, 0.0)), (1, 1, (1.0, 0.0, 0.0)), (1, 2, (0.0, 1.0, 0.0)),
    (2, 0, (0.0, -1.0, -1.0)), (2, 1, (0.0, 1.0, 0.0)), (2, 2, (0.0, 0.0, 1.0)),
]


def band_assemble(tab, h3, h2, dof, coef, ndof: int, bw: int):
    """Reduced Hessian P^T H P in LAPACK upper band storage (bw + 1, ndof).

    Full atom a maps to dof[a] (or -1) with weight coef[a].
    """
    flat = np.zeros((bw + 1) * ndof)

    def add(da, db, val):
        ok = (da >= 0) & (db >= 0) & (da <= db)
        row = bw + da[ok] - db[ok]
        np.add.at(flat, row * ndof + db[ok], val[ok])

    for a in range(0, len(tab.idx3), CHUNK):
        sl = slice(a, a + CHUNK)
        idx = tab.idx3[sl]
        h = h3[sl]
        for i, j, (c11, c12, c22) in _LOCAL3:
            val = c11 * h[:, 0] + c12 * h[:, 1] + c22 * h[:, 2]
            add(dof[idx[:, i]], dof[idx[:, j]], coef[idx[:, i]] * coef[idx[:, j]] * val)
    for a in range(0, len(tab.idx2), CHUNK):
        sl = slice(a, a + CHUNK)
        idx = tab.idx2[sl]
        h = h2[sl]
        for i, j, s in ((0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)):
            add(dof[idx[:, i]], dof[idx[:, j]], s * coef[idx[:, i]] * coef[idx[:, j]] * h)
    return flat.reshape(bw + 1, ndof)
