# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled atomistic kernels; same interface as the numpy fallback."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, sqrt

NAME = "cython"
_threads = 1


def set_threads(int n):
    global _threads
    _threads = max(1, n)


cdef inline void _radial(double r, double gam, double rc,
                         double* h, double* dh, double* ddh) noexcept nogil:
    cdef double dr, g1, g2, e
    if r >= rc:
        h[0] = 0.0
        dh[0] = 0.0
        ddh[0] = 0.0
        return
    dr = r - rc
    e = exp(gam / dr)
    g1 = -gam / (dr * dr)
    g2 = 2.0 * gam / (dr * dr * dr)
    h[0] = e
    dh[0] = e * g1
    ddh[0] = e * (g2 + g1 * g1)


cdef inline void _sw(double x1, double y1, double x2, double y2,
                     double lam, double gam, double rc, int order,
                     double* out) noexcept nogil:
    # out: V, dV/dx1, dV/dx2, d2V/dx1dx1, d2V/dx1dx2, d2V/dx2dx2
    cdef double n1 = sqrt(x1 * x1 + y1 * y1)
    cdef double n2 = sqrt(x2 * x2 + y2 * y2)
    cdef double h1, dh1, ddh1, h2, dh2, ddh2
    _radial(n1, gam, rc, &h1, &dh1, &ddh1)
    _radial(n2, gam, rc, &h2, &dh2, &ddh2)
    cdef double u1x = x1 / n1, u1y = y1 / n1, u2x = x2 / n2, u2y = y2 / n2
    cdef double c = u1x * u2x + u1y * u2y
    cdef double q = (c + 1.0 / 3.0) * (c + 1.0 / 3.0)
    cdef double dq = 2.0 * (c + 1.0 / 3.0)
    out[0] = lam * h1 * h2 * q
    if order == 0:
        return
    cdef double a1x = (u2x - c * u1x) / n1
    cdef double a2x = (u1x - c * u2x) / n2
    out[1] = lam * h2 * (dh1 * u1x * q + h1 * dq * a1x)
    out[2] = lam * h1 * (dh2 * u2x * q + h2 * dq * a2x)
    if order == 1:
        return
    cdef double c11 = -2.0 * u1x * a1x / n1 - c * (1.0 - u1x * u1x) / (n1 * n1)
    cdef double c22 = -2.0 * u2x * a2x / n2 - c * (1.0 - u2x * u2x) / (n2 * n2)
    cdef double c12 = (1.0 - u1x * u1x - u2x * u2x + c * u1x * u2x) / (n1 * n2)
    cdef double hh1 = ddh1 * u1x * u1x + (dh1 / n1) * (1.0 - u1x * u1x)
    cdef double hh2 = ddh2 * u2x * u2x + (dh2 / n2) * (1.0 - u2x * u2x)
    out[3] = lam * h2 * (hh1 * q + 2.0 * dh1 * dq * u1x * a1x + h1 * (2.0 * a1x * a1x + dq * c11))
    out[5] = lam * h1 * (hh2 * q + 2.0 * dh2 * dq * u2x * a2x + h2 * (2.0 * a2x * a2x + dq * c22))
    out[4] = lam * (dh1 * dh2 * q * u1x * u2x + dh1 * h2 * dq * u1x * a2x
                    + h1 * dh2 * dq * a1x * u2x + h1 * h2 * (2.0 * a1x * a2x + dq * c12))


cdef inline void _morse(double xx, double xy, double De, double c, double re, double dz,
                        double rcut, double blend, int order, double* out) noexcept nogil:
    # out: V, dV/dx, d2V/dx2 for the in-plane argument (xx, xy)
    cdef double r = sqrt(xx * xx + xy * xy + dz * dz)
    cdef double e = exp(-c * (r - re))
    cdef double m = De * ((1.0 - e) * (1.0 - e) - 1.0)
    cdef double dm = 2.0 * De * c * e * (1.0 - e)
    cdef double ddm = 2.0 * De * c * c * e * (2.0 * e - 1.0)
    cdef double t = (r - (rcut - blend)) / blend
    cdef double s = 1.0, ds = 0.0, dds = 0.0
    if t >= 1.0:
        s = 0.0
    elif t > 0.0:
        s = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
        ds = -30.0 * t * t * (1.0 - t) * (1.0 - t) / blend
        dds = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (blend * blend)
    cdef double f = m * s
    cdef double df = dm * s + m * ds
    cdef double ddf = ddm * s + 2.0 * dm * ds + m * dds
    out[0] = f
    if order == 0:
        return
    cdef double nx = xx / r
    out[1] = df * nx
    if order == 1:
        return
    out[2] = ddf * nx * nx + (df / r) * (1.0 - nx * nx)


def evaluate(double[::1] u, tab, int order=1):
    cdef long[:, ::1] idx3 = tab.idx3
    cdef int[::1] sid3 = tab.sid3
    cdef long[:, ::1] idx2 = tab.idx2
    cdef int[::1] sid2 = tab.sid2
    cdef double[:, ::1] r1 = tab.st3["r1"]
    cdef double[:, ::1] r2 = tab.st3["r2"]
    cdef double[::1] w3 = tab.st3["w"]
    cdef double[::1] v03 = tab.st3["v0"]
    cdef double[:, ::1] xi = tab.st2["xi"]
    cdef double[::1] v02 = tab.st2["v0"]
    cdef double lam = tab.V.lam, gam = tab.V.gamma, rc = tab.V.rc
    cdef double De = tab.U.De, cc = tab.U.c, re = tab.U.re, dz = tab.U.dz
    cdef double rcut = tab.U.r_cut, blend = tab.U.blend
    cdef Py_ssize_t n3 = idx3.shape[0], n2 = idx2.shape[0], n = u.shape[0]
    cdef Py_ssize_t t
    cdef int k, nthreads = _threads
    cdef double w
    cdef double buf[6]
    cdef double pb[3]
    e3_np = np.empty(n3)
    e2_np = np.empty(n2)
    g3_np = np.empty((n3, 2))
    g2_np = np.empty(n2)
    h3_np = np.empty((n3, 3)) if order >= 2 else np.empty((0, 3))
    h2_np = np.empty(n2) if order >= 2 else np.empty(0)
    cdef double[::1] e3 = e3_np, e2 = e2_np, g2 = g2_np, h2 = h2_np
    cdef double[:, ::1] g3 = g3_np, h3 = h3_np
    for t in prange(n3, nogil=True, num_threads=nthreads, schedule="static"):
        k = sid3[t]
        w = w3[k]
        _sw(r1[k, 0] + u[idx3[t, 1]] - u[idx3[t, 0]], r1[k, 1],
            r2[k, 0] + u[idx3[t, 2]] - u[idx3[t, 0]], r2[k, 1],
            lam, gam, rc, order, buf)
        e3[t] = w * (buf[0] - v03[k])
        if order >= 1:
            g3[t, 0] = w * buf[1]
            g3[t, 1] = w * buf[2]
        if order >= 2:
            h3[t, 0] = w * buf[3]
            h3[t, 1] = w * buf[4]
            h3[t, 2] = w * buf[5]
    for t in prange(n2, nogil=True, num_threads=nthreads, schedule="static"):
        k = sid2[t]
        _morse(xi[k, 0] + u[idx2[t, 0]] - u[idx2[t, 1]], xi[k, 1],
               De, cc, re, dz, rcut, blend, order, pb)
        e2[t] = pb[0] - v02[k]
        if order >= 1:
            g2[t] = pb[1]
        if order >= 2:
            h2[t] = pb[2]
    cdef double E = 0.0
    for t in range(n3):
        E += e3[t]
    for t in range(n2):
        E += e2[t]
    if order == 0:
        return E, None, None, None
    grad_np = np.zeros(n)
    cdef double[::1] grad = grad_np
    for t in range(n3):
        grad[idx3[t, 1]] += g3[t, 0]
        grad[idx3[t, 2]] += g3[t, 1]
        grad[idx3[t, 0]] -= g3[t, 0] + g3[t, 1]
    for t in range(n2):
        grad[idx2[t, 0]] += g2[t]
        grad[idx2[t, 1]] -= g2[t]
    if order == 1:
        return E, grad_np, None, None
    return E, grad_np, h3_np, h2_np


def hessvec(tab, double[:, ::1] h3, double[::1] h2, double[::1] v):
    cdef long[:, ::1] idx3 = tab.idx3
    cdef long[:, ::1] idx2 = tab.idx2
    cdef Py_ssize_t t, n3 = idx3.shape[0], n2 = idx2.shape[0]
    cdef double d1, d2, f1, f2, f
    out_np = np.zeros(v.shape[0])
    cdef double[::1] out = out_np
    for t in range(n3):
        d1 = v[idx3[t, 1]] - v[idx3[t, 0]]
        d2 = v[idx3[t, 2]] - v[idx3[t, 0]]
        f1 = h3[t, 0] * d1 + h3[t, 1] * d2
        f2 = h3[t, 1] * d1 + h3[t, 2] * d2
        out[idx3[t, 1]] += f1
        out[idx3[t, 2]] += f2
        out[idx3[t, 0]] -= f1 + f2
    for t in range(n2):
        f = h2[t] * (v[idx2[t, 0]] - v[idx2[t, 1]])
        out[idx2[t, 0]] += f
        out[idx2[t, 1]] -= f
    return out_np


cdef inline void _band_add(double[:, ::1] ab, long da, long db, double val, long bw) noexcept nogil:
    if da < 0 or db < 0 or da > db:
        return
    ab[bw + da - db, db] += val


def band_assemble(tab, double[:, ::1] h3, double[::1] h2, long[::1] dof, double[::1] coef,
                  long ndof, long bw):
    cdef long[:, ::1] idx3 = tab.idx3
    cdef long[:, ::1] idx2 = tab.idx2
    cdef Py_ssize_t t, n3 = idx3.shape[0], n2 = idx2.shape[0]
    cdef long a0, a1, a2, d0, d1, d2
    cdef double m0, m1, m2, p, q, r
    ab_np = np.zeros((bw + 1, ndof))
    cdef double[:, ::1] ab = ab_np
    for t in range(n3):
        a0 = idx3[t, 0]
        a1 = idx3[t, 1]
        a2 = idx3[t, 2]
        d0 = dof[a0]
        d1 = dof[a1]
        d2 = dof[a2]
        if d0 < 0 and d1 < 0 and d2 < 0:
            continue
        m0 = coef[a0]
        m1 = coef[a1]
        m2 = coef[a2]
        p = h3[t, 0]
        q = h3[t, 1]
        r = h3[t, 2]
        _band_add(ab, d0, d0, m0 * m0 * (p + 2.0 * q + r), bw)
        _band_add(ab, d0, d1, -m0 * m1 * (p + q), bw)
        _band_add(ab, d1, d0, -m0 * m1 * (p + q), bw)
        _band_add(ab, d0, d2, -m0 * m2 * (q + r), bw)
        _band_add(ab, d2, d0, -m0 * m2 * (q + r), bw)
        _band_add(ab, d1, d1, m1 * m1 * p, bw)
        _band_add(ab, d1, d2, m1 * m2 * q, bw)
        _band_add(ab, d2, d1, m1 * m2 * q, bw)
        _band_add(ab, d2, d2, m2 * m2 * r, bw)
    for t in range(n2):
        a0 = idx2[t, 0]
        a1 = idx2[t, 1]
        d0 = dof[a0]
        d1 = dof[a1]
        if d0 < 0 and d1 < 0:
            continue
        m0 = coef[a0]
        m1 = coef[a1]
        p = h2[t]
        _band_add(ab, d0, d0, m0 * m0 * p, bw)
        _band_add(ab, d0, d1, -m0 * m1 * p, bw)
        _band_add(ab, d1, d0, -m0 * m1 * p, bw)
        _band_add(ab, d1, d1, m1 * m1 * p, bw)
    return ab_np
