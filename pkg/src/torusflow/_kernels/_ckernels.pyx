# cython: language_level=3
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics.

Wave vectors are integer, so ``exp(i k.x)`` is assembled from per-point power
tables of ``exp(i x)`` and ``exp(i y)``: two sincos evaluations per point
instead of one per point and mode.
"""
import numpy as np
from libc.math cimport sin, cos, floor, M_PI

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _wrap(double d) nogil:
    cdef double t = M_PI - d
    t = t - TWO_PI * floor(t / TWO_PI)
    return M_PI - t


cdef inline void _powers(double a, Py_ssize_t K, double[::1] c, double[::1] s) noexcept nogil:
    cdef Py_ssize_t j
    cdef double c1 = cos(a), s1 = sin(a)
    c[0] = 1.0
    s[0] = 0.0
    for j in range(1, K + 1):
        c[j] = c[j - 1] * c1 - s[j - 1] * s1
        s[j] = s[j - 1] * c1 + c[j - 1] * s1


def _integer_modes(kvecs):
    ik = np.rint(kvecs).astype(np.intc)
    if not np.array_equal(ik, kvecs):
        raise ValueError("wave vectors must be integer")
    return np.ascontiguousarray(ik), int(np.abs(ik[:, 0]).max(initial=0)), int(np.abs(ik[:, 1]).max(initial=0))


def noise_displacement(const double[:, :, ::1] pos, const double[:, ::1] kvecs,
                       const double[::1] amp, const double[:, :, ::1] noise):
    cdef Py_ssize_t P = pos.shape[0], N = pos.shape[1], M = kvecs.shape[0]
    ik_arr, K1, K2 = _integer_modes(np.asarray(kvecs))
    cdef int[:, ::1] ik = ik_arr
    cdef Py_ssize_t k1max = K1, k2max = K2
    cdef double[::1] cx = np.empty(k1max + 1), sx = np.empty(k1max + 1)
    cdef double[::1] cy = np.empty(k2max + 1), sy = np.empty(k2max + 1)
    out_arr = np.zeros((P, N, 2))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, n, m
    cdef int a, b
    cdef double ca, sa, cb, sb, cph, sph, w, acc0, acc1
    with nogil:
        for p in range(P):
            for n in range(N):
                _powers(pos[p, n, 0], k1max, cx, sx)
                _powers(pos[p, n, 1], k2max, cy, sy)
                acc0 = 0.0
                acc1 = 0.0
                for m in range(M):
                    a = ik[m, 0]
                    b = ik[m, 1]
                    ca = cx[a if a >= 0 else -a]
                    sa = sx[a] if a >= 0 else -sx[-a]
                    cb = cy[b if b >= 0 else -b]
                    sb = sy[b] if b >= 0 else -sy[-b]
                    cph = ca * cb - sa * sb
                    sph = sa * cb + ca * sb
                    w = amp[m] * (cph * noise[p, m, 0] + sph * noise[p, m, 1])
                    acc0 += w * b
                    acc1 -= w * a
                out[p, n, 0] = acc0
                out[p, n, 1] = acc1
    return out_arr


def mode_integrals(const double[:, :, ::1] g, const double[:, :, ::1] gt,
                   const double[:, ::1] kvecs):
    cdef Py_ssize_t P = g.shape[0], N = g.shape[1], M = kvecs.shape[0]
    ik_arr, K1, K2 = _integer_modes(np.asarray(kvecs))
    cdef int[:, ::1] ik = ik_arr
    cdef Py_ssize_t k1max = K1, k2max = K2
    # tables: half-differences (h) and midpoints (c) per coordinate
    cdef double[::1] chx = np.empty(k1max + 1), shx = np.empty(k1max + 1)
    cdef double[::1] chy = np.empty(k2max + 1), shy = np.empty(k2max + 1)
    cdef double[::1] ccx = np.empty(k1max + 1), scx = np.empty(k1max + 1)
    cdef double[::1] ccy = np.empty(k2max + 1), scy = np.empty(k2max + 1)
    S_arr = np.zeros((P, M))
    C_arr = np.zeros((P, M))
    Q_arr = np.zeros((P, M))
    Qp_arr = np.zeros((P, M))
    cdef double[:, ::1] S = S_arr
    cdef double[:, ::1] C = C_arr
    cdef double[:, ::1] Q = Q_arr
    cdef double[:, ::1] Qp = Qp_arr
    cdef Py_ssize_t p, n, m
    cdef int a, b, aa, bb
    cdef double d0, d1, dd, kk, s, proj, sp, s2, ca, sa, cb, sb, sgn_a, sgn_b
    cdef double inv_n = 1.0 / N
    with nogil:
        for p in range(P):
            for n in range(N):
                d0 = _wrap(g[p, n, 0] - gt[p, n, 0])
                d1 = _wrap(g[p, n, 1] - gt[p, n, 1])
                dd = d0 * d0 + d1 * d1
                _powers(0.5 * d0, k1max, chx, shx)
                _powers(0.5 * d1, k2max, chy, shy)
                _powers(gt[p, n, 0] + 0.5 * d0, k1max, ccx, scx)
                _powers(gt[p, n, 1] + 0.5 * d1, k2max, ccy, scy)
                for m in range(M):
                    a = ik[m, 0]
                    b = ik[m, 1]
                    aa = a if a >= 0 else -a
                    bb = b if b >= 0 else -b
                    sgn_a = 1.0 if a >= 0 else -1.0
                    sgn_b = 1.0 if b >= 0 else -1.0
                    # sin(k.d/2)
                    s = sgn_a * shx[aa] * chy[bb] + chx[aa] * sgn_b * shy[bb]
                    proj = b * d0 - a * d1
                    sp = proj * s
                    s2 = s * s
                    ca = ccx[aa]
                    sa = sgn_a * scx[aa]
                    cb = ccy[bb]
                    sb = sgn_b * scy[bb]
                    S[p, m] += sp * (sa * cb + ca * sb)
                    C[p, m] += sp * (ca * cb - sa * sb)
                    Q[p, m] += s2
                    if dd > 0.0:
                        kk = a * a + b * b
                        Qp[p, m] += proj * proj / (dd * kk) * s2
            for m in range(M):
                S[p, m] *= inv_n
                C[p, m] *= inv_n
                Q[p, m] *= inv_n
                Qp[p, m] *= inv_n
    return S_arr, C_arr, Q_arr, Qp_arr
