# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see ``_pykernels`` for the contract."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite

cnp.import_array()

DEF DIVERGENCE_LIMIT = 1e150


cdef int _cholesky(double[:, ::1] S, Py_ssize_t p) noexcept nogil:
    """In-place lower Cholesky factor; returns 0 on success."""
    cdef Py_ssize_t i, j, l
    cdef double s
    for j in range(p):
        s = S[j, j]
        for l in range(j):
            s -= S[j, l] * S[j, l]
        if not (s > 0.0):
            return 1
        S[j, j] = sqrt(s)
        for i in range(j + 1, p):
            s = S[i, j]
            for l in range(j):
                s -= S[i, l] * S[j, l]
            S[i, j] = s / S[j, j]
    return 0


cdef void _chol_solve(double[:, ::1] L, double[:, ::1] X, Py_ssize_t p, Py_ssize_t ncol) noexcept nogil:
    """Solve L L^T Y = X in place for every column of X."""
    cdef Py_ssize_t i, l, c
    cdef double s
    for c in range(ncol):
        for i in range(p):
            s = X[i, c]
            for l in range(i):
                s -= L[i, l] * X[l, c]
            X[i, c] = s / L[i, i]
        for i in range(p - 1, -1, -1):
            s = X[i, c]
            for l in range(i + 1, p):
                s -= L[l, i] * X[l, c]
            X[i, c] = s / L[i, i]


def dare_value_iteration(A_in, B_in, Q_in, R_in, double tol, Py_ssize_t max_iter):
    cdef double[:, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(B_in, dtype=np.float64)
    cdef double[:, ::1] Q = np.ascontiguousarray(Q_in, dtype=np.float64)
    cdef double[:, ::1] R = np.ascontiguousarray(R_in, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], p = B.shape[1]
    P_arr = np.array(Q, dtype=np.float64, copy=True)
    cdef double[:, ::1] P = P_arr
    cdef double[:, ::1] Pn = np.empty((n, n))
    cdef double[:, ::1] PA = np.empty((n, n))
    cdef double[:, ::1] PB = np.empty((n, p))
    cdef double[:, ::1] S = np.empty((p, p))
    cdef double[:, ::1] G = np.empty((p, n))
    cdef double[:, ::1] X = np.empty((p, n))
    cdef Py_ssize_t it, i, j, l
    cdef double s, delta = np.inf, scale, d
    cdef int status = 1, done = 0
    it = 0
    with nogil:
        while it < max_iter:
            it += 1
            for i in range(n):
                for j in range(n):
                    s = 0.0
                    for l in range(n):
                        s += P[i, l] * A[l, j]
                    PA[i, j] = s
                for j in range(p):
                    s = 0.0
                    for l in range(n):
                        s += P[i, l] * B[l, j]
                    PB[i, j] = s
            for i in range(p):
                for j in range(p):
                    s = R[i, j]
                    for l in range(n):
                        s += B[l, i] * PB[l, j]
                    S[i, j] = s
                for j in range(n):
                    s = 0.0
                    for l in range(n):
                        s += B[l, i] * PA[l, j]
                    G[i, j] = s
                    X[i, j] = s
            if _cholesky(S, p) != 0:
                status = 3
                break
            _chol_solve(S, X, p, n)
            for i in range(n):
                for j in range(n):
                    s = Q[i, j]
                    for l in range(n):
                        s += A[l, i] * PA[l, j]
                    for l in range(p):
                        s -= G[l, i] * X[l, j]
                    Pn[i, j] = s
            delta = 0.0
            scale = 0.0
            for i in range(n):
                for j in range(i, n):
                    s = 0.5 * (Pn[i, j] + Pn[j, i])
                    Pn[i, j] = s
                    Pn[j, i] = s
            for i in range(n):
                for j in range(n):
                    d = Pn[i, j] - P[i, j]
                    delta += d * d
                    scale += Pn[i, j] * Pn[i, j]
                    P[i, j] = Pn[i, j]
            delta = sqrt(delta)
            scale = sqrt(scale)
            if not isfinite(scale) or scale > DIVERGENCE_LIMIT:
                status = 2
                break
            if delta <= tol * (scale if scale > 1.0 else 1.0):
                status = 0
                break
    return P_arr, int(it), int(status), float(delta)


def simulate(A_in, B_in, K_in, epoch_in, eta_in, xi_in, double guard):
    cdef double[:, :, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef double[:, :, ::1] B = np.ascontiguousarray(B_in, dtype=np.float64)
    cdef double[:, :, ::1] K = np.ascontiguousarray(K_in, dtype=np.float64)
    cdef long long[::1] epoch = np.ascontiguousarray(epoch_in, dtype=np.int64)
    cdef double[:, :, ::1] eta = np.ascontiguousarray(eta_in, dtype=np.float64)
    cdef double[:, :, ::1] xi = np.ascontiguousarray(xi_in, dtype=np.float64)
    cdef Py_ssize_t m = A.shape[0], dx = A.shape[1], du = B.shape[2]
    cdef Py_ssize_t T = epoch.shape[0]
    Z_arr = np.empty((m, T, dx + du))
    Xn_arr = np.empty((m, T, dx))
    sat_arr = np.zeros(m, dtype=np.uint8)
    cdef double[:, :, ::1] Z = Z_arr
    cdef double[:, :, ::1] Xn = Xn_arr
    cdef unsigned char[::1] sat = sat_arr
    cdef double[::1] x = np.empty(dx)
    cdef double[::1] u = np.empty(du)
    cdef Py_ssize_t i, t, a, b, e
    cdef double s
    with nogil:
        for i in range(m):
            for a in range(dx):
                x[a] = 0.0
            for t in range(T):
                e = epoch[t]
                for a in range(du):
                    s = eta[i, t, a]
                    for b in range(dx):
                        s += K[e, a, b] * x[b]
                    u[a] = s
                for a in range(dx):
                    Z[i, t, a] = x[a]
                for a in range(du):
                    Z[i, t, dx + a] = u[a]
                for a in range(dx):
                    s = xi[i, t, a]
                    for b in range(dx):
                        s += A[i, a, b] * Z[i, t, b]
                    for b in range(du):
                        s += B[i, a, b] * u[b]
                    Xn[i, t, a] = s
                for a in range(dx):
                    x[a] = Xn[i, t, a]
                    if not (fabs(x[a]) <= guard):
                        sat[i] = 1
    return Z_arr, Xn_arr, sat_arr


def weighted_residuals(theta_in, Z_in, Xn_in, w_in):
    cdef double[:, :, ::1] theta = np.ascontiguousarray(theta_in, dtype=np.float64)
    cdef double[:, :, ::1] Z = np.ascontiguousarray(Z_in, dtype=np.float64)
    cdef double[:, :, ::1] Xn = np.ascontiguousarray(Xn_in, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef Py_ssize_t m = Z.shape[0], T = Z.shape[1], n = Z.shape[2], dx = Xn.shape[2]
    out_arr = np.zeros(m)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, t, a, b
    cdef double s, r, acc
    with nogil:
        for i in range(m):
            acc = 0.0
            for t in range(T):
                s = 0.0
                for a in range(dx):
                    r = Xn[i, t, a]
                    for b in range(n):
                        r -= theta[i, b, a] * Z[i, t, b]
                    s += r * r
                acc += w[i, t] * s
            out[i] = acc
    return out_arr
