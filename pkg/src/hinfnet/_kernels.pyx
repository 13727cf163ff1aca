# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 kernels for the Riccati and coupled filter-network ODEs.

Both functions mirror :mod:`hinfnet._kernels_py` argument for argument.
Matrices are dense row-major float64 arrays; the state dimension is small,
so plain loops beat BLAS call overhead here.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF OK = 0
DEF LOST_POSITIVITY = 1
DEF UNBOUNDED = 2


cdef inline void matmul(int n, const double* X, const double* Y, double* out) noexcept nogil:
    cdef int a, b, c
    cdef double acc
    for a in range(n):
        for b in range(n):
            acc = 0.0
            for c in range(n):
                acc += X[a * n + c] * Y[c * n + b]
            out[a * n + b] = acc


cdef inline void matvec(int n, const double* X, const double* v, double* out) noexcept nogil:
    cdef int a, c
    cdef double acc
    for a in range(n):
        acc = 0.0
        for c in range(n):
            acc += X[a * n + c] * v[c]
        out[a] = acc


cdef inline void riccati_rhs(int n, const double* A, const double* H, const double* S,
                             const double* Q, double* out, double* w1, double* w2) noexcept nogil:
    # out = A Q + Q A' - Q H Q + S, using symmetry of Q
    cdef int a, b
    matmul(n, A, Q, w1)
    matmul(n, Q, H, w2)
    matmul(n, w2, Q, out)
    for a in range(n):
        for b in range(n):
            out[a * n + b] = w1[a * n + b] + w1[b * n + a] - out[a * n + b] + S[a * n + b]


cdef inline void symmetrize(int n, double* Q) noexcept nogil:
    cdef int a, b
    cdef double m
    for a in range(n):
        for b in range(a + 1, n):
            m = 0.5 * (Q[a * n + b] + Q[b * n + a])
            Q[a * n + b] = m
            Q[b * n + a] = m


cdef int check_matrix(int n, const double* Q, double pd_tol, double bound_tol,
                      double* work) noexcept nogil:
    """Cholesky of ``Q - pd_tol I``; returns a status code."""
    cdef int a, b, c
    cdef double s
    for a in range(n * n):
        if fabs(Q[a]) > bound_tol or Q[a] != Q[a]:
            return UNBOUNDED
    for a in range(n * n):
        work[a] = Q[a]
    for a in range(n):
        work[a * n + a] -= pd_tol
    for a in range(n):
        s = work[a * n + a]
        for c in range(a):
            s -= work[a * n + c] * work[a * n + c]
        if s <= 0.0:
            return LOST_POSITIVITY
        s = sqrt(s)
        work[a * n + a] = s
        for b in range(a + 1, n):
            for c in range(a):
                work[b * n + a] -= work[b * n + c] * work[a * n + c]
            work[b * n + a] /= s
    return OK


def rk4_dre(const double[:, ::1] A, const double[:, ::1] H, const double[:, ::1] S, const double[:, ::1] Q0,
            double dt, Py_ssize_t nsteps, double pd_tol, double bound_tol):
    """Integrate ``dQ/dt = A Q + Q A' - Q H Q + S`` with classical RK4.

    Returns ``(Qs, qdot, status, steps)``: samples on the step grid, the
    sup-norm of ``dQ/dt`` at each sample, a status code (0 ok, 1 lost
    positivity, 2 unbounded) and the number of completed steps.
    """
    cdef int n = A.shape[0]
    cdef int nn = n * n
    Qs_arr = np.zeros((nsteps + 1, n, n))
    qd_arr = np.full(nsteps + 1, np.nan)
    cdef double[:, :, ::1] Qs = Qs_arr
    cdef double[::1] qd = qd_arr
    cdef double* buf = <double*> malloc(9 * nn * sizeof(double))
    cdef double *Q = buf
    cdef double *k1 = buf + nn
    cdef double *k2 = buf + 2 * nn
    cdef double *k3 = buf + 3 * nn
    cdef double *k4 = buf + 4 * nn
    cdef double *tmp = buf + 5 * nn
    cdef double *w1 = buf + 6 * nn
    cdef double *w2 = buf + 7 * nn
    cdef double *work = buf + 8 * nn
    cdef const double* pA = &A[0, 0]
    cdef const double* pH = &H[0, 0]
    cdef const double* pS = &S[0, 0]
    cdef Py_ssize_t k
    cdef int a, status = OK
    cdef double nrm
    try:
        with nogil:
            for a in range(nn):
                Q[a] = Q0[a // n, a % n]
            symmetrize(n, Q)
            status = check_matrix(n, Q, pd_tol, bound_tol, work)
            for a in range(nn):
                Qs[0, a // n, a % n] = Q[a]
            k = 0
            while status == OK and k < nsteps:
                riccati_rhs(n, pA, pH, pS, Q, k1, w1, w2)
                nrm = 0.0
                for a in range(nn):
                    if fabs(k1[a]) > nrm:
                        nrm = fabs(k1[a])
                qd[k] = nrm
                for a in range(nn):
                    tmp[a] = Q[a] + 0.5 * dt * k1[a]
                riccati_rhs(n, pA, pH, pS, tmp, k2, w1, w2)
                for a in range(nn):
                    tmp[a] = Q[a] + 0.5 * dt * k2[a]
                riccati_rhs(n, pA, pH, pS, tmp, k3, w1, w2)
                for a in range(nn):
                    tmp[a] = Q[a] + dt * k3[a]
                riccati_rhs(n, pA, pH, pS, tmp, k4, w1, w2)
                for a in range(nn):
                    Q[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
                symmetrize(n, Q)
                k += 1
                for a in range(nn):
                    Qs[k, a // n, a % n] = Q[a]
                status = check_matrix(n, Q, pd_tol, bound_tol, work)
            if status == OK:
                riccati_rhs(n, pA, pH, pS, Q, k1, w1, w2)
                nrm = 0.0
                for a in range(nn):
                    if fabs(k1[a]) > nrm:
                        nrm = fabs(k1[a])
                qd[k] = nrm
    finally:
        free(buf)
    return Qs_arr[:k + 1], qd_arr[:k + 1], status, k


cdef void network_rhs(int n, int N, int nl, const double* A, const double* Bw,
                      const double* Mx, const double* Kx, const double* H, const double* S,
                      const long* li, const long* lj, const double* Nl, const double* u,
                      const double* x, const double* xh, const double* Q,
                      double* dx, double* dxh, double* dQ,
                      double* inner, double* v, double* w1, double* w2) noexcept nogil:
    cdef int i, l, a
    cdef int nn = n * n
    matvec(n, A, x, dx)
    for a in range(n):
        dx[a] += Bw[a]
    for i in range(N):
        matvec(n, Mx + i * nn, x, inner + i * n)
        matvec(n, Kx + i * nn, xh + i * n, v)
        for a in range(n):
            inner[i * n + a] += u[i * n + a] - v[a]
    for l in range(nl):
        matvec(n, Nl + l * nn, xh + lj[l] * n, v)
        for a in range(n):
            inner[li[l] * n + a] += v[a]
    for i in range(N):
        matvec(n, A, xh + i * n, dxh + i * n)
        matvec(n, Q + i * nn, inner + i * n, v)
        for a in range(n):
            dxh[i * n + a] += v[a]
        riccati_rhs(n, A, H + i * nn, S + i * nn, Q + i * nn, dQ + i * nn, w1, w2)


def rk4_network(const double[:, ::1] A, const double[:, ::1] Bw_half, const double[:, :, ::1] Mx,
                const double[:, :, ::1] Kx, const double[:, :, ::1] H, const double[:, :, ::1] S,
                const long[::1] li, const long[::1] lj, const double[:, :, ::1] Nl, const double[:, :, ::1] u_half,
                const double[::1] x0, const double[:, ::1] xh0, const double[:, :, ::1] Q0,
                double dt, Py_ssize_t nsteps, double pd_tol, double bound_tol,
                Py_ssize_t stride=1):
    """RK4 over the stacked plant, estimate and Riccati state.

    ``Bw_half`` and ``u_half`` sample the exogenous terms on the half-step
    grid (``2 nsteps + 1`` rows).  States are stored every ``stride`` steps.
    Returns ``(xs, xhs, Qs, status, steps, node)`` where ``node`` is the
    first node whose Riccati state failed.
    """
    cdef int n = A.shape[0]
    cdef int N = Mx.shape[0]
    cdef int nl = Nl.shape[0]
    cdef int nn = n * n
    cdef int sx = n + N * n + N * nn
    if stride < 1:
        raise ValueError("stride must be positive")
    cdef Py_ssize_t nout = nsteps // stride + 1
    xs_arr = np.zeros((nout, n))
    xhs_arr = np.zeros((nout, N, n))
    Qs_arr = np.zeros((nout, N, n, n))
    cdef double[:, ::1] xs = xs_arr
    cdef double[:, :, ::1] xhs = xhs_arr
    cdef double[:, :, :, ::1] Qs = Qs_arr
    cdef double* buf = <double*> malloc((6 * sx + N * n + n + 3 * nn) * sizeof(double))
    cdef double *y = buf
    cdef double *k1 = buf + sx
    cdef double *k2 = buf + 2 * sx
    cdef double *k3 = buf + 3 * sx
    cdef double *k4 = buf + 4 * sx
    cdef double *tmp = buf + 5 * sx
    cdef double *inner = buf + 6 * sx
    cdef double *v = inner + N * n
    cdef double *w1 = v + n
    cdef double *w2 = w1 + nn
    cdef double *work = w2 + nn
    cdef const double* pA = &A[0, 0]
    cdef const double* pMx = &Mx[0, 0, 0]
    cdef const double* pKx = &Kx[0, 0, 0]
    cdef const double* pH = &H[0, 0, 0]
    cdef const double* pS = &S[0, 0, 0]
    cdef const long* pli = &li[0] if nl > 0 else NULL
    cdef const long* plj = &lj[0] if nl > 0 else NULL
    cdef const double* pNl = &Nl[0, 0, 0] if nl > 0 else NULL
    cdef int oq = n + N * n
    cdef int a, i, s
    cdef Py_ssize_t k = 0, ks = 0
    cdef int status = OK, node = -1
    try:
        with nogil:
            for a in range(n):
                y[a] = x0[a]
            for i in range(N):
                for a in range(n):
                    y[n + i * n + a] = xh0[i, a]
                for a in range(nn):
                    y[oq + i * nn + a] = Q0[i, a // n, a % n]
                symmetrize(n, y + oq + i * nn)
            while True:
                if k % stride == 0 and ks < nout:
                    for a in range(n):
                        xs[ks, a] = y[a]
                    for i in range(N):
                        for a in range(n):
                            xhs[ks, i, a] = y[n + i * n + a]
                        for a in range(nn):
                            Qs[ks, i, a // n, a % n] = y[oq + i * nn + a]
                    ks += 1
                for i in range(N):
                    status = check_matrix(n, y + oq + i * nn, pd_tol, bound_tol, work)
                    if status != OK:
                        node = i
                        break
                if status != OK or k == nsteps:
                    break
                network_rhs(n, N, nl, pA, &Bw_half[2 * k, 0], pMx, pKx, pH, pS, pli, plj, pNl,
                            &u_half[2 * k, 0, 0], y, y + n, y + oq, k1, k1 + n, k1 + oq,
                            inner, v, w1, w2)
                for a in range(sx):
                    tmp[a] = y[a] + 0.5 * dt * k1[a]
                network_rhs(n, N, nl, pA, &Bw_half[2 * k + 1, 0], pMx, pKx, pH, pS, pli, plj,
                            pNl, &u_half[2 * k + 1, 0, 0], tmp, tmp + n, tmp + oq,
                            k2, k2 + n, k2 + oq, inner, v, w1, w2)
                for a in range(sx):
                    tmp[a] = y[a] + 0.5 * dt * k2[a]
                network_rhs(n, N, nl, pA, &Bw_half[2 * k + 1, 0], pMx, pKx, pH, pS, pli, plj,
                            pNl, &u_half[2 * k + 1, 0, 0], tmp, tmp + n, tmp + oq,
                            k3, k3 + n, k3 + oq, inner, v, w1, w2)
                for a in range(sx):
                    tmp[a] = y[a] + dt * k3[a]
                network_rhs(n, N, nl, pA, &Bw_half[2 * k + 2, 0], pMx, pKx, pH, pS, pli, plj,
                            pNl, &u_half[2 * k + 2, 0, 0], tmp, tmp + n, tmp + oq,
                            k4, k4 + n, k4 + oq, inner, v, w1, w2)
                for a in range(sx):
                    y[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
                for i in range(N):
                    symmetrize(n, y + oq + i * nn)
                k += 1
    finally:
        free(buf)
    return xs_arr[:ks], xhs_arr[:ks], Qs_arr[:ks], status, k, node
