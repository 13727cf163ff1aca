"""Pure-numpy RK4 kernels; same signatures and results as the compiled core."""

from __future__ import annotations

import numpy as np

OK, LOST_POSITIVITY, UNBOUNDED = 0, 1, 2


def _rhs(A, H, S, Q):
    AQ = A @ Q
    return AQ + np.swapaxes(AQ, -1, -2) - Q @ H @ Q + S


def _sym(Q):
    return 0.5 * (Q + np.swapaxes(Q, -1, -2))


def _check(Q, pd_tol, bound_tol):
    """Status per matrix in a stack ``(..., n, n)``."""
    Q = np.asarray(Q)
    stack = Q.reshape(-1, *Q.shape[-2:])
    out = np.zeros(len(stack), dtype=int)
    eye = np.eye(Q.shape[-1])
    for idx, M in enumerate(stack):
        if not np.all(np.isfinite(M)) or np.abs(M).max() > bound_tol:
            out[idx] = UNBOUNDED
            continue
        try:
            np.linalg.cholesky(M - pd_tol * eye)
        except np.linalg.LinAlgError:
            out[idx] = LOST_POSITIVITY
    return out


def rk4_dre(A, H, S, Q0, dt, nsteps, pd_tol, bound_tol):
    """Integrate ``dQ/dt = A Q + Q A' - Q H Q + S`` with classical RK4.

    Returns ``(Qs, qdot, status, steps)``; see the compiled twin.
    """
    n = A.shape[0]
    Qs = np.zeros((nsteps + 1, n, n))
    qd = np.full(nsteps + 1, np.nan)
    Q = _sym(np.array(Q0, dtype=float))
    Qs[0] = Q
    status = int(_check(Q, pd_tol, bound_tol)[0])
    k = 0
    while status == OK and k < nsteps:
        k1 = _rhs(A, H, S, Q)
        qd[k] = np.abs(k1).max()
        k2 = _rhs(A, H, S, Q + 0.5 * dt * k1)
        k3 = _rhs(A, H, S, Q + 0.5 * dt * k2)
        k4 = _rhs(A, H, S, Q + dt * k3)
        Q = _sym(Q + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        k += 1
        Qs[k] = Q
        status = int(_check(Q, pd_tol, bound_tol)[0])
    if status == OK:
        qd[k] = np.abs(_rhs(A, H, S, Q)).max()
    return Qs[:k + 1], qd[:k + 1], status, k


def _network_rhs(A, Bw, Mx, Kx, H, S, li, lj, Nl, u, x, xh, Q):
    dx = A @ x + Bw
    inner = np.einsum("iab,b->ia", Mx, x) - np.einsum("iab,ib->ia", Kx, xh) + u
    if len(li):
        np.add.at(inner, li, np.einsum("lab,lb->la", Nl, xh[lj]))
    dxh = xh @ A.T + np.einsum("iab,ib->ia", Q, inner)
    return dx, dxh, _rhs(A, H, S, Q)


def rk4_network(A, Bw_half, Mx, Kx, H, S, li, lj, Nl, u_half, x0, xh0, Q0,
                dt, nsteps, pd_tol, bound_tol, stride=1):
    """RK4 over the stacked plant, estimate and Riccati state.

    Returns ``(xs, xhs, Qs, status, steps, node)``; see the compiled twin.
    """
    n, N = A.shape[0], Mx.shape[0]
    if stride < 1:
        raise ValueError("stride must be positive")
    nout = nsteps // stride + 1
    xs = np.zeros((nout, n))
    xhs = np.zeros((nout, N, n))
    Qs = np.zeros((nout, N, n, n))
    x = np.array(x0, dtype=float)
    xh = np.array(xh0, dtype=float)
    Q = _sym(np.array(Q0, dtype=float))
    args = (Mx, Kx, H, S, li, lj, Nl)
    k, ks, status, node = 0, 0, OK, -1
    while True:
        if k % stride == 0 and ks < nout:
            xs[ks], xhs[ks], Qs[ks] = x, xh, Q
            ks += 1
        codes = _check(Q, pd_tol, bound_tol)
        bad = np.flatnonzero(codes)
        if bad.size:
            node = int(bad[0])
            status = int(codes[node])
            break
        if k == nsteps:
            break
        b0, b1, b2 = Bw_half[2 * k], Bw_half[2 * k + 1], Bw_half[2 * k + 2]
        u0, u1, u2 = u_half[2 * k], u_half[2 * k + 1], u_half[2 * k + 2]
        a1 = _network_rhs(A, b0, *args, u0, x, xh, Q)
        a2 = _network_rhs(A, b1, *args, u1, x + 0.5 * dt * a1[0], xh + 0.5 * dt * a1[1],
                          Q + 0.5 * dt * a1[2])
        a3 = _network_rhs(A, b1, *args, u1, x + 0.5 * dt * a2[0], xh + 0.5 * dt * a2[1],
                          Q + 0.5 * dt * a2[2])
        a4 = _network_rhs(A, b2, *args, u2, x + dt * a3[0], xh + dt * a3[1], Q + dt * a3[2])
        x = x + dt / 6.0 * (a1[0] + 2.0 * a2[0] + 2.0 * a3[0] + a4[0])
        xh = xh + dt / 6.0 * (a1[1] + 2.0 * a2[1] + 2.0 * a3[1] + a4[1])
        Q = _sym(Q + dt / 6.0 * (a1[2] + 2.0 * a2[2] + 2.0 * a3[2] + a4[2]))
        k += 1
    return xs[:ks], xhs[:ks], Qs[:ks], status, k, node
