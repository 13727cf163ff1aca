"""Dense conic programs over PSD cones and the nonnegative orthant.

The solver is a primal-dual interior-point method on the homogeneous
self-dual embedding of

    maximize    b' x
    subject to  F0_k + sum_j x_j F_jk  >=  0      (PSD blocks)
                g0 + Gl x              >=  0      (orthant rows)

with Nesterov-Todd scaling and a Mehrotra predictor-corrector step.  It
targets desk-scale problems (a few hundred variables, blocks up to ~100).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import BadDimension

__all__ = [
    "svec",
    "smat",
    "ConeConstraint",
    "ConicProgram",
    "SolveReport",
    "solve_program",
]

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


def svec(M) -> np.ndarray:
    """Scaled upper-triangle vectorization with ``<svec(A), svec(B)> = tr(AB)``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise BadDimension(f"svec needs a square matrix, got shape {M.shape}")
    d = M.shape[0]
    iu = np.triu_indices(d)
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return 0.5 * (M[iu] + M.T[iu]) * scale


def smat(v, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    if d is None:
        d = int(round((math.sqrt(8 * v.size + 1) - 1) / 2))
    if v.ndim != 1 or v.size != d * (d + 1) // 2:
        raise BadDimension(f"vector of length {v.size} is not svec of a {d}x{d} matrix")
    iu = np.triu_indices(d)
    vals = v / np.where(iu[0] == iu[1], 1.0, SQRT2)
    M = np.zeros((d, d))
    M[iu] = vals
    M.T[iu] = vals
    return M


@dataclass(frozen=True)
class ConeConstraint:
    """``const + sum_j x_j lin[j]`` in a PSD cone (matrix) or orthant (vector)."""

    kind: str  # "psd" | "nonneg"
    const: np.ndarray
    lin: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.kind == "psd":
            d = self.const.shape[0]
            if self.const.shape != (d, d) or self.lin.shape[1:] != (d, d):
                raise BadDimension(f"PSD cone {self.label!r}: inconsistent shapes")
        elif self.kind == "nonneg":
            if self.const.ndim != 1 or self.lin.shape[1:] != self.const.shape:
                raise BadDimension(f"orthant cone {self.label!r}: inconsistent shapes")
        else:
            raise BadDimension(f"unknown cone kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    def value(self, x) -> np.ndarray:
        return self.const + np.tensordot(x, self.lin, axes=1)


@dataclass
class ConicProgram:
    """Maximize ``objective @ x`` over the intersection of ``cones``.

    ``free_index``/``fixed`` map the solver vector back to a full decision
    vector when some variables were substituted by constants.
    """

    objective: np.ndarray
    cones: list
    layout: object = None
    free_index: np.ndarray | None = None
    fixed: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def nvars(self) -> int:
        return self.objective.size

    def full_vector(self, x) -> np.ndarray:
        if self.free_index is None:
            return np.asarray(x, dtype=float).copy()
        v = self.fixed.copy()
        v[self.free_index] = x
        return v

    def count(self, kind: str) -> int:
        return sum(1 for c in self.cones if c.kind == kind)


@dataclass
class SolveReport:
    status: str
    solution: np.ndarray
    objective: float
    dual_objective: float
    gap: float
    rel_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    full_solution: np.ndarray | None = None
    margins: object = None
    certificate: list | None = None
    message: str = ""
    layout: object = None
    meta: dict = field(default_factory=dict)
    hsd_tau: float = math.nan
    hsd_kappa: float = math.nan

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# -- internal cone algebra -----------------------------------------------------

class _Cones:
    """Block data ``G x + s = h`` in cvxopt sign convention (``G = -lin``)."""

    def __init__(self, cones, nv):
        self.nv = nv
        lp_h, lp_G = [], []
        self.h_psd, self.G_psd, self.scale = [], [], []
        self.lp_rows = []
        for idx, c in enumerate(cones):
            s = 1.0 / max(1.0, np.abs(c.const).max(initial=0.0), np.abs(c.lin).max(initial=0.0))
            if c.kind == "nonneg":
                lp_h.append(c.const * s)
                lp_G.append(-c.lin.T * s)
                self.lp_rows.append((idx, c.dim))
            else:
                self.h_psd.append(0.5 * (c.const + c.const.T) * s)
                G = -0.5 * (c.lin + c.lin.transpose(0, 2, 1)) * s
                self.G_psd.append(G)
                self.scale.append((idx, s))
        self.h_lp = np.concatenate(lp_h) if lp_h else np.zeros(0)
        self.G_lp = np.vstack(lp_G) if lp_G else np.zeros((0, nv))
        self.dims = [h.shape[0] for h in self.h_psd]
        self.degree = self.h_lp.size + sum(self.dims)
        self.Gflat = [G.reshape(nv, -1) for G in self.G_psd]
        self.order = [i for i, _ in self.lp_rows] + [i for i, _ in self.scale]

    def G(self, x):
        return [self.G_lp @ x] + [np.tensordot(x, G, axes=1) for G in self.G_psd]

    def GT(self, z):
        out = self.G_lp.T @ z[0]
        for Gf, Z in zip(self.Gflat, z[1:]):
            out = out + Gf @ Z.ravel()
        return out

    def h(self):
        return [self.h_lp] + self.h_psd

    def identity(self):
        return [np.ones(self.h_lp.size)] + [np.eye(d) for d in self.dims]


def _inner(a, b):
    return float(a[0] @ b[0] + sum(np.vdot(A, B) for A, B in zip(a[1:], b[1:])))


def _norm(a):
    return math.sqrt(max(_inner(a, a), 0.0))


def _axpy(alpha, x, y):
    return [y[0] + alpha * x[0]] + [Y + alpha * X for X, Y in zip(x[1:], y[1:])]


def _scale(alpha, x):
    return [alpha * x[0]] + [alpha * X for X in x[1:]]


def _sym(M):
    return 0.5 * (M + M.T)


class _NTScaling:
    """Nesterov-Todd scaling point of ``(s, z)``; ``lam = W z = W^{-T} s``."""

    def __init__(self, s, z):
        self.d = np.sqrt(s[0] / z[0])
        self.lam = [np.sqrt(s[0] * z[0])]
        self.R, self.Rinv = [], []
        for S, Z in zip(s[1:], z[1:]):
            Ls = np.linalg.cholesky(S)
            Lz = np.linalg.cholesky(Z)
            U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
            R = Ls @ Vt.T / np.sqrt(lam)
            self.R.append(R)
            self.Rinv.append(np.linalg.inv(R))
            self.lam.append(lam)

    def W(self, z):
        return [self.d * z[0]] + [
            _sym(R.T @ Z @ R) for R, Z in zip(self.R, z[1:])]

    def Winv_T(self, s):
        return [s[0] / self.d] + [_sym(Ri @ S @ Ri.T) for Ri, S in zip(self.Rinv, s[1:])]

    def W_T(self, x):
        return [self.d * x[0]] + [_sym(R @ X @ R.T) for R, X in zip(self.R, x[1:])]

    def Winv(self, x):
        return [x[0] / self.d] + [_sym(Ri.T @ X @ Ri) for Ri, X in zip(self.Rinv, x[1:])]


def _lam_mat(lam):
    return [lam[0]] + [np.diag(l) for l in lam[1:]]


def _jordan(a, b):
    return [a[0] * b[0]] + [_sym(A @ B) for A, B in zip(a[1:], b[1:])]


def _lam_solve(lam, u):
    """Solve ``lam o x = u`` for ``x`` (``lam`` is diagonal in every block)."""
    return [u[0] / lam[0]] + [2.0 * U / (l[:, None] + l[None, :]) for l, U in zip(lam[1:], u[1:])]


def _max_step(lam, dx):
    """Largest ``alpha`` with ``lam + alpha dx`` in the cone (inf if unbounded)."""
    amax = math.inf
    if lam[0].size:
        neg = dx[0] < 0
        if np.any(neg):
            amax = min(amax, float(np.min(-lam[0][neg] / dx[0][neg])))
    for l, D in zip(lam[1:], dx[1:]):
        r = 1.0 / np.sqrt(l)
        ev = np.linalg.eigvalsh(_sym(D * r[:, None] * r[None, :]))[0]
        if ev < 0:
            amax = min(amax, -1.0 / ev)
    return amax


RAY_RATIO = 1e-2
STALL_RATIO = 1e-12


def solve_program(program: ConicProgram, tol: float = 1e-8, feastol: float = 1e-7,
                  max_iter: int = 100, step: float = 0.99) -> SolveReport:
    """Solve ``program`` with the self-dual interior-point method.

    Status is one of ``optimal``, ``infeasible`` (primal infeasibility
    certificate, or ``tau / kappa`` collapsed with ``h'z < 0`` as happens for
    weakly infeasible programs), ``dual_infeasible``, ``max_iter`` or
    ``ill_conditioned``.  Results are deterministic for identical input.
    """
    nv = program.nvars
    K = _Cones(program.cones, nv)
    c = -np.asarray(program.objective, dtype=float)
    h = K.h()
    hnorm = _norm(h)
    cnorm = float(np.linalg.norm(c))
    deg = K.degree

    x = np.zeros(nv)
    s = K.identity()
    z = K.identity()
    tau = kappa = 1.0
    status, message = "max_iter", ""
    it = 0
    pres = dres = gap = relgap = math.inf
    pcost = dcost = math.nan

    for it in range(max_iter + 1):
        Gx = K.G(x)
        rx = K.GT(z) + c * tau
        rz = _axpy(-tau, h, _axpy(1.0, Gx, s))
        rt = kappa + float(c @ x) + _inner(h, z)
        sz = _inner(s, z)
        mu = (sz + tau * kappa) / (deg + 1)
        cx, hz = float(c @ x), _inner(h, z)
        pcost, dcost = cx / tau, -hz / tau
        gap = sz / tau ** 2
        relgap = gap / max(1.0, min(abs(pcost), abs(dcost)))
        # residuals relative to the iterate size, as in Clarabel
        xn = float(np.linalg.norm(x)) / tau
        pres = _norm(rz) / tau / max(1.0, hnorm + xn + _norm(s) / tau)
        dres = float(np.linalg.norm(rx)) / tau / max(1.0, cnorm + xn + _norm(z) / tau)
        log.debug("it=%2d pcost=% .10e dcost=% .10e pres=%.1e dres=%.1e relgap=%.1e tau=%.1e kappa=%.1e",
                  it, -pcost, -dcost, pres, dres, relgap, tau, kappa)
        if pres <= feastol and dres <= feastol and relgap <= tol:
            status = "optimal"
            break
        # certificates only count once the embedding has left the optimal branch
        ray = tau <= RAY_RATIO * kappa
        if ray and hz < 0 and (float(np.linalg.norm(K.GT(z))) / (-hz) <= feastol
                               or tau <= STALL_RATIO * kappa):
            status = "infeasible"
            break
        if ray and cx < 0 and _norm(_axpy(1.0, Gx, s)) / (-cx) <= feastol:
            status = "dual_infeasible"
            break
        if it == max_iter:
            break

        try:
            W = _NTScaling(s, z)
            Gs = [K.G_lp / W.d[:, None]]
            for Gb, Ri in zip(K.G_psd, W.Rinv):
                Gs.append(np.einsum("ij,kjl,ml->kim", Ri, Gb, Ri, optimize=True))
            # QR of the stacked scaled constraint matrix avoids squaring its
            # condition number in the normal equations
            stack = np.vstack([Gs[0]] + [Gb.reshape(nv, -1).T for Gb in Gs[1:]])
            Rq = np.linalg.qr(stack, mode="r")
            if not np.all(np.isfinite(Rq)) or np.abs(np.diag(Rq)).min() == 0.0:
                raise np.linalg.LinAlgError("rank-deficient scaled constraint matrix")
        except (np.linalg.LinAlgError, ValueError) as exc:
            status, message = "ill_conditioned", str(exc)
            break

        def gs_apply(v):
            return [Gs[0] @ v] + [np.tensordot(v, G, axes=1) for G in Gs[1:]]

        def gs_T(u):
            out = Gs[0].T @ u[0]
            for G, U in zip(Gs[1:], u[1:]):
                out = out + G.reshape(nv, -1) @ U.ravel()
            return out

        def kkt(p1, p2):
            # G' dz = p1, G dx - W'W dz = p2; returns dx and scaled dz~ = W dz
            q2 = W.Winv_T(p2)
            rhs = p1 + gs_T(q2)
            dx = np.zeros(nv)
            dzt = None
            for _ in range(3):
                # first pass solves, later passes refine against G' dz = p1
                y = sla.solve_triangular(Rq, rhs, trans="T")
                dx = dx + sla.solve_triangular(Rq, y)
                dzt = _axpy(-1.0, q2, gs_apply(dx))
                rhs = p1 - gs_T(dzt)
            return dx, dzt

        lam = W.lam
        lamM = _lam_mat(lam)
        x2, z2t = kkt(-c, h)
        z2 = W.Winv(z2t)
        den_base = float(c @ x2) + _inner(h, z2)

        def direction(sigma, ds_a=None, dz_a=None, dtk=0.0):
            eta = 1.0 - sigma
            uc = _scale(-1.0, _jordan(lamM, lamM))
            if ds_a is not None:
                uc = _axpy(-1.0, _jordan(ds_a, dz_a), uc)
            uc = _axpy(sigma * mu, K.identity(), uc)
            uk = -tau * kappa - dtk + sigma * mu
            ut = _lam_solve(lam, uc)
            p2 = _axpy(-1.0, W.W_T(ut), _scale(-eta, rz))
            x1, z1t = kkt(-eta * rx, p2)
            z1 = W.Winv(z1t)
            ut_rhs = -eta * rt
            num = ut_rhs - uk / tau - float(c @ x1) - _inner(h, z1)
            dtau = num / (den_base - kappa / tau)
            dx = x1 + dtau * x2
            dzt = _axpy(dtau, z2t, z1t)
            dst = _axpy(-1.0, dzt, ut)
            dkap = (uk - kappa * dtau) / tau
            return dx, dzt, dst, dtau, dkap

        def step_len(dzt, dst, dtau, dkap):
            a = min(_max_step(lam, dst), _max_step(lam, dzt))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a

        dxa, dzta, dsta, dta, dka = direction(0.0)
        a_aff = min(1.0, step_len(dzta, dsta, dta, dka))
        sigma = (1.0 - a_aff) ** 3
        dx, dzt, dst, dtau, dkap = direction(sigma, dsta, dzta, dta * dka)
        alpha = min(1.0, step * step_len(dzt, dst, dtau, dkap))

        st = _axpy(alpha, dst, lamM)
        zt = _axpy(alpha, dzt, lamM)
        s = W.W_T(st)
        z = W.Winv(zt)
        x = x + alpha * dx
        tau += alpha * dtau
        kappa += alpha * dkap

    xs = x / tau
    cert = None
    if status == "infeasible":
        hz = _inner(h, z)
        cert = _certificate_shares(K, h, z, hz)
    return SolveReport(
        status=status,
        solution=xs,
        objective=float(program.objective @ xs),
        dual_objective=-dcost if math.isfinite(dcost) else math.nan,
        gap=gap,
        rel_gap=relgap,
        primal_residual=pres,
        dual_residual=dres,
        iterations=it,
        full_solution=program.full_vector(xs),
        certificate=cert,
        message=message,
        hsd_tau=tau,
        hsd_kappa=kappa,
        layout=program.layout,
        meta=dict(program.meta),
    )


def _certificate_shares(K, h, z, hz):
    """Per-cone share of ``h'z < 0`` in the infeasibility certificate."""
    shares = []
    off = 0
    for idx, dim in K.lp_rows:
        shares.append((idx, float(h[0][off:off + dim] @ z[0][off:off + dim]) / hz))
        off += dim
    for (idx, _), H, Z in zip(K.scale, h[1:], z[1:]):
        shares.append((idx, float(np.vdot(H, Z)) / hz))
    return sorted(shares, key=lambda t: -t[1])
