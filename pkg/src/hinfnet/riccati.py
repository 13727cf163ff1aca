"""Differential Riccati equations of the node filters.

Each node propagates ``dQ/dt = Q A' + A Q - Q H Q + S`` from ``Q(0) = Q0``.
Integration is fixed-step RK4 with symmetrization after every step; loss of
positive definiteness or unbounded growth aborts with the failure time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BadStep, LostPositivity, NoConvergence, Unbounded

PD_TOL = 1e-10
BOUND_TOL = 1e6
DT = 1e-3


@dataclass(frozen=True)
class RiccatiCoefficients:
    """Constant data of one Riccati equation."""

    A: np.ndarray
    H: np.ndarray
    S: np.ndarray
    Q0: np.ndarray

    def __post_init__(self):
        for name in ("A", "H", "S", "Q0"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        n = self.A.shape[0]
        for name in ("A", "H", "S", "Q0"):
            M = getattr(self, name)
            if M.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {M.shape}")
        for name in ("H", "S", "Q0"):
            M = getattr(self, name)
            if np.abs(M - M.T).max() > 1e-10 * (1.0 + np.abs(M).max()):
                raise ValueError(f"{name} must be symmetric")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def rhs(self, Q: np.ndarray) -> np.ndarray:
        AQ = self.A @ Q
        return AQ + AQ.T - Q @ self.H @ Q + self.S


@dataclass
class RiccatiTrajectory:
    times: np.ndarray
    Q: np.ndarray
    min_eig: np.ndarray
    qdot_norm: np.ndarray
    converged: bool = False
    Qinf: np.ndarray | None = None

    def to_csv(self, path) -> None:
        """Write ``t``, the row-major entries of ``Q`` and its least eigenvalue."""
        n = self.Q.shape[-1]
        header = ["t"] + [f"Q{a}{b}" for a in range(n) for b in range(n)] + ["min_eig"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for t, Q, m in zip(self.times, self.Q, self.min_eig):
                wr.writerow([repr(float(t))] + [repr(float(q)) for q in Q.ravel()] + [repr(float(m))])


def _steps(t_final: float, dt: float) -> int:
    if not (dt > 0 and np.isfinite(dt)):
        raise BadStep(f"dt must be positive, got {dt}")
    if t_final < 0:
        raise BadStep(f"t_final must be nonnegative, got {t_final}")
    k = int(round(t_final / dt))
    if abs(k * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise BadStep(f"t_final={t_final} is not a multiple of dt={dt}")
    return k


def raise_for_status(status: int, t: float, node=None) -> None:
    where = "" if node is None else f" at node {node}"
    if status == kernels.LOST_POSITIVITY:
        raise LostPositivity(f"Riccati solution lost positive definiteness{where} at t={t:.6g}", t, node)
    if status == kernels.UNBOUNDED:
        raise Unbounded(f"Riccati solution exceeded the bound{where} at t={t:.6g}", t, node)


def integrate_dre(coeffs: RiccatiCoefficients, t_final: float, dt: float = DT,
                  pd_tol: float = PD_TOL, bound_tol: float = BOUND_TOL,
                  impl: str | None = None) -> RiccatiTrajectory:
    """RK4 integration on ``[0, t_final]``.

    Raises
    ------
    LostPositivity
        ``Q - pd_tol I`` stopped being positive definite.
    Unbounded
        An entry of ``Q`` exceeded ``bound_tol`` in magnitude.
    BadStep
        ``dt`` is not positive or does not divide ``t_final``.
    """
    k = _steps(t_final, dt)
    if not np.all(np.linalg.eigvalsh(coeffs.Q0) > 0):
        raise ValueError("Q0 must be positive definite")
    Qs, qd, status, done = kernels.rk4_dre(coeffs.A, coeffs.H, coeffs.S, coeffs.Q0, dt, k,
                                           pd_tol, bound_tol, impl=impl)
    raise_for_status(status, done * dt)
    times = np.arange(done + 1) * dt
    return RiccatiTrajectory(times, Qs, np.linalg.eigvalsh(Qs)[:, 0], qd)


def steady_state(coeffs: RiccatiCoefficients, tol: float = 1e-9, t_max: float = 200.0,
                 dt: float = DT, hold: int = 100, impl: str | None = None) -> np.ndarray:
    """Long-horizon limit of the Riccati solution.

    Integrates until ``max|dQ/dt| < tol`` for ``hold`` consecutive steps.

    Raises
    ------
    NoConvergence
        The criterion was not met by ``t_max``.
    """
    traj = integrate_dre(coeffs, t_max, dt, impl=impl)
    small = traj.qdot_norm < tol
    run = 0
    for k, ok in enumerate(small):
        run = run + 1 if ok else 0
        if run >= hold:
            Q = traj.Q[k]
            return 0.5 * (Q + Q.T)
    raise NoConvergence(f"no steady state by t={t_max}", t_max)
