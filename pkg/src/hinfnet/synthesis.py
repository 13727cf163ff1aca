"""Conic form of the filter-network design problem and its staged solve."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import Phase1Infeasible, SolverError
from .lmi import EPS_REL, DecisionVars, LmiSystem, build_lmi_system, residual_margins
from .network import DesignWeights, NetworkModel
from .sdp import ConeConstraint, ConicProgram, SolveReport, solve_program

log = logging.getLogger(__name__)

MAX_ZGLOB = "max_zglob"
MAX_SUM_ZLOC = "max_sum_zloc"
MAX_KAPPA = "max_kappa"


def objective_vector(system: LmiSystem, kind: str) -> np.ndarray:
    layout = system.layout
    c = np.zeros(layout.size)
    if kind == MAX_ZGLOB:
        c[layout.index(("zglob",))] = 1.0
    elif kind == MAX_SUM_ZLOC:
        for i in range(system.model.N):
            c[layout.index(("zloc", i))] = 1.0
    elif kind == MAX_KAPPA:
        c[layout.index(("kappa",))] = 1.0
    else:
        raise ValueError(f"unknown objective kind {kind!r}")
    return c


def assemble_program(system: LmiSystem, objective_kind: str = MAX_ZGLOB,
                     zglob_fixed: float | None = None) -> ConicProgram:
    """Turn the constraint system into a :class:`ConicProgram`.

    Every constraint ``F(v) > eps`` becomes the cone constraint
    ``F(v) - eps I >= 0`` (orthant rows for scalars).  A given
    ``zglob_fixed`` removes the global level from the variables by folding
    its column into the constants; constraints left without any variable
    are dropped.
    """
    layout = system.layout
    nv = layout.size
    full_obj = objective_vector(system, objective_kind)
    fixed = np.zeros(nv)
    free = np.arange(nv)
    if zglob_fixed is not None:
        iz = layout.index(("zglob",))
        free = np.array([k for k in range(nv) if k != iz])
        fixed[iz] = zglob_fixed
    elif objective_kind != MAX_ZGLOB:
        raise ValueError(f"{objective_kind} needs zglob_fixed")

    cones = []
    for con in system.constraints:
        const = con.const + np.tensordot(fixed, con.lin, axes=1)
        lin = con.lin[free]
        if not np.any(lin):
            continue
        if con.kind == "psd":
            cones.append(ConeConstraint("psd", const - con.eps * np.eye(con.dim), lin, con.name))
        else:
            cones.append(ConeConstraint("nonneg", const[:, 0] - con.eps, lin[:, :, 0], con.name))
    return ConicProgram(full_obj[free], cones, layout=layout, free_index=free, fixed=fixed,
                        meta={"objective_kind": objective_kind, "zglob_fixed": zglob_fixed})


@dataclass
class DesignOptions:
    """Tolerances and shaping parameters of :func:`optimize_design`.

    ``delta`` is the relative slack given up from the optimal global level.
    ``ybar_floor_frac`` is the fraction of the largest attainable common
    ``Ybar`` floor kept in the refinement, and ``ybar_cap_rel`` scales the
    ``Ybar`` cap relative to the phase-1 point.
    """

    eps_rel: float = EPS_REL
    tol: float = 1e-8
    feastol: float = 1e-7
    delta: float = 1e-3
    zbar_min: float = 0.0
    max_iter: int = 100
    ybar_cap_rel: float = 10.0
    ybar_floor_frac: float = 0.5


def _audit(report: SolveReport, system: LmiSystem) -> SolveReport:
    vars = DecisionVars.from_vector(system.layout, report.full_solution)
    report.margins = residual_margins(vars, system.model, system.weights, system.eps_rel,
                                      system.zbar_min, system.ybar_cap, system.ybar_floor)
    return report


def _solve(system, opts, kind, zglob_fixed=None):
    prog = assemble_program(system, kind, zglob_fixed)
    rep = solve_program(prog, tol=opts.tol, feastol=opts.feastol, max_iter=opts.max_iter)
    log.info("%s: status=%s obj=%.10g iters=%d relgap=%.2e", kind, rep.status,
             rep.objective, rep.iterations, rep.rel_gap)
    if rep.certificate:
        rep.certificate = [(prog.cones[idx].label, share) for idx, share in rep.certificate]
    return _audit(rep, system)


def most_violated_family(report: SolveReport) -> str | None:
    """Constraint family carrying the largest share of an infeasibility certificate."""
    if not report.certificate:
        return None
    label = report.certificate[0][0]
    return label.split("[")[0].split("(")[0]


def zbar_floors(model: NetworkModel, rep1: SolveReport, opts: DesignOptions) -> dict:
    """Per-link ``Zbar`` floor: ``(1 - delta)`` of the phase-1 minimum eigenvalue."""
    v1 = DecisionVars.from_vector(rep1.layout, rep1.full_solution)
    floors = {}
    for lk in model.links:
        k = lk.key
        Z = v1.tau[k] * (np.linalg.inv(v1.Upsilon[k]) - lk.G)
        zmin = max(float(np.linalg.eigvalsh(0.5 * (Z + Z.T)).min()), 0.0)
        floors[k] = max(opts.zbar_min, (1.0 - opts.delta) * zmin)
    return floors


def refinement_options(model: NetworkModel, rep1: SolveReport, opts: DesignOptions) -> dict:
    """Keyword arguments of :func:`build_lmi_system` shared by the refinement stages."""
    v1 = DecisionVars.from_vector(rep1.layout, rep1.full_solution)
    ymax = max(float(np.linalg.eigvalsh(Y).max()) for Y in v1.Ybar)
    return dict(eps_rel=opts.eps_rel, zbar_min=zbar_floors(model, rep1, opts),
                ybar_cap=opts.ybar_cap_rel * max(1.0, ymax))


def optimize_design(model: NetworkModel, weights: DesignWeights,
                    opts: DesignOptions | None = None) -> tuple[SolveReport, SolveReport]:
    """Three convex stages; returns the phase-1 report and the final one.

    1. Maximize the inverse global level ``zglob``.
    2. With ``zglob`` fixed at ``(1 - delta)`` of its optimum, maximize a
       common lower bound ``kappa`` on the ``Ybar_i``.  Each link keeps at
       least ``(1 - delta)`` of its phase-1 ``Zbar`` eigenvalue and every
       ``Ybar_i`` stays below a cap.
    3. With ``Ybar_i > ybar_floor_frac * kappa* I`` added, maximize the sum
       of the inverse local levels.

    Stage 3 alone has no attained optimum (``Zbar`` shrinks to zero while
    ``Ybar`` grows); the floors and the cap make it well posed.  The
    ``Ybar`` floor keeps every Riccati solution below ``1 / floor``.
    """
    opts = opts or DesignOptions()
    system = build_lmi_system(model, weights, opts.eps_rel, opts.zbar_min)
    rep1 = _solve(system, opts, MAX_ZGLOB)
    if rep1.status == "infeasible":
        fam = most_violated_family(rep1)
        raise Phase1Infeasible(f"design problem infeasible (most violated family: {fam})", rep1)
    if not rep1.optimal:
        raise SolverError(f"phase 1 stopped with status {rep1.status}", rep1)
    zfix = (1.0 - opts.delta) * rep1.objective

    kw = refinement_options(model, rep1, opts)
    system2 = build_lmi_system(model, weights, ybar_floor="variable", **kw)
    rep2 = _solve(system2, opts, MAX_KAPPA, zfix)
    if not rep2.optimal:
        raise SolverError(f"floor stage stopped with status {rep2.status}", rep2)
    floor = opts.ybar_floor_frac * rep2.objective

    system3 = build_lmi_system(model, weights, ybar_floor=floor, **kw)
    rep3 = _solve(system3, opts, MAX_SUM_ZLOC, zfix)
    if not rep3.optimal:
        raise SolverError(f"refinement stopped with status {rep3.status}", rep3)
    rep3.meta.update(zglob_opt=rep1.objective, zglob_fixed=zfix, delta=opts.delta,
                     eps_rel=opts.eps_rel, tol=opts.tol, feastol=opts.feastol,
                     phase1_iterations=rep1.iterations, kappa_opt=rep2.objective,
                     ybar_floor=floor, ybar_cap=system3.ybar_cap,
                     phase2_objective=rep3.objective, system=system3,
                     floor_report=rep2)
    return rep1, rep3
