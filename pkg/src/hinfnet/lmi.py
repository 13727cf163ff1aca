"""Matrix inequalities of the cooperative filter design.

Every constraint is written once as a direct evaluator on
:class:`DecisionVars`.  The affine maps consumed by the conic solver are
obtained by probing those evaluators on the unit vectors of the flat
decision vector, so the solver and the margin audit share one definition
of each matrix while staying independent of the solver's internal state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionMismatch
from .network import DesignWeights, NetworkModel

EPS_REL = 1e-6
TAU_MIN = 1e-8


def sym_from_entries(vals: np.ndarray, p: int) -> np.ndarray:
    M = np.zeros((p, p))
    iu = np.triu_indices(p)
    M[iu] = vals
    M.T[iu] = vals
    return M


def sym_to_entries(M: np.ndarray) -> np.ndarray:
    return M[np.triu_indices(M.shape[0])].copy()


@dataclass(frozen=True)
class VarLayout:
    """Position of every decision block in the flat vector.

    Keys are ``("Ybar", i)``, ``("Upsilon", i, j)``, ``("tau", i, j)``,
    ``("zloc", i)``, ``("zglob",)``, ``("ubound", i, j)`` when a minimum
    ``Zbar`` level is requested and ``("kappa",)`` when a common lower bound
    on the ``Ybar_i`` is optimized.  Symmetric blocks store their upper
    triangle row by row.
    """

    slices: dict
    dims: dict
    size: int

    @classmethod
    def for_model(cls, model: NetworkModel, with_ubound: bool = False,
                  with_kappa: bool = False) -> "VarLayout":
        slices, dims = {}, {}
        off = 0

        def add(key, count, dim=None):
            nonlocal off
            slices[key] = slice(off, off + count)
            dims[key] = dim
            off += count

        n = model.n
        for i in range(model.N):
            add(("Ybar", i), n * (n + 1) // 2, n)
        for lk in model.links:
            add(("Upsilon",) + lk.key, lk.p * (lk.p + 1) // 2, lk.p)
        for lk in model.links:
            add(("tau",) + lk.key, 1)
        for i in range(model.N):
            add(("zloc", i), 1)
        add(("zglob",), 1)
        if with_ubound:
            for lk in model.links:
                add(("ubound",) + lk.key, 1)
        if with_kappa:
            add(("kappa",), 1)
        return cls(slices, dims, off)

    def index(self, key) -> int:
        """Flat index of a scalar variable."""
        return self.slices[key].start


@dataclass
class DecisionVars:
    """Values of the design variables.

    ``zloc[i]`` is the inverse local level and ``zglob`` the inverse
    global level.  ``ubound`` holds the scalar bounds ``Upsilon_ij <= s I``
    used to encode a minimum ``Zbar`` eigenvalue.
    """

    Ybar: list
    Upsilon: dict
    tau: dict
    zloc: np.ndarray
    zglob: float
    ubound: dict = field(default_factory=dict)
    kappa: float = 0.0

    @classmethod
    def zeros(cls, model: NetworkModel, with_ubound: bool = False) -> "DecisionVars":
        n = model.n
        return cls(
            Ybar=[np.zeros((n, n)) for _ in range(model.N)],
            Upsilon={lk.key: np.zeros((lk.p, lk.p)) for lk in model.links},
            tau={lk.key: 0.0 for lk in model.links},
            zloc=np.zeros(model.N),
            zglob=0.0,
            ubound={lk.key: 0.0 for lk in model.links} if with_ubound else {},
        )

    @classmethod
    def from_vector(cls, layout: VarLayout, v) -> "DecisionVars":
        v = np.asarray(v, dtype=float)
        if v.shape != (layout.size,):
            raise DimensionMismatch(f"decision vector has shape {v.shape}, layout needs {layout.size}")
        Ybar, Ups, tau, zloc, ub = {}, {}, {}, {}, {}
        zglob = kappa = 0.0
        for key, sl in layout.slices.items():
            kind = key[0]
            if kind == "Ybar":
                Ybar[key[1]] = sym_from_entries(v[sl], layout.dims[key])
            elif kind == "Upsilon":
                Ups[key[1:]] = sym_from_entries(v[sl], layout.dims[key])
            elif kind == "tau":
                tau[key[1:]] = float(v[sl][0])
            elif kind == "zloc":
                zloc[key[1]] = float(v[sl][0])
            elif kind == "zglob":
                zglob = float(v[sl][0])
            elif kind == "ubound":
                ub[key[1:]] = float(v[sl][0])
            elif kind == "kappa":
                kappa = float(v[sl][0])
        N = len(Ybar)
        return cls([Ybar[i] for i in range(N)], Ups, tau,
                   np.array([zloc[i] for i in range(N)]), zglob, ub, kappa)

    def to_vector(self, layout: VarLayout) -> np.ndarray:
        v = np.zeros(layout.size)
        for key, sl in layout.slices.items():
            kind = key[0]
            if kind == "Ybar":
                v[sl] = sym_to_entries(self.Ybar[key[1]])
            elif kind == "Upsilon":
                v[sl] = sym_to_entries(self.Upsilon[key[1:]])
            elif kind == "tau":
                v[sl] = self.tau[key[1:]]
            elif kind == "zloc":
                v[sl] = self.zloc[key[1]]
            elif kind == "zglob":
                v[sl] = self.zglob
            elif kind == "ubound":
                v[sl] = self.ubound[key[1:]]
            elif kind == "kappa":
                v[sl] = self.kappa
        return v

    def tau_sum(self, model: NetworkModel, i: int) -> float:
        return float(sum(self.tau[lk.key] for lk in model.in_links(i)))


# -- direct evaluators -------------------------------------------------------

def node_block(i: int, vars: DecisionVars, model: NetworkModel) -> np.ndarray:
    """Local dissipation block of node ``i``; feasibility needs it negative definite."""
    A, B = model.plant.A, model.plant.B
    n, m = model.n, model.plant.m
    Y = vars.Ybar[i]
    if Y.shape != (n, n):
        raise DimensionMismatch(f"Ybar_{i} has shape {Y.shape}, expected {(n, n)}")
    s = model.nodes[i]
    ts = vars.tau_sum(model, i)
    info = s.C.T @ np.linalg.solve(s.E, s.C)
    for lk in model.in_links(i):
        info = info + lk.W.T @ vars.Upsilon[lk.key] @ lk.W
    top = A.T @ Y + Y @ A + (vars.zloc[i] + ts) * np.eye(n) - info
    out = np.empty((n + m, n + m))
    out[:n, :n] = top
    out[:n, n:] = Y @ B
    out[n:, :n] = B.T @ Y
    out[n:, n:] = (ts - 1.0) * np.eye(m)
    return _sym(out)


def _psi(i: int, j: int, vars: DecisionVars, model: NetworkModel) -> np.ndarray:
    psi = np.zeros((model.n, model.n))
    if j in model.neighborhoods[i]:
        lk = model.link(i, j)
        psi -= lk.W.T @ vars.Upsilon[lk.key] @ lk.W
    if i in model.neighborhoods[j]:
        lk = model.link(j, i)
        psi -= lk.W.T @ vars.Upsilon[lk.key] @ lk.W
    return psi


def theta_offsets(model: NetworkModel) -> list[int]:
    """Start row of each node's block in the global coupling matrix."""
    offs = [0]
    for i in range(model.N):
        offs.append(offs[-1] + model.n + model.M(i))
    return offs


def theta_bar(vars: DecisionVars, model: NetworkModel, P) -> np.ndarray:
    """Global coupling matrix; feasibility needs it positive definite."""
    n, N = model.n, model.N
    P = P.P if isinstance(P, DesignWeights) else np.asarray(P, dtype=float)
    if P.shape != (n * N, n * N):
        raise DimensionMismatch(f"P has shape {P.shape}, expected {(n * N, n * N)}")
    offs = theta_offsets(model)
    T = np.zeros((offs[-1], offs[-1]))
    for i in range(N):
        o = offs[i]
        links = model.in_links(i)
        th0 = (vars.zloc[i] + vars.tau_sum(model, i)) * np.eye(n)
        th0 = th0 - vars.zglob * P[i * n:(i + 1) * n, i * n:(i + 1) * n]
        r = o + n
        for lk in links:
            U = vars.Upsilon[lk.key]
            th0 = th0 + lk.W.T @ U @ lk.W
            T[o:o + n, r:r + lk.p] = lk.W.T @ U
            T[r:r + lk.p, o:o + n] = U @ lk.W
            T[r:r + lk.p, r:r + lk.p] = np.linalg.inv(lk.G)
            r += lk.p
        T[o:o + n, o:o + n] = th0
        for j in range(i + 1, N):
            q = offs[j]
            blk = _psi(i, j, vars, model) - vars.zglob * P[i * n:(i + 1) * n, j * n:(j + 1) * n]
            T[o:o + n, q:q + n] = blk
            T[q:q + n, o:o + n] = blk.T
    return _sym(T)


def _sym(M):
    return 0.5 * (M + M.T)


# -- constraint system -------------------------------------------------------

@dataclass(frozen=True)
class Constraint:
    """``const + sum_k v[k] * lin[k]  >=  eps * I`` (PSD) or ``>= eps`` (nonneg)."""

    name: str
    family: str
    kind: str
    const: np.ndarray
    lin: np.ndarray
    eps: float
    evaluate: Callable = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    def value(self, v) -> np.ndarray:
        return self.const + np.tensordot(np.asarray(v, float), self.lin, axes=1)


@dataclass(frozen=True)
class LmiSystem:
    model: NetworkModel
    weights: DesignWeights
    layout: VarLayout
    constraints: tuple
    eps_rel: float
    zbar_min: object
    ybar_cap: float | None = None
    ybar_floor: object = None

    def by_family(self, family: str) -> list:
        return [c for c in self.constraints if c.family == family]


def _floor_map(model, zbar_min):
    """Per-link minimum ``Zbar`` eigenvalue from a scalar or a dict."""
    if isinstance(zbar_min, dict):
        return {lk.key: float(zbar_min.get(lk.key, 0.0)) for lk in model.links}
    return {lk.key: float(zbar_min) for lk in model.links}


def wants_ubound(model, zbar_min) -> bool:
    return any(v > 0 for v in _floor_map(model, zbar_min).values())


def constraint_evaluators(model: NetworkModel, weights: DesignWeights, zbar_min=0.0,
                          ybar_cap: float | None = None, ybar_floor=None):
    """``(name, family, kind, fn)`` for every constraint of the design problem.

    Each ``fn(vars)`` returns a symmetric matrix that must be positive
    (semi)definite after the margin shift, or a 1x1 matrix for scalar rows.

    ``zbar_min`` (scalar or per-link dict) requests ``Zbar_ij >= zbar_min I``
    for the recovered ``Zbar_ij = tau_ij (Upsilon_ij^{-1} - G_ij)``.  With
    ``g = lambda_max(G_ij)`` and an auxiliary bound ``Upsilon_ij <= s I``
    this holds whenever ``s <= tau / (g tau + zbar_min)``, which is the
    2x2 condition ``[[1/g - s, r], [r, g tau + zbar_min]] >= 0`` with
    ``r^2 = zbar_min / g``.  Exact when ``G_ij`` is a multiple of ``I``.

    ``ybar_cap`` adds ``Ybar_i <= ybar_cap I``.  ``ybar_floor`` replaces
    ``Ybar_i > 0`` by ``Ybar_i > ybar_floor I``; the string ``"variable"``
    makes the floor the decision variable ``kappa``.
    """
    out = []
    for i in range(model.N):
        out.append((f"node[{i}]", "node", "psd", lambda v, i=i: -node_block(i, v, model)))
    out.append(("theta", "theta", "psd", lambda v: theta_bar(v, model, weights)))
    for i in range(model.N):
        if ybar_floor == "variable":
            fn = lambda v, i=i: v.Ybar[i] - v.kappa * np.eye(model.n)  # noqa: E731
        elif ybar_floor:
            fn = lambda v, i=i: v.Ybar[i] - ybar_floor * np.eye(model.n)  # noqa: E731
        else:
            fn = lambda v, i=i: v.Ybar[i]  # noqa: E731
        out.append((f"Ybar[{i}]", "ybar", "psd", fn))
    if weights.X is not None:
        for i in range(model.N):
            out.append((f"X-Ybar[{i}]", "ybar_x", "psd",
                        lambda v, i=i: weights.X[i] - v.Ybar[i]))
    if ybar_cap is not None:
        for i in range(model.N):
            out.append((f"ybar_cap[{i}]", "ybar_cap", "psd",
                        lambda v, i=i: ybar_cap * np.eye(model.n) - v.Ybar[i]))
    for lk in model.links:
        k = lk.key
        out.append((f"Upsilon{k}", "ups_pos", "psd", lambda v, k=k: v.Upsilon[k]))
        Ginv = np.linalg.inv(lk.G)
        out.append((f"Ginv-Upsilon{k}", "ups_ub", "psd", lambda v, k=k, Gi=Ginv: Gi - v.Upsilon[k]))
    if wants_ubound(model, zbar_min):
        floors = _floor_map(model, zbar_min)
        for lk in model.links:
            k = lk.key
            zf = floors[k]
            g = float(np.linalg.eigvalsh(lk.G).max())
            r = np.sqrt(zf / g)
            out.append((f"ubound{k}", "zbar_ub", "psd",
                        lambda v, k=k, p=lk.p: v.ubound[k] * np.eye(p) - v.Upsilon[k]))
            out.append((f"zbar{k}", "zbar_hyp", "psd",
                        lambda v, k=k, g=g, r=r, zf=zf: np.array(
                            [[1.0 / g - v.ubound[k], r], [r, g * v.tau[k] + zf]])))
    for lk in model.links:
        k = lk.key
        out.append((f"tau{k}", "tau_pos", "nonneg", lambda v, k=k: np.array([[v.tau[k]]])))
    for i in range(model.N):
        out.append((f"zloc[{i}]", "zloc_pos", "nonneg", lambda v, i=i: np.array([[v.zloc[i]]])))
    out.append(("zglob", "zglob_pos", "nonneg", lambda v: np.array([[v.zglob]])))
    for i in range(model.N):
        if model.neighborhoods[i]:
            out.append((f"tau_sum[{i}]", "tau_sum", "nonneg",
                        lambda v, i=i: np.array([[1.0 - v.tau_sum(model, i)]])))
    return out


NONSTRICT_FAMILIES = ("zbar_ub", "zbar_hyp", "ybar_cap", "ybar_x")


def _eps_for(family, const, eps_rel):
    if family == "tau_pos":
        return TAU_MIN
    if family in NONSTRICT_FAMILIES:
        return 0.0
    return eps_rel * (1.0 + np.abs(const).max(initial=0.0))


def build_lmi_system(model: NetworkModel, weights: DesignWeights, eps_rel: float = EPS_REL,
                     zbar_min=0.0, ybar_cap: float | None = None, ybar_floor=None) -> LmiSystem:
    """Probe every constraint evaluator into an affine map of the flat vector.

    Options are those of :func:`constraint_evaluators`.
    """
    layout = VarLayout.for_model(model, with_ubound=wants_ubound(model, zbar_min),
                                 with_kappa=ybar_floor == "variable")
    base = DecisionVars.from_vector(layout, np.zeros(layout.size))
    probes = [DecisionVars.from_vector(layout, e) for e in np.eye(layout.size)]
    cons = []
    for name, family, kind, fn in constraint_evaluators(model, weights, zbar_min, ybar_cap,
                                                        ybar_floor):
        const = np.asarray(fn(base), dtype=float)
        lin = np.stack([np.asarray(fn(p), dtype=float) - const for p in probes])
        lin[np.abs(lin) < 1e-300] = 0.0
        cons.append(Constraint(name, family, kind, const, lin, _eps_for(family, const, eps_rel), fn))
    return LmiSystem(model, weights, layout, tuple(cons), eps_rel, zbar_min, ybar_cap, ybar_floor)


@dataclass
class MarginReport:
    """Raw margins (minimum eigenvalues / slacks) and their ε-shifted versions."""

    raw: dict
    shifted: dict

    def family_min(self) -> dict:
        out = {}
        for name, val in self.shifted.items():
            fam = _family_of(name)
            out[fam] = min(out.get(fam, np.inf), val)
        return out

    @property
    def worst(self) -> float:
        return min(self.shifted.values())

    def feasible(self, tol: float = 0.0) -> bool:
        return self.worst >= -tol


def _family_of(name):
    return name.split("[")[0].split("(")[0]


def residual_margins(vars: DecisionVars, model: NetworkModel, weights: DesignWeights,
                     eps_rel: float = EPS_REL, zbar_min=0.0,
                     ybar_cap: float | None = None, ybar_floor=None) -> MarginReport:
    """Evaluate every constraint directly on ``vars`` and report its margin.

    A raw margin is the smallest eigenvalue of the matrix that must be
    positive definite (for scalar rows, the slack itself).  The shifted
    margin subtracts the strictness level the solver enforces.
    """
    with_ub = wants_ubound(model, zbar_min)
    if with_ub and not vars.ubound:
        vars = _with_tight_ubound(vars, model)
    zero = DecisionVars.zeros(model, with_ubound=with_ub)
    raw, shifted = {}, {}
    for name, family, kind, fn in constraint_evaluators(model, weights, zbar_min, ybar_cap,
                                                        ybar_floor):
        M = np.asarray(fn(vars), dtype=float)
        val = float(np.linalg.eigvalsh(M).min()) if M.size else np.inf
        raw[name] = val
        shifted[name] = val - _eps_for(family, np.asarray(fn(zero)), eps_rel)
    return MarginReport(raw, shifted)


def _with_tight_ubound(vars, model):
    ub = {k: float(np.linalg.eigvalsh(U).max()) for k, U in vars.Upsilon.items()}
    return DecisionVars(vars.Ybar, vars.Upsilon, vars.tau, vars.zloc, vars.zglob, ub, vars.kappa)
