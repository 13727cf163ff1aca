"""Filter parameters recovered from an optimal design point.

From the decision variables the recovery map gives, per link,
``Zbar_ij = tau_ij (Upsilon_ij^{-1} - G_ij)`` so that
``Ubar_ij = G_ij + Zbar_ij / tau_ij`` is the inverse of ``Upsilon_ij``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleInput, RecoveredZbarNotPD, SingularInitialWeight
from .lmi import DecisionVars
from .network import DesignWeights, NetworkModel
from .riccati import RiccatiCoefficients

ROUNDTRIP_TOL = 1e-8
MARGIN_TOL = 1e-8
DEFAULT_OFFSET = 1.0


def _key_str(k):
    return f"{k[0]},{k[1]}"


def _key_parse(s):
    a, b = s.split(",")
    return int(a), int(b)


@dataclass
class FilterDesign:
    """Per-node filter data.

    Link-indexed dictionaries use the key ``(receiver, sender)``.
    ``d`` holds the IQC offsets of each link; ``beta(i)`` is their
    ``tau``-weighted sum at node ``i``.
    """

    gamma2: float
    gammabar2: np.ndarray
    tau: dict
    Upsilon: dict
    Zbar: dict
    X: tuple
    Ybar: tuple = ()
    d: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.gammabar2)

    def tau_sum(self, i: int) -> float:
        return float(sum(t for (r, _), t in self.tau.items() if r == i))

    def R(self, i: int) -> np.ndarray:
        n = self.X[i].shape[0]
        return self.gamma2 / self.gammabar2[i] * np.eye(n)

    def Wbar(self, i: int) -> np.ndarray:
        return self.tau_sum(i) * np.eye(self.X[i].shape[0])

    def Ubar(self, key) -> np.ndarray:
        return np.linalg.inv(self.Upsilon[key])

    def beta(self, i: int, d: dict | None = None) -> float:
        d = self.d if d is None else d
        return float(sum(t * d.get(k, DEFAULT_OFFSET) for k, t in self.tau.items() if k[0] == i))

    def min_zbar_eig(self, i: int) -> float:
        vals = [np.linalg.eigvalsh(Z).min() for k, Z in self.Zbar.items() if k[0] == i]
        return float(min(vals)) if vals else float("nan")

    def with_offsets(self, d: dict) -> "FilterDesign":
        return FilterDesign(self.gamma2, self.gammabar2.copy(), dict(self.tau),
                            dict(self.Upsilon), dict(self.Zbar), self.X, self.Ybar, dict(d),
                            dict(self.provenance))

    def zero_cross_gains(self) -> "FilterDesign":
        """Copy flagged so that simulations drop every inter-node gain."""
        out = self.with_offsets(self.d)
        out.provenance["cross_gains"] = "zeroed"
        return out

    @property
    def cross_gains_zeroed(self) -> bool:
        return self.provenance.get("cross_gains") == "zeroed"

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        prov = {k: v for k, v in self.provenance.items() if _jsonable(v)}
        return {
            "gamma2": self.gamma2,
            "gammabar2": self.gammabar2.tolist(),
            "tau": {_key_str(k): v for k, v in self.tau.items()},
            "Upsilon": {_key_str(k): v.tolist() for k, v in self.Upsilon.items()},
            "Zbar": {_key_str(k): v.tolist() for k, v in self.Zbar.items()},
            "X": [x.tolist() for x in self.X],
            "Ybar": [y.tolist() for y in self.Ybar],
            "d": {_key_str(k): v for k, v in self.d.items()},
            "provenance": prov,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FilterDesign":
        known = {"gamma2", "gammabar2", "tau", "Upsilon", "Zbar", "X", "Ybar", "d", "provenance"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown design keys: {sorted(unknown)}")
        return cls(
            gamma2=float(doc["gamma2"]),
            gammabar2=np.array(doc["gammabar2"], dtype=float),
            tau={_key_parse(k): float(v) for k, v in doc["tau"].items()},
            Upsilon={_key_parse(k): np.array(v, dtype=float) for k, v in doc["Upsilon"].items()},
            Zbar={_key_parse(k): np.array(v, dtype=float) for k, v in doc["Zbar"].items()},
            X=tuple(np.array(x, dtype=float) for x in doc["X"]),
            Ybar=tuple(np.array(y, dtype=float) for y in doc.get("Ybar", [])),
            d={_key_parse(k): float(v) for k, v in doc.get("d", {}).items()},
            provenance=dict(doc.get("provenance", {})),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "FilterDesign":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
    except TypeError:
        return False
    return True


def recover_zbar(tau: float, Upsilon: np.ndarray, G: np.ndarray,
                 tol: float = ROUNDTRIP_TOL) -> np.ndarray:
    """``tau (Upsilon^{-1} - G)``, checked for positive definiteness and round trip."""
    Uinv = np.linalg.inv(Upsilon)
    Z = tau * (Uinv - G)
    Z = 0.5 * (Z + Z.T)
    if tau <= 0 or np.linalg.eigvalsh(Z).min() <= 0:
        raise RecoveredZbarNotPD("recovered Zbar is not positive definite "
                                 f"(tau={tau:.3g}, min eig={np.linalg.eigvalsh(Z).min():.3g})")
    Ubar = G + Z / tau
    err = np.abs(np.linalg.inv(Ubar) - Upsilon).max() / max(1.0, np.abs(Upsilon).max())
    if err > tol:
        raise RecoveredZbarNotPD(f"Zbar round trip off by {err:.3g}")
    return Z


def recover_design(report, model: NetworkModel, weights: DesignWeights | None = None,
                   delta: float | None = None) -> FilterDesign:
    """Filter design from an optimal phase-2 report.

    ``gamma2`` is ``(1 + delta) / zglob`` so that the global level strictly
    exceeds the optimum; ``gammabar2_i = 1 / zloc_i``.  Initial-error
    weights come from ``weights.X`` when given; otherwise
    ``X_i = lambda_max(Ybar_i) I``, which dominates ``Ybar_i`` so that the
    Riccati solution from ``Q(0) = X_i^{-1}`` stays positive definite and
    bounded.

    Raises
    ------
    InfeasibleInput
        The report is not optimal or fails the margin re-check.
    RecoveredZbarNotPD
        Some ``Upsilon_ij`` is not strictly below ``G_ij^{-1}``.
    """
    if not report.optimal:
        raise InfeasibleInput(f"report status is {report.status}, not optimal")
    if report.margins is not None and report.margins.worst < -MARGIN_TOL:
        raise InfeasibleInput(f"margin re-check failed (worst {report.margins.worst:.3g})")
    meta = report.meta or {}
    if delta is None:
        delta = meta.get("delta", 1e-3)
    v = DecisionVars.from_vector(report.layout, report.full_solution)
    if np.any(v.zloc <= 0) or v.zglob <= 0:
        raise InfeasibleInput("nonpositive attenuation variables")
    for i in range(model.N):
        if v.tau_sum(model, i) >= 1.0:
            raise InfeasibleInput(f"multiplier sum at node {i} is not below 1")
    Zbar = {}
    for lk in model.links:
        Zbar[lk.key] = recover_zbar(v.tau[lk.key], v.Upsilon[lk.key], lk.G)
    Ybar = tuple(0.5 * (Y + Y.T) for Y in v.Ybar)
    if weights is not None and weights.X is not None:
        X = weights.X
        if len(X) != model.N or any(x.shape != (model.n, model.n) for x in X):
            raise InfeasibleInput("initial-error weights do not match the model")
        x_source = "given"
    else:
        X = tuple(float(np.linalg.eigvalsh(Y).max()) * np.eye(model.n) for Y in Ybar)
        x_source = "lambda_max(Ybar)"
    prov = {k: meta[k] for k in ("zglob_opt", "zglob_fixed", "eps_rel", "tol", "feastol",
                                  "phase1_iterations", "phase2_objective", "ybar_cap",
                                  "kappa_opt", "ybar_floor")
            if k in meta}
    prov.update(X_source=x_source, delta=delta, zglob=float(v.zglob), zloc=v.zloc.tolist(),
                phase2_iterations=report.iterations, rel_gap=report.rel_gap)
    return FilterDesign(
        gamma2=(1.0 + delta) / float(v.zglob),
        gammabar2=1.0 / v.zloc,
        tau={k: float(t) for k, t in v.tau.items()},
        Upsilon={k: np.array(U) for k, U in v.Upsilon.items()},
        Zbar=Zbar,
        X=tuple(np.array(x) for x in X),
        Ybar=Ybar,
        d={lk.key: DEFAULT_OFFSET for lk in model.links},
        provenance=prov,
    )


def information_kernel(design: FilterDesign, model: NetworkModel, i: int) -> np.ndarray:
    """``C'E^{-1}C + sum_j W'Upsilon W - gamma^{-2} R_i - Wbar_i`` at node ``i``."""
    s = model.nodes[i]
    H = s.C.T @ np.linalg.solve(s.E, s.C)
    for lk in model.in_links(i):
        H = H + lk.W.T @ design.Upsilon[lk.key] @ lk.W
    gR = design.R(i) / design.gamma2
    ident = np.eye(model.n) / design.gammabar2[i]
    if np.abs(gR - ident).max() > 1e-12 * max(1.0, np.abs(ident).max()):
        raise AssertionError("gamma^-2 R_i differs from gammabar_i^-2 I")
    return H - ident - design.Wbar(i)


def dre_coefficients(design: FilterDesign, model: NetworkModel, i: int) -> RiccatiCoefficients:
    """Riccati data ``(A, H_i, S_i, Q0_i)`` of node ``i``.

    Raises
    ------
    SingularInitialWeight
        The initial-error weight ``X_i`` is not invertible.
    """
    X = design.X[i]
    ev = np.linalg.eigvalsh(0.5 * (X + X.T))
    if ev.min() <= 1e-12 * max(1.0, ev.max()):
        raise SingularInitialWeight(f"X_{i} is singular; Q(0) = X^-1 is undefined")
    ts = design.tau_sum(i)
    if ts >= 1.0:
        raise InfeasibleInput(f"multiplier sum at node {i} is not below 1")
    B = model.plant.B
    H = information_kernel(design, model, i)
    S = B @ B.T / (1.0 - ts)
    Q0 = np.linalg.inv(X)
    return RiccatiCoefficients(model.plant.A, 0.5 * (H + H.T), S, 0.5 * (Q0 + Q0.T))
