"""Plant, sensor nodes, communication graph and performance weights.

Node indices are zero-based throughout the package.  A link ``j -> i``
means node ``j`` sends its estimate to node ``i``, so ``j`` belongs to the
neighbourhood of ``i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NonSymmetricWeight,
    SingularNoiseMap,
    UnknownCase,
    UnknownNodeId,
)

__all__ = [
    "PlantModel",
    "SensorSpec",
    "LinkSpec",
    "NetworkModel",
    "DesignWeights",
    "Benchmark",
    "build_network",
    "laplacian",
    "consensus_weight",
    "chua_benchmark",
    "load_model",
    "model_to_json",
    "is_pd",
]


def _matrix(a, name) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def is_pd(M: np.ndarray, rtol: float = 1e-12) -> bool:
    """True when the symmetric matrix ``M`` is positive definite.

    The threshold scales with the largest entry: ``rtol * (1 + max|M|)``.
    """
    if M.size == 0:
        return True
    return float(np.linalg.eigvalsh(M).min()) > rtol * (1.0 + np.abs(M).max())


@dataclass(frozen=True)
class PlantModel:
    """Drift ``A`` (n x n) and disturbance map ``B`` (n x m)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _matrix(self.A, "A")
        B = _matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class SensorSpec:
    """Local measurement ``y = C x + D v``; ``E = D D'`` is cached."""

    C: np.ndarray
    D: np.ndarray
    E: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        C = _matrix(self.C, "C")
        D = _matrix(self.D, "D")
        if D.shape[0] != C.shape[0]:
            raise DimensionMismatch(f"D has {D.shape[0]} rows, C has {C.shape[0]}")
        E = D @ D.T
        E.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "E", E)

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class LinkSpec:
    """Message ``c = W xhat_sender + F eps`` received by ``receiver``."""

    sender: int
    receiver: int
    W: np.ndarray
    F: np.ndarray
    G: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        W = _matrix(self.W, "W")
        F = _matrix(self.F, "F")
        if F.shape[0] != W.shape[0]:
            raise DimensionMismatch(f"F has {F.shape[0]} rows, W has {W.shape[0]}")
        G = F @ F.T
        G.setflags(write=False)
        object.__setattr__(self, "sender", int(self.sender))
        object.__setattr__(self, "receiver", int(self.receiver))
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def key(self) -> tuple[int, int]:
        """``(receiver, sender)``, written ``(i, j)`` elsewhere."""
        return (self.receiver, self.sender)


@dataclass(frozen=True)
class NetworkModel:
    plant: PlantModel
    nodes: tuple[SensorSpec, ...]
    links: tuple[LinkSpec, ...]
    neighborhoods: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def N(self) -> int:
        return len(self.nodes)

    def link(self, i: int, j: int) -> LinkSpec:
        """The link carrying node ``j``'s estimate to node ``i``."""
        for lk in self.links:
            if lk.receiver == i and lk.sender == j:
                return lk
        raise KeyError((i, j))

    def in_links(self, i: int) -> tuple[LinkSpec, ...]:
        """Links received by node ``i``, ordered by ascending sender id."""
        return tuple(lk for lk in self.links if lk.receiver == i)

    def M(self, i: int) -> int:
        """Total communication row dimension at node ``i``."""
        return sum(lk.p for lk in self.in_links(i))


def build_network(plant: PlantModel, sensors: Sequence[SensorSpec],
                  links: Sequence[LinkSpec]) -> NetworkModel:
    """Validate the pieces and derive the neighbourhoods.

    Raises
    ------
    DimensionMismatch
        Matrix sizes disagree with the plant.
    SingularNoiseMap
        Some ``E_i`` or ``G_ij`` is not positive definite.
    UnknownNodeId
        A link endpoint is outside ``0..N-1``.
    """
    sensors = tuple(sensors)
    if not sensors:
        raise DimensionMismatch("a network needs at least one node")
    n = plant.n
    for i, s in enumerate(sensors):
        if s.C.shape[1] != n:
            raise DimensionMismatch(f"C_{i} has {s.C.shape[1]} columns, expected {n}")
        if not is_pd(s.E):
            raise SingularNoiseMap(f"E_{i} = D_{i} D_{i}' is not positive definite")
    N = len(sensors)
    seen = set()
    for lk in links:
        for node in (lk.sender, lk.receiver):
            if not 0 <= node < N:
                raise UnknownNodeId(f"link {lk.sender}->{lk.receiver}: node {node} not in 0..{N - 1}")
        if lk.sender == lk.receiver:
            raise UnknownNodeId(f"self-loop at node {lk.sender}")
        if lk.key in seen:
            raise DimensionMismatch(f"duplicate link {lk.sender}->{lk.receiver}")
        seen.add(lk.key)
        if lk.W.shape[1] != n:
            raise DimensionMismatch(f"W_{lk.key} has {lk.W.shape[1]} columns, expected {n}")
        if not is_pd(lk.G):
            raise SingularNoiseMap(f"G_{lk.key} = F F' is not positive definite")
    ordered = tuple(sorted(links, key=lambda lk: lk.key))
    hoods = tuple(tuple(lk.sender for lk in ordered if lk.receiver == i) for i in range(N))
    return NetworkModel(plant, sensors, ordered, hoods)


@dataclass(frozen=True)
class DesignWeights:
    """Global error weight ``P`` (nN x nN) and initial-error weights ``X_i``.

    ``X = None`` lets the design choose ``X_i = lambda_max(Ybar_i) I``, the
    smallest scalar weight for which the Riccati certificate applies.  A
    given ``X`` instead enters the design as the constraint ``Ybar_i <= X_i``.
    """

    P: np.ndarray
    X: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        P = _matrix(self.P, "P")
        if P.shape[0] != P.shape[1]:
            raise DimensionMismatch(f"P must be square, got {P.shape}")
        _check_psd(P, "P")
        Xs = None
        if self.X is not None:
            Xs = tuple(_matrix(X, f"X_{i}") for i, X in enumerate(self.X))
            for i, X in enumerate(Xs):
                _check_psd(X, f"X_{i}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "X", Xs)

    def block(self, i: int, j: int, n: int) -> np.ndarray:
        return self.P[i * n:(i + 1) * n, j * n:(j + 1) * n]


def _check_psd(M, name, tol=1e-10):
    if np.abs(M - M.T).max(initial=0.0) > 1e-12 * (1.0 + np.abs(M).max(initial=0.0)):
        raise NonSymmetricWeight(f"{name} is not symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -tol * (1.0 + np.abs(M).max()):
        raise NonSymmetricWeight(f"{name} is not positive semidefinite")


def laplacian(model: NetworkModel, reverse: bool = False) -> np.ndarray:
    """Graph Laplacian ``L`` with ``L[i, i] = l_i`` and ``L[i, j] = -1`` for j in N_i.

    With ``reverse=True`` the Laplacian of the edge-reversed graph is returned.
    """
    L = np.zeros((model.N, model.N))
    for lk in model.links:
        i, j = (lk.sender, lk.receiver) if reverse else (lk.receiver, lk.sender)
        L[i, i] += 1.0
        L[i, j] -= 1.0
    return L


def consensus_weight(model: NetworkModel, P0, X=None) -> DesignWeights:
    """Disagreement weight ``P = (L + L_rev) kron P0``.

    ``X`` (one matrix per node) is optional; see :class:`DesignWeights`.
    """
    P0 = np.array(P0, dtype=float)
    n = model.n
    if P0.shape != (n, n):
        raise DimensionMismatch(f"P0 must be {n}x{n}, got {P0.shape}")
    _check_psd(P0, "P0")
    Lsym = laplacian(model) + laplacian(model, reverse=True)
    P = np.kron(Lsym, P0)
    if X is None:
        return DesignWeights(P, None)
    if len(X) != model.N:
        raise DimensionMismatch(f"expected {model.N} initial weights, got {len(X)}")
    return DesignWeights(P, tuple(X))


# Chua circuit regime used as the five-node benchmark.
CHUA_A = [[-3.2, 10.0, 0.0], [1.0, -1.0, 1.0], [0.0, -14.87, 0.0]]
CHUA_B = [[0.4], [0.4], [0.4]]
CHUA_C_WEAK = [[0.001 * 3.1923, 0.001 * -4.6597, 0.001 * 1.0]]
CHUA_C_STRONG = [[-0.8986, 0.1312, -1.9703]]
# (receiver, sender) pairs with one-based node labels
CHUA_EDGES = [(1, 3), (2, 3), (3, 1), (3, 2), (3, 4), (4, 3), (4, 5), (5, 4)]
# P = (L + L_rev) kron (scale * I); 0.5 matches the reference gamma^2 = 0.25
CHUA_P0_SCALE = 0.5

# reference levels per case: gamma^2, gammabar_i^2, min_j lambda_min(Zbar_ij)
REFERENCE_LEVELS = {
    "sim1": {"gamma2": 0.2500,
             "gammabar2": [0.2643, 0.0185, 0.0181, 0.1313, 0.0176],
             "min_zbar": [2.6219e-4, 0.0250, 0.0158, 2.7548e-4, 0.0263]},
    "sim2": {"gamma2": 0.3116,
             "gammabar2": [0.6288, 0.0260, 0.0395, 0.2904, 0.0265],
             "min_zbar": [0.1074, 0.3416, 0.1788, 0.1000, 0.2682]},
}


class Benchmark(NamedTuple):
    model: NetworkModel
    weights: DesignWeights
    zbar_min: float


def chua_benchmark(case: str = "sim1", p0_scale: float = CHUA_P0_SCALE,
                   d_noise=None) -> Benchmark:
    """Five-node Chua-circuit benchmark.

    Parameters
    ----------
    case : {"sim1", "sim2"}
        ``sim2`` additionally requests ``Zbar_ij >= 0.1 I``.
    p0_scale : float
        ``P0 = p0_scale * I``.
    d_noise : array_like, optional
        Sensor noise map; defaults to ``[0.025, 0, 0]``.
    """
    if case not in ("sim1", "sim2"):
        raise UnknownCase(f"unknown benchmark case {case!r}; expected 'sim1' or 'sim2'")
    plant = PlantModel(CHUA_A, CHUA_B)
    if d_noise is None:
        d_noise = [[0.025, 0.0, 0.0]]
    Cs = [CHUA_C_WEAK, CHUA_C_STRONG, CHUA_C_STRONG, CHUA_C_WEAK, CHUA_C_STRONG]
    sensors = [SensorSpec(C, d_noise) for C in Cs]
    links = [LinkSpec(j - 1, i - 1, np.eye(3), 0.5 * np.eye(3)) for i, j in CHUA_EDGES]
    model = build_network(plant, sensors, links)
    weights = consensus_weight(model, p0_scale * np.eye(3))
    return Benchmark(model, weights, 0.1 if case == "sim2" else 0.0)


_MODEL_KEYS = {"plant", "nodes", "links", "weights"}


def load_model(source) -> tuple[NetworkModel, DesignWeights]:
    """Parse a model JSON document (path, file object or dict).

    ``weights`` may hold ``P`` directly or ``P0`` for the consensus weight;
    ``X`` is an optional list of initial-error weights.
    """
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source) as fh:
            doc = json.load(fh)
    unknown = set(doc) - _MODEL_KEYS
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")
    plant = PlantModel(doc["plant"]["A"], doc["plant"]["B"])
    sensors = [SensorSpec(nd["C"], nd["D"]) for nd in doc["nodes"]]
    links = [LinkSpec(lk["from"], lk["to"], lk["W"], lk["F"]) for lk in doc.get("links", [])]
    model = build_network(plant, sensors, links)
    w = doc.get("weights", {})
    X = w.get("X")
    if "P" in w:
        P = np.array(w["P"], dtype=float)
        if P.shape != (model.n * model.N,) * 2:
            raise DimensionMismatch(f"P must be {model.n * model.N} square, got {P.shape}")
        if X is not None and len(X) != model.N:
            raise DimensionMismatch(f"expected {model.N} initial weights, got {len(X)}")
        weights = DesignWeights(P, None if X is None else tuple(X))
    else:
        weights = consensus_weight(model, w.get("P0", np.eye(model.n)), X)
    return model, weights


def model_to_json(model: NetworkModel, weights: DesignWeights | None = None) -> dict:
    doc = {
        "plant": {"A": model.plant.A.tolist(), "B": model.plant.B.tolist()},
        "nodes": [{"C": s.C.tolist(), "D": s.D.tolist()} for s in model.nodes],
        "links": [{"from": lk.sender, "to": lk.receiver, "W": lk.W.tolist(), "F": lk.F.tolist()}
                  for lk in model.links],
    }
    if weights is not None:
        doc["weights"] = {"P": weights.P.tolist()}
        if weights.X is not None:
            doc["weights"]["X"] = [X.tolist() for X in weights.X]
    return doc
