"""Backend selection for the RK4 kernels.

The compiled extension is used when it imports; setting the environment
variable ``HINFNET_PURE=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

OK, LOST_POSITIVITY, UNBOUNDED = _kernels_py.OK, _kernels_py.LOST_POSITIVITY, _kernels_py.UNBOUNDED


def _load_compiled():
    if os.environ.get("HINFNET_PURE", "").strip() not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
BACKEND = "compiled" if _compiled is not None else "python"


def backend(name: str | None = None):
    """Kernel module for ``name`` (``"compiled"``, ``"python"`` or the default)."""
    if name is None:
        name = BACKEND
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _c(a, dtype=float):
    return np.ascontiguousarray(a, dtype=dtype)


def rk4_dre(A, H, S, Q0, dt, nsteps, pd_tol, bound_tol, impl=None):
    return backend(impl).rk4_dre(_c(A), _c(H), _c(S), _c(Q0), float(dt), int(nsteps),
                                 float(pd_tol), float(bound_tol))


def rk4_network(A, Bw_half, Mx, Kx, H, S, li, lj, Nl, u_half, x0, xh0, Q0,
                dt, nsteps, pd_tol, bound_tol, stride=1, impl=None):
    n = np.shape(A)[0]
    Nl = _c(Nl).reshape(-1, n, n)
    return backend(impl).rk4_network(
        _c(A), _c(Bw_half), _c(Mx), _c(Kx), _c(H), _c(S), _c(li, np.int64), _c(lj, np.int64),
        Nl, _c(u_half), _c(x0), _c(xh0), _c(Q0), float(dt), int(nsteps), float(pd_tol),
        float(bound_tol), int(stride))
