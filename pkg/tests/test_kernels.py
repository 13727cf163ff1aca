import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hinfnet import kernels

compiled = pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")


def dre_data(rng, n):
    A = rng.standard_normal((n, n))
    C = rng.standard_normal((1, n))
    B = rng.standard_normal((n, 1))
    return A, C.T @ C, B @ B.T, np.eye(n) * (0.5 + rng.random())


def network_data(rng, n, N, steps):
    A = rng.standard_normal((n, n)) - np.eye(n)
    Mx = np.stack([np.outer(c, c) for c in rng.standard_normal((N, n))])
    li = np.array([(i + 1) % N for i in range(N)], dtype=np.int64)
    lj = np.arange(N, dtype=np.int64)
    Nl = np.stack([0.3 * np.eye(n)] * N)
    Kx = Mx + 0.3 * np.eye(n)
    H = Kx - 0.1 * np.eye(n)
    S = np.stack([np.eye(n)] * N)
    Bw = rng.standard_normal((2 * steps + 1, n))
    u = rng.standard_normal((2 * steps + 1, N, n))
    x0 = rng.standard_normal(n)
    xh0 = rng.standard_normal((N, n))
    Q0 = np.stack([np.eye(n)] * N)
    return A, Bw, Mx, Kx, H, S, li, lj, Nl, u, x0, xh0, Q0


@compiled
@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_dre_backends_agree(n, seed):
    data = dre_data(np.random.default_rng(seed), n)
    a = kernels.rk4_dre(*data, 1e-2, 200, 1e-10, 1e6, impl="compiled")
    b = kernels.rk4_dre(*data, 1e-2, 200, 1e-10, 1e6, impl="python")
    assert a[2:] == b[2:]
    assert np.abs(a[0] - b[0]).max() <= 1e-12 * (1 + np.abs(b[0]).max())
    assert np.abs(a[1] - b[1]).max() <= 1e-10 * (1 + np.abs(b[1]).max())


@compiled
@settings(max_examples=10, deadline=None)
@given(n=st.integers(1, 3), N=st.integers(1, 4), stride=st.integers(1, 3),
       seed=st.integers(0, 2**32 - 1))
def test_network_backends_agree(n, N, stride, seed):
    steps = 60
    data = network_data(np.random.default_rng(seed), n, N, steps)
    a = kernels.rk4_network(*data, 1e-2, steps, 1e-10, 1e6, stride=stride, impl="compiled")
    b = kernels.rk4_network(*data, 1e-2, steps, 1e-10, 1e6, stride=stride, impl="python")
    assert a[3:] == b[3:]
    for x, y in zip(a[:3], b[:3]):
        assert x.shape == y.shape
        assert np.abs(x - y).max() <= 1e-12 * (1 + np.abs(y).max())


@compiled
def test_failure_status_agrees():
    # q' = q^2 escapes at t = 1
    args = (np.zeros((1, 1)), -np.eye(1), np.zeros((1, 1)), np.eye(1), 1e-3, 2000, 1e-10, 1e6)
    a = kernels.rk4_dre(*args, impl="compiled")
    b = kernels.rk4_dre(*args, impl="python")
    assert a[2] == b[2] == kernels.UNBOUNDED
    assert a[3] == b[3]


def test_stride_subsamples():
    data = network_data(np.random.default_rng(0), 2, 2, 40)
    full = kernels.rk4_network(*data, 1e-2, 40, 1e-10, 1e6, impl="python")
    sub = kernels.rk4_network(*data, 1e-2, 40, 1e-10, 1e6, stride=4, impl="python")
    np.testing.assert_array_equal(sub[0], full[0][::4])
    np.testing.assert_array_equal(sub[2], full[2][::4])


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.backend("fortran")


def test_env_forces_python():
    env = dict(os.environ, HINFNET_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from hinfnet import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
