import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hinfnet.errors import BadDimension
from hinfnet.sdp import ConeConstraint, ConicProgram, smat, solve_program, svec


def psd(const, lins, label=""):
    return ConeConstraint("psd", np.asarray(const, float), np.asarray(lins, float), label)


def nonneg(const, lins, label=""):
    return ConeConstraint("nonneg", np.asarray(const, float), np.asarray(lins, float), label)


@given(d=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_svec_round_trip_and_inner_product(d, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    A = A + A.T
    B = rng.standard_normal((d, d))
    B = B + B.T
    assert np.abs(smat(svec(A)) - A).max() <= 1e-14
    assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B), rel=1e-12, abs=1e-12)


def test_svec_shape_errors():
    with pytest.raises(BadDimension):
        svec(np.zeros((2, 3)))
    with pytest.raises(BadDimension):
        smat(np.zeros(4))


@pytest.mark.parametrize("eps", [0.0, 1e-6, 1e-3])
def test_toy_sdp(eps):
    # maximize g subject to (1 - g) I >= eps I
    d = 3
    prog = ConicProgram(np.array([1.0]), [psd((1 - eps) * np.eye(d), [-np.eye(d)])])
    rep = solve_program(prog)
    assert rep.optimal
    assert abs(rep.objective - (1 - eps)) <= 1e-8
    assert rep.rel_gap <= 1e-8


def test_lp_only():
    # maximize x + y subject to x <= 1, y <= 2, x, y >= 0
    cons = [nonneg([1.0, 2.0, 0.0, 0.0], [[-1.0, 0.0, 1.0, 0.0], [0.0, -1.0, 0.0, 1.0]])]
    rep = solve_program(ConicProgram(np.array([1.0, 1.0]), cons))
    assert rep.optimal
    np.testing.assert_allclose(rep.solution, [1.0, 2.0], atol=1e-7)


def test_infeasible_certificate():
    # x >= 1 and x <= 0
    cons = [nonneg([-1.0], [[1.0]], "low"), psd([[0.0]], [[[-1.0]]], "high")]
    rep = solve_program(ConicProgram(np.array([1.0]), cons))
    assert rep.status == "infeasible"
    assert rep.certificate and {lab for lab, _ in rep.certificate} <= {0, 1}


def test_unbounded():
    cons = [nonneg([0.0], [[1.0]])]
    rep = solve_program(ConicProgram(np.array([1.0]), cons))
    assert rep.status == "dual_infeasible"


def test_max_min_eigenvalue():
    # maximize t subject to M - t I >= 0: optimum is lambda_min(M)
    rng = np.random.default_rng(7)
    R = rng.standard_normal((4, 4))
    M = R @ R.T
    rep = solve_program(ConicProgram(np.array([1.0]), [psd(M, [-np.eye(4)])]))
    assert rep.optimal
    assert rep.objective == pytest.approx(np.linalg.eigvalsh(M).min(), abs=1e-8)


def test_deterministic():
    rng = np.random.default_rng(1)
    R = rng.standard_normal((3, 3))
    prog = ConicProgram(np.array([1.0, 0.5]), [
        psd(R @ R.T + np.eye(3), [-np.eye(3), np.diag([1.0, -1.0, 0.0])]),
        nonneg([1.0, 1.0], [[1.0, 0.0], [0.0, -1.0]]),
    ])
    a, b = solve_program(prog), solve_program(prog)
    assert a.status == b.status == "optimal"
    np.testing.assert_array_equal(a.solution, b.solution)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_against_cvxpy(seed):
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(seed)
    d, nv = 4, 3
    base = rng.standard_normal((d, d))
    F0 = base @ base.T + np.eye(d)
    Fs = []
    for _ in range(nv):
        S = rng.standard_normal((d, d))
        Fs.append(S + S.T)
    c = rng.standard_normal(nv)
    # box keeps the program bounded
    box = nonneg(np.ones(2 * nv), np.hstack([np.eye(nv), -np.eye(nv)]))
    rep = solve_program(ConicProgram(c, [psd(F0, Fs), box]))
    x = cp.Variable(nv)
    expr = F0 + sum(x[k] * Fs[k] for k in range(nv))
    prob = cp.Problem(cp.Maximize(c @ x), [0.5 * (expr + expr.T) >> 0, cp.abs(x) <= 1])
    prob.solve(solver="CLARABEL")
    assert rep.optimal
    assert rep.objective == pytest.approx(prob.value, abs=1e-6, rel=1e-6)


def test_cone_shape_validation():
    with pytest.raises(BadDimension):
        psd(np.eye(2), np.zeros((1, 3, 3)))
    with pytest.raises(BadDimension):
        ConeConstraint("soc", np.zeros(2), np.zeros((1, 2)))
