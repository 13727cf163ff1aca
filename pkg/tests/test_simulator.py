import json

import numpy as np
import pytest
from conftest import random_model
from scipy.integrate import solve_ivp

from hinfnet.filter_design import FilterDesign, dre_coefficients
from hinfnet.network import build_network
from hinfnet.riccati import integrate_dre
from hinfnet.simulator import (Scenario, SignalSpec, attenuation_report, noise_scenario,
                               run_scenario, trial_rng)


def manual_design(model, rng, zloc=0.1, tau=0.1):
    """Feasible-looking filter data with no optimization behind it."""
    n = model.n
    U = {}
    Z = {}
    for lk in model.links:
        Zk = np.eye(n) * (0.5 + rng.random())
        U[lk.key] = np.linalg.inv(lk.G + Zk / tau)
        Z[lk.key] = Zk
    X = tuple(np.eye(n) * (1.0 + rng.random()) for _ in range(model.N))
    return FilterDesign(0.5, np.full(model.N, 1 / zloc), {k: tau for k in U}, U, Z, X)


def smooth_scenario(model, rng, t_final=5.0, dt=1e-3):
    x0 = rng.standard_normal(model.n)
    xi = x0 + rng.standard_normal((model.N, model.n))

    def sine(dim):
        return SignalSpec("windowed_sine", dim, amplitude=rng.random() + 0.2,
                          frequency=0.2 + rng.random(), t_on=0.0, t_off=0.6 * t_final)

    w = sine(model.plant.m)
    v = [sine(s.D.shape[1]) for s in model.nodes]
    eps = {lk.key: sine(lk.F.shape[1]) for lk in model.links}
    return Scenario(x0, xi, w, v, eps, t_final, dt)


def error_oracle(model, design, sc):
    """Integrate e_i and Q_i directly from the error equations."""
    n, N = model.n, model.N
    coeffs = [dre_coefficients(design, model, i) for i in range(N)]
    w_s, v_s, eps_s = sc.signals(model)
    A, B = model.plant.A, model.plant.B

    def rhs(t, z):
        e = z[:N * n].reshape(N, n)
        Q = z[N * n:].reshape(N, n, n)
        tt = np.array([t])
        w = w_s.sample(tt)[0]
        de = np.empty_like(e)
        dQ = np.empty_like(Q)
        for i, s in enumerate(model.nodes):
            Ei = np.linalg.inv(s.E)
            v = v_s[i].sample(tt)[0]
            g = s.C.T @ Ei @ (s.D @ v - s.C @ e[i])
            for lk in model.in_links(i):
                eps = eps_s[lk.key].sample(tt)[0]
                g = g + lk.W.T @ design.Upsilon[lk.key] @ (lk.W @ (e[lk.sender] - e[i]) + lk.F @ eps)
            de[i] = A @ e[i] - B @ w + Q[i] @ g
            c = coeffs[i]
            dQ[i] = A @ Q[i] + Q[i] @ A.T - Q[i] @ c.H @ Q[i] + c.S
        return np.concatenate([de.ravel(), dQ.ravel()])

    Q0 = np.stack([c.Q0 for c in coeffs])
    z0 = np.concatenate([(sc.xi - sc.x0).ravel(), Q0.ravel()])
    K = int(round(sc.t_final / sc.dt))
    t = np.arange(K + 1) * sc.dt
    sol = solve_ivp(rhs, (0, sc.t_final), z0, method="DOP853", t_eval=t, rtol=1e-12,
                    atol=1e-13, max_step=0.05)
    assert sol.success
    return sol.y[:N * n].T.reshape(-1, N, n), sol.y[N * n:].T.reshape(-1, N, n, n)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_error_dynamics_oracle(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n=2, N=3)
    design = manual_design(model, rng)
    sc = smooth_scenario(model, rng)
    res = run_scenario(model, design, sc)
    e_ref, Q_ref = error_oracle(model, design, sc)
    assert np.abs(res.e - e_ref).max() <= 1e-8
    assert np.abs(res.Q - Q_ref).max() <= 1e-8


def test_zero_error_stays_zero(sim1):
    x0 = np.array([0.3, -0.2, 0.1])
    sc = Scenario(x0, np.tile(x0, (5, 1)), t_final=2.0)
    res = run_scenario(sim1.model, sim1.design, sc)
    assert np.abs(res.e).max() <= 1e-13
    rep = attenuation_report(res, sim1.model, sim1.design, sim1.weights)
    assert rep.lhs_global <= 1e-25 and rep.ratio <= 1e-20
    assert max(rep.d_star.values()) <= 1e-20
    assert rep.p2_pass and rep.p3_pass


def test_lone_node_matches_standalone_filter():
    rng = np.random.default_rng(5)
    model = random_model(rng, n=2, N=3, links=False)
    design = manual_design(model, rng)
    sc = smooth_scenario(model, rng, t_final=2.0, dt=1e-3)
    res = run_scenario(model, design, sc, substeps=1)
    for i in range(model.N):
        traj = integrate_dre(dre_coefficients(design, model, i), 2.0, dt=1e-3)
        assert np.abs(res.Q[:, i] - traj.Q).max() <= 1e-12
    solo_model = build_network(model.plant, [model.nodes[1]], [])
    solo_design = FilterDesign(design.gamma2, design.gammabar2[1:2], {}, {}, {}, (design.X[1],))
    solo_sc = Scenario(sc.x0, sc.xi[1:2], sc.w, [sc.v[1]], {}, sc.t_final, sc.dt)
    solo = run_scenario(solo_model, solo_design, solo_sc, substeps=1)
    np.testing.assert_allclose(res.xhat[:, 1], solo.xhat[:, 0], rtol=0, atol=1e-12)


def test_cross_gain_removal_decouples_estimates():
    rng = np.random.default_rng(8)
    model = random_model(rng, n=2, N=3)
    design = manual_design(model, rng)
    sc = smooth_scenario(model, rng, t_final=2.0)
    a = run_scenario(model, design, sc, cross_gains=False, substeps=1)
    sc2 = Scenario(sc.x0, sc.xi + np.array([[0.0, 0.0], [5.0, -3.0], [0.0, 0.0]]), sc.w, sc.v,
                   sc.eps, sc.t_final, sc.dt)
    b = run_scenario(model, design, sc2, cross_gains=False, substeps=1)
    # moving node 1's start leaves the others untouched
    np.testing.assert_array_equal(a.xhat[:, [0, 2]], b.xhat[:, [0, 2]])
    c = run_scenario(model, design, sc2, substeps=1)
    assert np.abs(c.xhat[:, 0] - b.xhat[:, 0]).max() > 1e-6
    assert run_scenario(model, design.zero_cross_gains(), sc, substeps=1).cross_gains is False


def test_eta_identity(sim1):
    sc = noise_scenario(sim1.model, 3, 0, t_final=2.0)
    res = run_scenario(sim1.model, sim1.design, sc)
    for lk in sim1.model.links:
        np.testing.assert_array_equal(res.eta(sim1.model)[lk.key], res.e[:, lk.sender] @ lk.W.T)


def test_quadrature_order():
    # trapezoidal energy of the Hann-windowed sine against a fine reference
    s = SignalSpec("windowed_sine", 2, amplitude=1.3, frequency=0.7, t_on=0.0, t_off=4.0)
    from scipy.integrate import quad, trapezoid

    ref = quad(lambda u: float((s.sample([u]) ** 2).sum()), 0, 4.0, limit=400,
               epsabs=1e-13)[0]
    errs = []
    for dt in (0.04, 0.02, 0.01):
        t = np.arange(int(round(5.0 / dt)) + 1) * dt
        errs.append(abs(trapezoid((s.sample(t) ** 2).sum(axis=1), t) - ref))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert slopes.min() >= 1.8


def test_hann_signal_and_support():
    s = SignalSpec("windowed_sine", 1, amplitude=2.0, frequency=0.25, t_on=1.0, t_off=3.0)
    t = np.array([0.5, 1.0, 2.0, 3.0, 4.0])
    vals = s.sample(t)[:, 0]
    assert vals[0] == vals[1] == vals[3] == vals[4] == 0.0
    assert vals[2] == pytest.approx(2.0 * np.sin(2 * np.pi * 0.25 * 2.0))
    n = SignalSpec("windowed_noise", 3, std=1.0, seed=11, t_on=0.0, t_off=2.0)
    tt = np.linspace(0, 3, 301)
    a, b = n.sample(tt), n.sample(tt)
    np.testing.assert_array_equal(a, b)
    assert np.all(a[tt >= 2.0] == 0) and np.abs(a).max() > 0
    p = SignalSpec("pulse", 1, amplitude=1.5, t_on=0.2, t_off=0.4)
    assert p.sample([0.1, 0.2, 0.39, 0.4])[:, 0].tolist() == [0.0, 1.5, 1.5, 0.0]
    with pytest.raises(ValueError):
        SignalSpec("chirp", 1)
    with pytest.raises(ValueError):
        SignalSpec("pulse", 1, t_on=1.0, t_off=1.0)


def test_scenario_json_and_validation(sim1, tmp_path):
    sc = noise_scenario(sim1.model, 1, 2, t_final=4.0)
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(sc.to_json()))
    back = Scenario.load(path)
    assert back.to_json() == sc.to_json()
    with pytest.raises(ValueError, match="unknown scenario keys"):
        Scenario.from_json({**sc.to_json(), "extra": 1})
    late = SignalSpec("pulse", 1, amplitude=1.0, t_on=0.0, t_off=3.5)
    with pytest.raises(ValueError, match="0.8"):
        Scenario(sc.x0, sc.xi, w=late, t_final=4.0)
    from hinfnet.errors import DimensionMismatch

    with pytest.raises(DimensionMismatch):
        run_scenario(sim1.model, sim1.design, Scenario(sc.x0, sc.xi[:2], t_final=1.0))


def test_deterministic_and_substep_refinement(sim1):
    sc = noise_scenario(sim1.model, 7, 1, t_final=3.0)
    a = run_scenario(sim1.model, sim1.design, sc)
    b = run_scenario(sim1.model, sim1.design, sc)
    np.testing.assert_array_equal(a.xhat, b.xhat)
    assert a.substeps >= 1
    c = run_scenario(sim1.model, sim1.design, sc, substeps=2 * a.substeps)
    assert np.abs(c.xhat - a.xhat).max() <= 1e-6 * (1 + np.abs(a.xhat).max())


def test_backends_give_same_run(sim1):
    from hinfnet import kernels

    if kernels.BACKEND != "compiled":
        pytest.skip("extension not built")
    sc = noise_scenario(sim1.model, 2, 0, t_final=1.0)
    a = run_scenario(sim1.model, sim1.design, sc, impl="compiled")
    b = run_scenario(sim1.model, sim1.design, sc, impl="python")
    assert np.abs(a.xhat - b.xhat).max() <= 1e-10 * (1 + np.abs(b.xhat).max())


def test_trial_streams_independent():
    a = trial_rng(0, 0).standard_normal(4)
    assert not np.array_equal(a, trial_rng(0, 1).standard_normal(4))
    np.testing.assert_array_equal(a, trial_rng(0, 0).standard_normal(4))


def test_csv_columns(sim1, tmp_path):
    sc = Scenario(np.zeros(3), np.ones((5, 3)), t_final=0.01)
    res = run_scenario(sim1.model, sim1.design, sc)
    path = tmp_path / "traj.csv"
    res.to_csv(path)
    rows = path.read_text().splitlines()
    head = rows[0].split(",")
    assert head[:4] == ["t", "x0", "x1", "x2"] and head[-1] == "minEigQ4"
    assert len(head) == 1 + 3 + 15 + 15 + 5 and len(rows) == 11 + 1
