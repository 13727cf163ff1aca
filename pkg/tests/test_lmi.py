import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hinfnet.errors import DimensionMismatch
from hinfnet.lmi import (DecisionVars, VarLayout, build_lmi_system, node_block,
                         residual_margins, sym_from_entries, sym_to_entries, theta_bar)
from hinfnet.network import (LinkSpec, PlantModel, SensorSpec, build_network, chua_benchmark,
                             consensus_weight)


@given(p=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_svec_round_trip(p, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((p, p))
    M = M + M.T
    back = sym_from_entries(sym_to_entries(M), p)
    assert np.abs(back - M).max() <= 1e-14
    v = rng.standard_normal(p * (p + 1) // 2)
    assert np.abs(sym_to_entries(sym_from_entries(v, p)) - v).max() <= 1e-14


def _random_vector(layout, rng):
    return rng.standard_normal(layout.size)


@pytest.mark.parametrize("options", [
    {},
    {"zbar_min": 0.1},
    {"zbar_min": 0.1, "ybar_cap": 5.0, "ybar_floor": "variable"},
    {"zbar_min": {(2, 0): 0.3}, "ybar_floor": 0.01},
])
def test_affine_map_matches_direct_evaluation(options):
    b = chua_benchmark("sim1")
    system = build_lmi_system(b.model, b.weights, **options)
    rng = np.random.default_rng(3)
    for _ in range(3):
        v = _random_vector(system.layout, rng)
        vars = DecisionVars.from_vector(system.layout, v)
        for c in system.constraints:
            direct = np.asarray(c.evaluate(vars), dtype=float)
            scale = 1.0 + np.abs(direct).max()
            assert np.abs(c.value(v) - direct).max() <= 1e-10 * scale, c.name


def test_layout_round_trip():
    b = chua_benchmark("sim1")
    layout = VarLayout.for_model(b.model, with_ubound=True, with_kappa=True)
    v = np.random.default_rng(0).standard_normal(layout.size)
    back = DecisionVars.from_vector(layout, v).to_vector(layout)
    np.testing.assert_array_equal(back, v)
    with pytest.raises(DimensionMismatch):
        DecisionVars.from_vector(layout, v[:-1])


def _scalar_pair():
    plant = PlantModel([[0.5]], [[2.0]])
    sensors = [SensorSpec([[1.5]], [[0.5]]), SensorSpec([[0.0]], [[1.0]])]
    links = [LinkSpec(0, 1, [[1.0]], [[2.0]])]
    return build_network(plant, sensors, links)


def test_node_block_scalar_by_hand():
    m = _scalar_pair()
    vars = DecisionVars.zeros(m)
    vars.Ybar = [np.array([[3.0]]), np.array([[2.0]])]
    vars.Upsilon = {(1, 0): np.array([[0.1]])}
    vars.tau = {(1, 0): 0.4}
    vars.zloc = np.array([0.7, 0.2])
    # node 0, no neighbours: [2 a Y + zloc - c^2/e, Y b; Y b, -1]
    expect0 = np.array([[2 * 0.5 * 3.0 + 0.7 - 1.5 ** 2 / 0.25, 6.0], [6.0, -1.0]])
    np.testing.assert_allclose(node_block(0, vars, m), expect0, atol=1e-14)
    # node 1: sensor blind, one link with w = 1
    expect1 = np.array([[2 * 0.5 * 2.0 + 0.2 + 0.4 - 0.1, 4.0], [4.0, 0.4 - 1.0]])
    np.testing.assert_allclose(node_block(1, vars, m), expect1, atol=1e-14)


def test_theta_bar_scalar_by_hand():
    m = _scalar_pair()
    w = consensus_weight(m, [[1.0]])
    vars = DecisionVars.zeros(m)
    vars.Upsilon = {(1, 0): np.array([[0.1]])}
    vars.tau = {(1, 0): 0.4}
    vars.zloc = np.array([0.7, 0.2])
    vars.zglob = 0.05
    T = theta_bar(vars, m, w)
    # blocks: node 0 state; node 1 state, node 1 link message
    P = w.P
    expect = np.array([
        [0.7 - 0.05 * P[0, 0], -0.1 - 0.05 * P[0, 1], 0.0],
        [-0.1 - 0.05 * P[1, 0], 0.2 + 0.4 + 0.1 - 0.05 * P[1, 1], 0.1],
        [0.0, 0.1, 1.0 / 4.0],
    ])
    np.testing.assert_allclose(T, expect, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_margins_of_random_points_match_eigenvalues(seed):
    b = chua_benchmark("sim1")
    system = build_lmi_system(b.model, b.weights)
    v = np.random.default_rng(seed).standard_normal(system.layout.size)
    vars = DecisionVars.from_vector(system.layout, v)
    rep = residual_margins(vars, b.model, b.weights)
    for c in system.constraints:
        ev = np.linalg.eigvalsh(c.value(v)).min()
        assert abs(rep.raw[c.name] - ev) <= 1e-9 * (1 + abs(ev))
        assert rep.shifted[c.name] == pytest.approx(rep.raw[c.name] - c.eps)
