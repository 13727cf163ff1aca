import numpy as np
import pytest

from hinfnet.errors import Phase1Infeasible
from hinfnet.lmi import DecisionVars, build_lmi_system
from hinfnet.network import chua_benchmark
from hinfnet.synthesis import (MAX_SUM_ZLOC, MAX_ZGLOB, DesignOptions, assemble_program,
                               optimize_design)


def test_stage_structure(sim1):
    rep1, rep2, rep3 = sim1.reports
    assert all(r.optimal for r in sim1.reports)
    meta = rep3.meta
    assert meta["zglob_fixed"] == pytest.approx((1 - meta["delta"]) * rep1.objective)
    v3 = DecisionVars.from_vector(rep3.layout, rep3.full_solution)
    assert v3.zglob == pytest.approx(meta["zglob_fixed"], rel=1e-12)
    assert rep3.objective == pytest.approx(v3.zloc.sum(), rel=1e-8)
    for Y in v3.Ybar:
        assert np.linalg.eigvalsh(Y).min() >= meta["ybar_floor"] - 1e-8
    assert meta["ybar_floor"] == pytest.approx(0.5 * rep2.objective)


def test_phase1_is_a_maximum(sim1):
    # any feasible phase-1 point has zglob below the reported optimum
    rep1 = sim1.rep1
    v = DecisionVars.from_vector(rep1.layout, rep1.full_solution)
    assert v.zglob == pytest.approx(rep1.objective, rel=1e-10)
    assert rep1.rel_gap <= 1e-8


def test_fixed_variable_is_removed():
    b = chua_benchmark("sim1")
    system = build_lmi_system(b.model, b.weights)
    free = assemble_program(system, MAX_ZGLOB)
    fixed = assemble_program(system, MAX_SUM_ZLOC, zglob_fixed=0.1)
    assert fixed.objective.size == free.objective.size - 1


def test_infeasible_floor():
    b = chua_benchmark("sim1")
    with pytest.raises(Phase1Infeasible) as info:
        optimize_design(b.model, b.weights, DesignOptions(zbar_min=1.0))
    assert info.value.report.status == "infeasible"
