import numpy as np
import pytest

from hinfnet.filter_design import recover_design
from hinfnet.network import LinkSpec, PlantModel, SensorSpec, build_network, chua_benchmark
from hinfnet.synthesis import DesignOptions, optimize_design

ACCEPTANCE_LINES = []


class Designed:
    """Benchmark case with its design and the stage reports."""

    def __init__(self, case):
        import time

        self.case = case
        self.bench = chua_benchmark(case)
        self.model, self.weights = self.bench.model, self.bench.weights
        t0 = time.perf_counter()
        self.rep1, self.rep3 = optimize_design(self.model, self.weights,
                                               DesignOptions(zbar_min=self.bench.zbar_min))
        self.runtime = time.perf_counter() - t0
        self.design = recover_design(self.rep3, self.model, self.weights)

    @property
    def reports(self):
        return [self.rep1, self.rep3.meta["floor_report"], self.rep3]


@pytest.fixture(scope="session")
def sim1():
    return Designed("sim1")


@pytest.fixture(scope="session")
def sim2():
    return Designed("sim2")


def random_model(rng, n=2, N=3, links=True):
    """Small random network: stable-ish plant, full-rank noise maps, ring links."""
    A = rng.standard_normal((n, n)) - 1.5 * np.eye(n)
    B = rng.standard_normal((n, 1))
    sensors = [SensorSpec(rng.standard_normal((1, n)), [[0.2 + 0.3 * rng.random()]])
               for _ in range(N)]
    lks = []
    if links and N > 1:
        for i in range(N):
            j = (i + 1) % N
            lks.append(LinkSpec(j, i, np.eye(n), 0.5 * np.eye(n)))
            lks.append(LinkSpec(i, j, np.eye(n), 0.5 * np.eye(n)))
    return build_network(PlantModel(A, B), sensors, lks)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
