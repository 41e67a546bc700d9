"""Shared fixtures: small hand-built and synthetic networks with planted limits."""

import numpy as np
import pytest

# One line per acceptance criterion, printed after the run so the pass/fail
# record survives output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from pfbundle import (
    RadialParams,
    SolverConfig,
    ThreePhaseNetwork,
    plant_feasible,
    plant_infeasible,
    synth_radial,
)


def build_two_bus():
    """Hand-built two-bus feeder with phase coupling on every block."""
    cpl, shunt = 0.5, 0.45
    series = np.array([
        [1.10 + 0.0j, cpl * (0.14 + 0.05j), cpl * (0.09 - 0.04j)],
        [cpl * (0.14 - 0.05j), 0.95 + 0.0j, cpl * (0.11 + 0.03j)],
        [cpl * (0.09 + 0.04j), cpl * (0.11 - 0.03j), 1.05 + 0.0j],
    ])
    shunt_a = shunt * np.eye(3) + cpl * np.array([
        [0.00, 0.02 + 0.01j, 0.00],
        [0.02 - 0.01j, 0.00, 0.015 - 0.005j],
        [0.00, 0.015 + 0.005j, 0.00],
    ])
    shunt_b = (shunt - 0.02) * np.eye(3) + cpl * np.array([
        [0.00, 0.01 - 0.02j, 0.005],
        [0.01 + 0.02j, 0.00, 0.00],
        [0.005, 0.00, 0.00],
    ])
    blocks = {
        (0, 0): series + shunt_a,
        (1, 1): series.conj().T + shunt_b,
        (0, 1): -series,
        (1, 0): -series.conj().T,
    }
    net = ThreePhaseNetwork(n_buses=2, blocks=blocks, topology="two-bus line")
    net.validate()
    return net


def build_ten_bus():
    """Random radial feeder sized so certificates come out crisp."""
    params = RadialParams(series_min=0.5, series_max=1.25, shunt=0.1)
    net, _ = synth_radial(10, seed=3, params=params)
    return net


@pytest.fixture(scope="session")
def two_bus():
    return build_two_bus()


@pytest.fixture(scope="session")
def ten_bus():
    return build_ten_bus()


@pytest.fixture(scope="session")
def two_bus_planted(two_bus):
    return plant_feasible(two_bus)


@pytest.fixture(scope="session")
def ten_bus_planted(ten_bus):
    return plant_feasible(ten_bus)


@pytest.fixture(scope="session")
def two_bus_infeasible(two_bus):
    return plant_infeasible(two_bus)


@pytest.fixture(scope="session")
def ten_bus_infeasible(ten_bus):
    return plant_infeasible(ten_bus)


@pytest.fixture(scope="session")
def tight_config():
    """Solver settings used when the primal certificate itself is under test."""
    return SolverConfig(eps=1e-12, eig_tol=1e-13, max_iters=5000)
