import math

import numpy as np
import pytest

from needletrap.core import ELEMENTARY_CHARGE, EtaTable, Particle, TrapConfig

OMEGA_RF = 2 * math.pi * 114e3
REF_MASS = 2.65e-19
REF_CHARGE = 4.85 * ELEMENTARY_CHARGE

ACCEPTANCE_LINES = []


@pytest.fixture
def ref_cfg():
    return TrapConfig(v0=163.0, omega_rf=OMEGA_RF, d=50e-6, eta=0.25)


@pytest.fixture
def ref_particle():
    return Particle(mass=REF_MASS, charge=REF_CHARGE)


@pytest.fixture
def diamond():
    # 52.5 nm diameter diamond sphere
    return Particle.sphere(26.25e-9, REF_CHARGE)


@pytest.fixture
def eta_table():
    d = np.array([25, 50, 100, 200, 400, 600, 800, 1000]) * 1e-6
    return EtaTable(d, [0.20, 0.25, 0.29, 0.32, 0.34, 0.35, 0.355, 0.36])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":abc"))):
            terminalreporter.write_line(line)
