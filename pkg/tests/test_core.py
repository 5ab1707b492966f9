import math

import numpy as np
import pytest

from needletrap.core import (
    ELEMENTARY_CHARGE,
    Environment,
    EtaTable,
    OutOfTableRange,
    Particle,
    TORR,
    TrapConfig,
    curvature,
    force,
    potential,
    sphere_mass,
)


def test_potential_vanishes_at_origin(ref_cfg):
    for t in (0.0, 1.3e-6, 7e-5):
        assert potential(ref_cfg, [0.0, 0.0, 0.0], t) == 0.0


@pytest.mark.parametrize("eps", [0.0, 0.04, 0.5, 0.99])
def test_curvature_is_traceless(eps):
    cfg = TrapConfig(v0=1.0, omega_rf=1.0, d=1.0, epsilon=eps)
    assert np.sum(curvature(cfg)) == pytest.approx(0.0, abs=1e-15)


def test_potential_hand_value():
    cfg = TrapConfig(v0=163.0, omega_rf=2 * math.pi * 114e3, d=50e-6, eta=0.25)
    assert potential(cfg, [0, 0, 10e-6], 0.0) == pytest.approx(3.26, rel=1e-12)


def test_potential_periodic_without_dc(ref_cfg):
    cfg = TrapConfig(v0=163.0, omega_rf=ref_cfg.omega_rf, d=50e-6, eta=0.25, u0=9.0)
    r = np.array([1e-6, -2e-6, 3e-6])
    t = 2.1e-6
    rf = potential(cfg, r, t, include_dc=False)
    assert potential(cfg, r, t + cfg.rf_period, include_dc=False) == pytest.approx(rf, rel=1e-9)
    dc = potential(cfg, r, t) - rf
    assert potential(cfg, r, t + 3 * cfg.rf_period) - dc == pytest.approx(rf, rel=1e-9)


def test_force_zero_at_origin_and_linear(ref_cfg, ref_particle):
    assert np.all(force(ref_cfg, ref_particle, [0, 0, 0], 0.3e-6) == 0)
    r = np.array([1e-6, 2e-6, -3e-6])
    f1 = force(ref_cfg, ref_particle, r, 1e-6)
    f2 = force(ref_cfg, ref_particle, 2 * r, 1e-6)
    np.testing.assert_allclose(f2, 2 * f1, rtol=1e-15)


def test_force_z_at_t0(ref_particle):
    cfg = TrapConfig(v0=163.0, omega_rf=2 * math.pi * 114e3, d=50e-6, eta=0.25, u0=9.0, eta_dc=0.2)
    z = 4e-6
    fz = force(cfg, ref_particle, [0, 0, z], 0.0)[2]
    expected = -ref_particle.charge * (0.25 * 163.0 + 0.2 * 9.0) * 4 * z / cfg.d**2
    assert fz == pytest.approx(expected, rel=1e-14)


def test_force_matches_finite_difference(ref_particle):
    rng = np.random.default_rng(4)
    cfg = TrapConfig(v0=120.0, omega_rf=2 * math.pi * 90e3, d=80e-6, eta=0.3, u0=-4.0, epsilon=0.1)
    for _ in range(20):
        r = rng.uniform(-5e-6, 5e-6, 3)
        t = rng.uniform(0, cfg.rf_period)
        f = force(cfg, ref_particle, r, t)
        h = 1e-9
        grad = np.array([
            (potential(cfg, r + h * e, t) - potential(cfg, r - h * e, t)) / (2 * h) for e in np.eye(3)
        ])
        np.testing.assert_allclose(f, -ref_particle.charge * grad, rtol=1e-6, atol=1e-6 * np.abs(f).max())


@pytest.mark.parametrize("kw", [
    {"v0": -1.0}, {"omega_rf": 0.0}, {"d": 0.0}, {"eta": 0.0}, {"eta": 1.5}, {"epsilon": 1.0}, {"epsilon": -0.1},
])
def test_trap_config_invariants(kw):
    base = dict(v0=1.0, omega_rf=1.0, d=1.0)
    with pytest.raises(ValueError):
        TrapConfig(**{**base, **kw})


def test_particle_sphere_convention():
    p = Particle.sphere(26.25e-9, ELEMENTARY_CHARGE)
    assert p.mass == pytest.approx(4 / 3 * math.pi * 26.25e-9**3 * 3500, rel=1e-15)
    assert p.charge_e == pytest.approx(1.0)
    with pytest.raises(ValueError, match="disagrees"):
        Particle(mass=p.mass * (1 + 1e-6), charge=0.0, radius=26.25e-9)
    Particle(mass=p.mass * (1 + 1e-10), charge=0.0, radius=26.25e-9)


def test_particle_rejects_bad_values():
    with pytest.raises(ValueError):
        Particle(mass=0.0, charge=1.0)
    with pytest.raises(ValueError, match="sum to zero"):
        Particle(mass=1.0, charge=1.0, quadrupole_eigenvalues=(-1.0, 0.0, 2.0))
    with pytest.raises(ValueError, match="Q1 <= Q2 <= Q3"):
        Particle(mass=1.0, charge=1.0, quadrupole_eigenvalues=(1.0, -0.5, -0.5))
    Particle(mass=1.0, charge=1.0, quadrupole_eigenvalues=(-0.5, -0.5, 1.0))


def test_environment():
    env = Environment.from_torr(300.0, 0.2)
    assert env.pressure == 0.2 * 133.322
    assert TORR == 133.322
    with pytest.raises(ValueError):
        Environment(temperature=-1.0)
    with pytest.raises(ValueError):
        Environment(damping_rate=-1.0)


def test_eta_table_interpolation_and_range(eta_table):
    assert eta_table(50e-6) == pytest.approx(0.25)
    assert eta_table.dc(50e-6) == pytest.approx(0.25)
    mid = eta_table(75e-6)
    assert 0.25 < mid < 0.29
    # monotone data gives a monotone interpolant
    d = np.linspace(25e-6, 1000e-6, 500)
    assert np.all(np.diff(eta_table(d)) >= 0)
    with pytest.raises(OutOfTableRange):
        eta_table(20e-6)
    with pytest.raises(OutOfTableRange):
        eta_table(1.1e-3)


def test_eta_table_validation():
    with pytest.raises(ValueError):
        EtaTable([1e-6, 1e-6], [0.2, 0.3])
    with pytest.raises(ValueError):
        EtaTable([1e-6, 2e-6], [0.2, 1.3])


def test_config_eta_sources(eta_table):
    table_dc = EtaTable(eta_table.d, eta_table.eta, eta_table.eta * 0.5)
    cfg = TrapConfig(v0=1.0, omega_rf=1.0, d=50e-6, eta=table_dc)
    assert cfg.eta_dc_at() == pytest.approx(0.125)
    cfg = TrapConfig(v0=1.0, omega_rf=1.0, d=50e-6, eta=eta_table)
    assert cfg.eta_dc_at() == pytest.approx(0.25)
    cfg = TrapConfig(v0=1.0, omega_rf=1.0, d=50e-6, eta=eta_table, eta_dc=0.1)
    assert cfg.eta_dc_at() == 0.1
    assert sphere_mass(1.0, 1.0) == pytest.approx(4 / 3 * math.pi)
