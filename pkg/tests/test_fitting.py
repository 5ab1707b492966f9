import dataclasses
import json
import math

import numpy as np
import pytest

from conftest import OMEGA_RF, REF_CHARGE, REF_MASS
from needletrap.core import ELEMENTARY_CHARGE, OutOfTableRange, Particle, TrapConfig
from needletrap.fitting import (
    FitError,
    FrequencyScan,
    UnstableOperatingPoint,
    fit_scan,
    model_frequency,
    objective,
    scan_distance,
    synthetic_scan,
)
from needletrap.floquet import SeriesValidityWarning, pseudopotential_frequency

D_SCAN = np.linspace(50, 800, 12) * 1e-6
D_DENSE = np.linspace(50, 800, 76) * 1e-6


@pytest.fixture
def table_cfg(eta_table):
    return TrapConfig(v0=163.0, omega_rf=OMEGA_RF, d=50e-6, eta=eta_table)


def test_pseudopotential_limit(ref_cfg):
    # constant eta 0.25 gives q = 0.745 at 50 um; q = 0.1 at d = 50 um * sqrt(7.45)
    q50 = 8 * 0.25 * 163.0 * REF_CHARGE / ((50e-6) ** 2 * OMEGA_RF**2 * REF_MASS)
    d = 50e-6 * math.sqrt(q50 / 0.1)
    w = model_frequency(d, REF_CHARGE, 0.0, ref_cfg, REF_MASS)
    assert w == pytest.approx(0.1 * OMEGA_RF / (2 * math.sqrt(2)), rel=0.01)


def test_reference_operating_point(table_cfg):
    w = model_frequency(50e-6, REF_CHARGE, 9.0, table_cfg, REF_MASS)
    assert w / (2 * math.pi) > 30e3
    # regression value of the series model at this point
    assert w / (2 * math.pi) == pytest.approx(39914.59935368836, rel=1e-9)


def _exact_vs_series(cfg, d):
    exact = model_frequency(d, REF_CHARGE, 9.0, cfg, REF_MASS, exact=True)
    series = model_frequency(d, REF_CHARGE, 9.0, cfg, REF_MASS)
    return np.abs(series / exact - 1)


@pytest.mark.xfail(strict=True, reason="series and exact differ by 4.2 % at d = 50 um (a_z = 0.082, q_z = 0.745)")
def test_exact_and_series_agree_over_full_scan(table_cfg):
    assert np.max(_exact_vs_series(table_cfg, D_DENSE)) < 0.02


def test_exact_and_series_agree_away_from_closest_point(table_cfg):
    err = _exact_vs_series(table_cfg, D_DENSE[1:])
    assert np.max(err) < 0.02


def test_unstable_model_point(table_cfg):
    with pytest.raises(UnstableOperatingPoint, match="um"), pytest.warns(SeriesValidityWarning):
        model_frequency(50e-6, 20 * ELEMENTARY_CHARGE, 0.0, table_cfg, REF_MASS)
    w = model_frequency(D_SCAN, 20 * ELEMENTARY_CHARGE, 0.0, table_cfg, REF_MASS, on_unstable="nan", warn=False)
    assert np.isnan(w[0]) and np.all(np.isfinite(w[-3:]))


def test_noiseless_round_trip(table_cfg):
    scan = synthetic_scan(table_cfg, REF_MASS, REF_CHARGE, 9.0, D_SCAN)
    fit = fit_scan(scan)
    assert fit.converged
    assert fit.charge == pytest.approx(REF_CHARGE, rel=1e-3)
    assert fit.u0 == pytest.approx(9.0, rel=1e-3)


def test_fit_is_deterministic(table_cfg):
    scan = synthetic_scan(table_cfg, REF_MASS, REF_CHARGE, 9.0, D_SCAN, noise=0.01, seed=4)
    a, b = fit_scan(scan), fit_scan(scan)
    assert a.charge == b.charge and a.u0 == b.u0
    json.dumps(a.to_dict())


def test_doubling_sigma(table_cfg):
    scan = synthetic_scan(table_cfg, REF_MASS, REF_CHARGE, 9.0, D_SCAN, noise=0.01, seed=7)
    wide = dataclasses.replace(scan, sigma=2 * scan.sigma)
    a, b = fit_scan(scan), fit_scan(wide)
    assert b.charge == pytest.approx(a.charge, rel=1e-6)
    assert b.u0 == pytest.approx(a.u0, rel=1e-6, abs=1e-8)
    assert b.charge_sigma == pytest.approx(2 * a.charge_sigma, rel=1e-4)
    assert b.u0_sigma == pytest.approx(2 * a.u0_sigma, rel=1e-4)


def test_objective_sharp_at_truth(table_cfg):
    scan = synthetic_scan(table_cfg, REF_MASS, REF_CHARGE, 9.0, D_SCAN)
    at_truth = objective(scan, REF_CHARGE, 9.0)
    off = objective(scan, 1.1 * REF_CHARGE, 9.9)
    assert off > 0 and at_truth <= 1e-18 * off


def test_monotone_in_charge(ref_cfg):
    d = np.linspace(100, 800, 15) * 1e-6
    charges = np.linspace(1, 10, 19) * ELEMENTARY_CHARGE
    w = np.array([model_frequency(d, c, 0.0, ref_cfg, REF_MASS) for c in charges])
    assert np.all(np.diff(w, axis=0) > 0)


def test_uncertainty_shrinks_with_replication(table_cfg):
    single = synthetic_scan(table_cfg, REF_MASS, REF_CHARGE, 9.0, D_SCAN, noise=0.01, seed=1)
    n = 4
    reps = [synthetic_scan(table_cfg, REF_MASS, REF_CHARGE, 9.0, D_SCAN, noise=0.01, seed=10 + k) for k in range(n)]
    many = FrequencyScan(
        d=np.concatenate([r.d for r in reps]), omega=np.concatenate([r.omega for r in reps]),
        cfg=table_cfg, mass=REF_MASS, sigma=np.concatenate([r.sigma for r in reps]),
    )
    a, b = fit_scan(single), fit_scan(many)
    for s1, sn in ((a.charge_sigma, b.charge_sigma), (a.u0_sigma, b.u0_sigma)):
        ratio = s1 / sn
        assert math.sqrt(n) / 1.5 <= ratio <= math.sqrt(n) * 1.5


def test_unstable_guess_raises(table_cfg):
    scan = synthetic_scan(table_cfg, REF_MASS, REF_CHARGE, 9.0, D_SCAN)
    with pytest.raises(FitError, match="guess"):
        fit_scan(scan, guess=(40.0, 0.0))


def test_frequency_scan_validation(table_cfg):
    d = np.array([100e-6, 200e-6, 300e-6])
    w = np.array([1e5, 5e4, 3e4])
    FrequencyScan(d, w, table_cfg, REF_MASS)
    with pytest.raises(ValueError, match="3 distinct"):
        FrequencyScan(np.array([1e-4, 1e-4, 2e-4]), w, table_cfg, REF_MASS)
    with pytest.raises(ValueError):
        FrequencyScan(d, -w, table_cfg, REF_MASS)
    with pytest.raises(OutOfTableRange):
        FrequencyScan(d * 10, w, table_cfg, REF_MASS)


def test_scan_constant_eta_scaling(ref_cfg):
    particle = Particle(mass=REF_MASS, charge=REF_CHARGE)
    d = np.linspace(150, 800, 40) * 1e-6
    curve = scan_distance(ref_cfg, particle, 0.0, d)
    np.testing.assert_allclose(curve.q_z * d**2, curve.q_z[0] * d[0] ** 2, rtol=1e-12)
    np.testing.assert_allclose(curve.omega_pseudo * d**2, curve.omega_pseudo[0] * d[0] ** 2, rtol=1e-12)
    # secular frequency follows 1/d^2 once q is small
    far = curve.q_z < 0.1
    wd2 = curve.omega[far] * d[far] ** 2
    assert np.ptp(wd2) / wd2.mean() < 0.01
    assert np.all(curve.stable)


def test_scan_with_table_still_rises(table_cfg):
    particle = Particle(mass=REF_MASS, charge=REF_CHARGE)
    curve = scan_distance(table_cfg, particle, 9.0, D_DENSE)
    assert np.all(np.diff(curve.omega) < 0)
    assert curve.omega[0] == pytest.approx(model_frequency(50e-6, REF_CHARGE, 9.0, table_cfg, REF_MASS), rel=1e-14)


def test_scan_flags_unstable_rows(table_cfg):
    particle = Particle(mass=REF_MASS, charge=REF_CHARGE)
    d = np.linspace(25, 100, 16) * 1e-6
    curve = scan_distance(table_cfg, particle, 0.0, d)
    assert curve.d.size == d.size
    assert not curve.stable[0] and curve.stable[-1]
    assert np.all(np.isnan(curve.omega[~curve.stable]))
    assert np.all(np.isfinite(curve.omega_pseudo))
    np.testing.assert_allclose(curve.omega_pseudo, pseudopotential_frequency(curve.q_z, OMEGA_RF))
