import json
import subprocess
import sys

import numpy as np
import pytest

from needletrap.cli import main
from needletrap.io import DATA_DIR, read_boundary, read_columns, read_manifest

BUNDLED = str(DATA_DIR / "needle_trap.yaml")


def _run(*argv):
    return main([str(a) for a in argv])


def test_stability_default_range(tmp_path):
    assert _run("stability", "--out", tmp_path) == 0
    grid = read_columns(tmp_path / "stability_map.csv", ["a", "q", "stable", "beta"])
    assert grid["a"].min() == -0.2 and grid["a"].max() == 0.2 and grid["q"].max() == 1.2
    b = read_boundary(tmp_path / "boundary.csv")
    q_star = b[np.isclose(b[:, 0], 0.0), 1]
    assert q_star.size == 1 and q_star[0] == pytest.approx(0.908, abs=1e-3)
    assert (tmp_path / "manifest.json").exists()


def test_stability_with_operating_point(tmp_path):
    assert _run("stability", "--config", BUNDLED, "--a-range", -0.05, 0.05, 3, "--q-range", 0, 1, 11,
                "--out", tmp_path) == 0
    op = json.loads((tmp_path / "operating_point.json").read_text())
    assert op["z"]["q"] == pytest.approx(0.745, abs=0.01) and op["z"]["stable"]


def test_malformed_config_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("trap: {v0_volts: 163, f_rf_khz: 114, d_um: 50, voltage_typo: 3}\n")
    assert _run("scan", "--config", bad, "--out", tmp_path / "o") != 0
    assert "trap.voltage_typo" in capsys.readouterr().err


def test_bad_csv_reports_line(tmp_path, capsys):
    scan = tmp_path / "scan.csv"
    scan.write_text("d_um,f_khz\n50,40\n100,oops\n200,12\n")
    assert _run("fit", "--config", BUNDLED, "--scan", scan, "--out", tmp_path / "o") != 0
    assert "scan.csv:3" in capsys.readouterr().err


def test_scan_constant_eta_inverse_square(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("trap: {v0_vpp: 326, f_rf_khz: 114, d_um: 50, eta: 0.25}\n"
                   "particle: {charge_e: 4.85, mass_kg: 2.65e-19}\n")
    assert _run("scan", "--config", cfg, "--d-range-um", 150, 800, 27, "--out", tmp_path) == 0
    c = read_columns(tmp_path / "curve.csv", ["d_um", "f_khz", "q_z", "stable"])
    wd2 = c["f_khz"] * c["d_um"] ** 2
    assert np.ptp(wd2) / wd2.mean() < 0.005
    assert np.all(c["stable"] == 1)


def test_fit_bundled_dataset(tmp_path):
    assert _run("fit", "--config", BUNDLED, "--scan", DATA_DIR / "synthetic_scan.csv", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "fit_report.json").read_text())
    assert report["charge_e"] == pytest.approx(4.85, rel=0.05)
    assert report["u0_V"] == pytest.approx(9.0, rel=0.10)
    assert len(report["points"]) == 12 and report["converged"]


def _simulate(out, seed=3):
    return _run("simulate", "--config", BUNDLED, "--d-um", 200, "--seed", seed, "--duration-s", 2e-4,
                "--axes", "z", "--pos0-nm", 50, "--out", out)


def test_simulate_bit_identical(tmp_path):
    assert _simulate(tmp_path / "a") == 0 and _simulate(tmp_path / "b") == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert _simulate(tmp_path / "c", seed=4) == 0
    assert a != (tmp_path / "c" / "trajectory.csv").read_bytes()


def test_manifest_reproduces_run(tmp_path):
    assert _simulate(tmp_path / "a") == 0
    man = read_manifest(tmp_path / "a" / "manifest.json")
    assert man["command"] == "simulate" and man["seed"] == 3
    assert man["config"]["trap"]["d_m"] == pytest.approx(200e-6)
    argv = list(man["argv"])
    argv[argv.index("--out") + 1] = str(tmp_path / "replay")
    assert main(argv) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "replay" / "trajectory.csv").read_bytes()


def test_psd_and_libration(tmp_path):
    # 60 ms of thermal motion at d = 200 um sampled every 5 steps
    sim = tmp_path / "sim"
    assert _run("simulate", "--config", BUNDLED, "--d-um", 200, "--seed", 1, "--duration-s", 0.06,
                "--axes", "z", "--steps-per-rf", 50, "--record-every", 5, "--out", sim) == 0
    assert _run("psd", "--input", sim / "trajectory.csv", "--nperseg", 4096, "--out", tmp_path / "psd") == 0
    summary = json.loads((tmp_path / "psd" / "psd_summary.json").read_text())
    assert summary["parseval_ratio"] > 0 and summary["rbw_hz"] > 0
    f = read_columns(tmp_path / "psd" / "spectrum.csv", ["f_Hz", "psd"])
    assert f["f_Hz"][0] == 0.0

    assert _run("libration", "--config", BUNDLED, "--dumbbell", 5, 100, "--out", tmp_path / "lib") == 0
    lib = json.loads((tmp_path / "lib" / "libration.json").read_text())
    assert lib["quadrupole_gap_C_m2"] == pytest.approx(0.75 * 5 * 1.602176634e-19 * (100e-9) ** 2, rel=1e-12)
    assert lib["q_alpha"] > 0
    for sub in ("sim", "psd", "lib"):
        assert (tmp_path / sub / "manifest.json").exists()


def test_vpp_override_and_error(tmp_path, capsys):
    assert _run("stability", "--vpp", "--out", tmp_path) != 0
    assert "--vpp" in capsys.readouterr().err
    assert _run("scan", "--config", BUNDLED, "--v0-volts", 326, "--vpp", "--d-range-um", 100, 200, 3,
                "--out", tmp_path) == 0
    man = read_manifest(tmp_path / "manifest.json")
    assert man["config"]["trap"]["v0_V"] == 163.0


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "needletrap.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "needletrap" in proc.stdout
