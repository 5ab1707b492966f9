"""Configuration files, CSV/JSON exchange formats and run manifests.

This is the only place where lab units appear. Config keys carry explicit
unit suffixes::

    trap:
      v0_volts: 163          # or v0_vpp: 326 (peak-to-peak, halved)
      f_rf_khz: 114          # or omega_rf_rad_s
      u0_volts: 9
      d_um: 50
      eta: 0.25              # or eta_table: eta_table.csv (relative to the config)
      eta_dc: 0.25           # optional, defaults to eta
      epsilon: 0.04
    particle:
      charge_e: 4.85         # or charge_c
      radius_nm: 26.25       # or diameter_nm
      density_kg_m3: 3500
      # mass_kg: 2.65e-19    # instead of a radius; both must agree if given
    environment:
      temperature_k: 300
      pressure_torr: 0.2     # or pressure_pa
      damping_rate_s: 3000   # optional, overrides the pressure closure
"""

from __future__ import annotations

import csv
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from .core import (
    ELEMENTARY_CHARGE,
    TORR,
    Environment,
    EtaTable,
    Particle,
    TrapConfig,
    sphere_mass,
)
from .libration import PointCharges, PointMasses

KHZ = 1e3
UM = 1e-6
NM = 1e-9
DATA_DIR = Path(__file__).with_name("data")


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


class DataFileError(ValueError):
    """Malformed data file; the message carries ``path:line`` context."""


def toolkit_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__

        return __version__


# ---------------------------------------------------------------------------
# configuration

TRAP_KEYS = {
    "v0_volts", "v0_vpp", "f_rf_khz", "omega_rf_rad_s", "u0_volts", "d_um",
    "eta", "eta_table", "eta_dc", "epsilon",
}
PARTICLE_KEYS = {
    "charge_e", "charge_c", "radius_nm", "diameter_nm", "density_kg_m3", "mass_kg",
    "quadrupole_eigenvalues_c_m2", "largest_inertia_kg_m2",
}
ENVIRONMENT_KEYS = {
    "temperature_k", "pressure_torr", "pressure_pa", "damping_rate_s", "gas_molar_mass_kg_mol",
}
SECTIONS = {"trap": TRAP_KEYS, "particle": PARTICLE_KEYS, "environment": ENVIRONMENT_KEYS}


@dataclass
class RunConfig:
    trap: TrapConfig | None = None
    particle: Particle | None = None
    environment: Environment = field(default_factory=Environment)
    source: str | None = None

    def require_trap(self) -> TrapConfig:
        if self.trap is None:
            raise ConfigError("config has no 'trap' section")
        return self.trap

    def require_particle(self) -> Particle:
        if self.particle is None:
            raise ConfigError("config has no 'particle' section")
        return self.particle


def _number(section, key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{section}.{key}: must be finite")
    return value


def _exclusive(section, raw, *keys):
    present = [k for k in keys if k in raw]
    if len(present) > 1:
        raise ConfigError(f"{section}: give only one of {', '.join(present)}")
    return present[0] if present else None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from exc
    return parse_config(raw or {}, base=path.parent, source=str(path))


def parse_config(raw: dict, base: Path | None = None, source: str | None = None) -> RunConfig:
    """Build SI model objects from a nested mapping with unit-suffixed keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping with trap/particle/environment sections")
    for section, value in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{section}: expected a mapping")
        unknown = sorted(set(value) - SECTIONS[section])
        if unknown:
            raise ConfigError(f"unknown key {section}.{unknown[0]}")
    base = Path(".") if base is None else Path(base)
    cfg = RunConfig(source=source)
    try:
        if "trap" in raw:
            cfg.trap = _parse_trap(raw["trap"], base)
        if "particle" in raw:
            cfg.particle = _parse_particle(raw["particle"])
        if "environment" in raw:
            cfg.environment = _parse_environment(raw["environment"])
    except (ConfigError, DataFileError):
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _parse_trap(raw, base: Path) -> TrapConfig:
    s = "trap"
    kv = _exclusive(s, raw, "v0_volts", "v0_vpp")
    if kv is None:
        raise ConfigError("trap.v0_volts (or trap.v0_vpp) is required")
    v0 = _number(s, kv, raw[kv]) / (2.0 if kv == "v0_vpp" else 1.0)
    kf = _exclusive(s, raw, "f_rf_khz", "omega_rf_rad_s")
    if kf is None:
        raise ConfigError("trap.f_rf_khz (or trap.omega_rf_rad_s) is required")
    omega = _number(s, kf, raw[kf])
    if kf == "f_rf_khz":
        omega *= 2 * math.pi * KHZ
    if "d_um" not in raw:
        raise ConfigError("trap.d_um is required")
    d = _number(s, "d_um", raw["d_um"]) * UM
    ke = _exclusive(s, raw, "eta", "eta_table")
    if ke == "eta_table":
        table_path = Path(raw["eta_table"])
        if not table_path.is_absolute():
            table_path = base / table_path
        eta = read_eta_table(table_path)
    elif ke == "eta":
        eta = _number(s, "eta", raw["eta"])
    else:
        eta = 1.0
    eta_dc = _number(s, "eta_dc", raw["eta_dc"]) if "eta_dc" in raw else None
    u0 = _number(s, "u0_volts", raw.get("u0_volts", 0.0))
    eps = _number(s, "epsilon", raw.get("epsilon", 0.0))
    return TrapConfig(v0=v0, omega_rf=omega, d=d, eta=eta, u0=u0, eta_dc=eta_dc, epsilon=eps)


def _parse_particle(raw) -> Particle:
    s = "particle"
    kq = _exclusive(s, raw, "charge_e", "charge_c")
    if kq is None:
        raise ConfigError("particle.charge_e (or particle.charge_c) is required")
    charge = _number(s, kq, raw[kq]) * (ELEMENTARY_CHARGE if kq == "charge_e" else 1.0)
    kr = _exclusive(s, raw, "radius_nm", "diameter_nm")
    radius = None
    if kr is not None:
        radius = _number(s, kr, raw[kr]) * NM / (2.0 if kr == "diameter_nm" else 1.0)
    density = _number(s, "density_kg_m3", raw.get("density_kg_m3", 3500.0))
    if "mass_kg" in raw:
        mass = _number(s, "mass_kg", raw["mass_kg"])
    elif radius is not None:
        mass = sphere_mass(radius, density)
    else:
        raise ConfigError("particle.mass_kg or particle.radius_nm is required")
    quad = raw.get("quadrupole_eigenvalues_c_m2")
    if quad is not None:
        if not isinstance(quad, list) or len(quad) != 3:
            raise ConfigError("particle.quadrupole_eigenvalues_c_m2: expected three numbers")
        quad = tuple(_number(s, "quadrupole_eigenvalues_c_m2", v) for v in quad)
    inertia = raw.get("largest_inertia_kg_m2")
    if inertia is not None:
        inertia = _number(s, "largest_inertia_kg_m2", inertia)
    return Particle(mass=mass, charge=charge, radius=radius, density=density,
                    quadrupole_eigenvalues=quad, largest_inertia=inertia)


def _parse_environment(raw) -> Environment:
    s = "environment"
    kp = _exclusive(s, raw, "pressure_torr", "pressure_pa")
    pressure = 0.0
    if kp is not None:
        pressure = _number(s, kp, raw[kp]) * (TORR if kp == "pressure_torr" else 1.0)
    kw = {}
    if "gas_molar_mass_kg_mol" in raw:
        kw["gas_molar_mass"] = _number(s, "gas_molar_mass_kg_mol", raw["gas_molar_mass_kg_mol"])
    damping = raw.get("damping_rate_s")
    return Environment(
        temperature=_number(s, "temperature_k", raw.get("temperature_k", 0.0)),
        pressure=pressure,
        damping_rate=None if damping is None else _number(s, "damping_rate_s", damping),
        **kw,
    )


def config_to_dict(cfg: RunConfig) -> dict:
    """SI-normalised view of a run configuration, for manifests."""
    out = {}
    if cfg.trap is not None:
        t = cfg.trap
        out["trap"] = {
            "v0_V": t.v0, "omega_rf_rad_s": t.omega_rf, "u0_V": t.u0, "d_m": t.d,
            "eta": _eta_repr(t.eta), "eta_dc": _eta_repr(t.eta_dc), "epsilon": t.epsilon,
        }
    if cfg.particle is not None:
        p = cfg.particle
        out["particle"] = {
            "mass_kg": p.mass, "charge_C": p.charge, "radius_m": p.radius, "density_kg_m3": p.density,
            "quadrupole_eigenvalues_C_m2": p.quadrupole_eigenvalues, "largest_inertia_kg_m2": p.largest_inertia,
        }
    out["environment"] = asdict(cfg.environment)
    out["source"] = cfg.source
    return out


def _eta_repr(eta):
    if isinstance(eta, EtaTable):
        return {"d_m": eta.d.tolist(), "eta": eta.eta.tolist(),
                "eta_dc": None if eta.eta_dc is None else eta.eta_dc.tolist()}
    return eta


# ---------------------------------------------------------------------------
# CSV helpers


def read_columns(path, required, optional=()) -> dict[str, np.ndarray]:
    """Read a headed numeric CSV; errors carry ``path:line`` context.

    Lines starting with ``#`` are skipped.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataFileError(f"{path}: cannot open: {exc.strerror}") from exc
    with fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1)
                if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise DataFileError(f"{path}: empty file")
    head_line, header = rows[0]
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataFileError(f"{path}:{head_line}: missing column(s) {', '.join(missing)}; header is {header}")
    wanted = [c for c in (*required, *optional) if c in header]
    idx = {c: header.index(c) for c in wanted}
    data = {c: [] for c in wanted}
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise DataFileError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        for c in wanted:
            text = row[idx[c]].strip()
            try:
                data[c].append(float(text))
            except ValueError:
                raise DataFileError(f"{path}:{line}: column {c!r}: not a number: {text!r}") from None
    if not data[wanted[0]]:
        raise DataFileError(f"{path}: no data rows")
    return {c: np.asarray(v) for c, v in data.items()}


def write_columns(path, columns: dict, comment: str | None = None):
    """Write equal-length columns as CSV with full float precision."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = {a.shape[0] for a in arrays}
    if len(n) != 1:
        raise ValueError("columns must have equal length")
    with path.open("w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# specific formats


def read_eta_table(path) -> EtaTable:
    cols = read_columns(path, ["d_um", "eta"], ["eta_dc"])
    try:
        return EtaTable(cols["d_um"] * UM, cols["eta"], cols.get("eta_dc"))
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc


def write_stability_map(path, smap):
    A, Q = np.meshgrid(smap.a, smap.q, indexing="ij")
    return write_columns(path, {"a": A.ravel(), "q": Q.ravel(),
                                "stable": smap.stable.ravel(), "beta": smap.beta.ravel()})


def write_boundary(path, boundary):
    boundary = np.asarray(boundary).reshape(-1, 2)
    return write_columns(path, {"a": boundary[:, 0], "q_boundary": boundary[:, 1]})


def read_boundary(path):
    cols = read_columns(path, ["a", "q_boundary"])
    return np.column_stack([cols["a"], cols["q_boundary"]])


def write_trajectory(path, traj, extra_meta: dict | None = None):
    """CSV of ``t_s`` plus ``<axis>_m``/``v<axis>_m_s`` columns and a JSON sidecar."""
    path = Path(path)
    cols = {"t_s": traj.t}
    for i, ax in enumerate(traj.axes):
        cols[f"{ax}_m"] = traj.position[:, i]
        cols[f"v{ax}_m_s"] = traj.velocity[:, i]
    write_columns(path, cols)
    meta = {
        "seed": traj.seed,
        "axes": list(traj.axes),
        "escaped": traj.escaped,
        "escape_time_s": traj.escape_time,
        "samples": int(traj.t.size),
        "sample_rate_hz": traj.sample_rate,
        **{k: v for k, v in traj.metadata.items() if _jsonable(v)},
        **(extra_meta or {}),
    }
    write_json(path.with_suffix(".json"), meta)
    return path


def _jsonable(v):
    try:
        json.dumps(v, default=_json_default)
        return True
    except TypeError:
        return False


def read_time_series(path, column: str | None = None, sample_rate: float | None = None, dtype="<f8"):
    """Return ``(samples, sample_rate_hz)``.

    CSV files need a ``t_s`` column and a signal column (``signal`` by default,
    else the first ``*_m`` column). Any other extension is read as a raw
    binary float stream, for which ``sample_rate`` is mandatory.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            header = next((r for r in csv.reader(fh) if r and not r[0].startswith("#")), [])
        header = [h.strip() for h in header]
        if column is None:
            column = "signal" if "signal" in header else next(
                (h for h in header if h.endswith("_m") and h != "t_s"), None)
        if column is None:
            raise DataFileError(f"{path}:1: no 'signal' column (header is {header})")
        cols = read_columns(path, ["t_s", column])
        t = cols["t_s"]
        if t.size < 2:
            raise DataFileError(f"{path}: need at least two samples")
        dt = np.diff(t)
        if np.any(dt <= 0) or np.max(np.abs(dt - dt.mean())) > 1e-6 * dt.mean():
            raise DataFileError(f"{path}: t_s must be uniformly increasing")
        rate = 1.0 / float(dt.mean())
        if sample_rate is not None and abs(rate - sample_rate) > 1e-6 * sample_rate:
            raise DataFileError(f"{path}: declared sample rate {sample_rate} Hz disagrees with t_s ({rate} Hz)")
        return cols[column], rate
    if sample_rate is None:
        raise DataFileError(f"{path}: a binary stream needs an explicit sample rate")
    try:
        data = np.fromfile(path, dtype=dtype)
    except OSError as exc:
        raise DataFileError(f"{path}: cannot read: {exc}") from exc
    return data.astype(float), float(sample_rate)


def write_spectrum(path, spec):
    return write_columns(path, {"f_Hz": spec.f, "psd": spec.psd},
                         comment=f"window={spec.window} nperseg={spec.nperseg} noverlap={spec.noverlap} "
                                 f"rbw_Hz={spec.resolution_bandwidth!r}")


def read_spectrum_columns(path):
    cols = read_columns(path, ["f_Hz", "psd"])
    return cols["f_Hz"], cols["psd"]


def read_scan(path, cfg: TrapConfig, mass: float):
    """Scan CSV (``d_um, f_khz[, sigma_f_khz]``) as a :class:`~needletrap.fitting.FrequencyScan`."""
    from .fitting import FrequencyScan

    cols = read_columns(path, ["d_um", "f_khz"], ["sigma_f_khz"])
    sigma = cols.get("sigma_f_khz")
    try:
        return FrequencyScan(
            d=cols["d_um"] * UM,
            omega=2 * math.pi * KHZ * cols["f_khz"],
            cfg=cfg,
            mass=mass,
            sigma=None if sigma is None else 2 * math.pi * KHZ * sigma,
        )
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc


def write_scan(path, scan):
    cols = {"d_um": scan.d / UM, "f_khz": scan.omega / (2 * math.pi * KHZ)}
    if scan.sigma is not None:
        cols["sigma_f_khz"] = scan.sigma / (2 * math.pi * KHZ)
    return write_columns(path, cols)


def write_curve(path, curve):
    to_khz = 1.0 / (2 * math.pi * KHZ)
    return write_columns(path, {
        "d_um": curve.d / UM, "q_z": curve.q_z, "a_z": curve.a_z, "beta": curve.beta,
        "f_khz": curve.omega * to_khz, "f_pseudo_khz": curve.omega_pseudo * to_khz,
        "stable": curve.stable, "radial_stable": curve.radial_stable,
    })


def fit_report(result, scan) -> dict:
    to_khz = 1.0 / (2 * math.pi * KHZ)
    report = result.to_dict()
    report["points"] = [
        {"d_um": d / UM, "f_khz": w * to_khz, "model_f_khz": m * to_khz, "residual_khz": r * to_khz,
         "sigma_f_khz": None if scan.sigma is None else s * to_khz}
        for d, w, m, r, s in zip(scan.d, scan.omega, result.model_omega, result.residuals,
                                 scan.sigma if scan.sigma is not None else [None] * len(scan))
    ]
    return report


def read_charge_distribution(path) -> PointCharges:
    cols = read_columns(path, ["charge_C", "x_m", "y_m", "z_m"])
    return PointCharges(cols["charge_C"], np.column_stack([cols["x_m"], cols["y_m"], cols["z_m"]]))


def read_mass_distribution(path) -> PointMasses:
    cols = read_columns(path, ["mass_kg", "x_m", "y_m", "z_m"])
    try:
        return PointMasses(cols["mass_kg"], np.column_stack([cols["x_m"], cols["y_m"], cols["z_m"]]))
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    outputs: list
    seed: int | None
    argv: list
    version: str = field(default_factory=toolkit_version)
    python: str = field(default_factory=platform.python_version)
    numpy: str = np.__version__

    def write(self, out_dir) -> Path:
        return write_json(Path(out_dir) / "manifest.json", asdict(self))


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def argv_list(argv=None) -> list:
    return list(sys.argv[1:] if argv is None else argv)
