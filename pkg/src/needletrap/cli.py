"""Command-line front end.

Every subcommand writes its results plus a ``manifest.json`` into ``--out``.

    needletrap stability --out maps/
    needletrap simulate --config trap.yaml --seed 1 --duration-s 2e-3 --out run/
    needletrap psd --input run/trajectory.csv --column z_m --window-khz 35 45 --out spec/
    needletrap scan --config trap.yaml --out curve/
    needletrap fit --config trap.yaml --scan scan.csv --out fit/
    needletrap libration --config trap.yaml --dumbbell 5 100 --out lib/
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, dynamics, fitting, floquet, io, libration
from .core import ELEMENTARY_CHARGE, Particle

NM = 1e-9


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", type=Path, help="YAML/JSON trap, particle and environment config")
    g.add_argument("--out", type=Path, default=Path("."), help="output directory (created if missing)")
    g.add_argument("--seed", type=int, default=None, help="noise seed")
    g.add_argument("--vpp", action="store_true", help="--v0-volts is peak-to-peak (V0 = Vpp / 2)")
    g.add_argument("--v0-volts", type=float, default=None, help="override the RF amplitude")
    g.add_argument("--freq-khz", type=float, default=None, help="override the RF frequency")
    g.add_argument("--d-um", type=float, default=None, help="override the needle separation")
    g.add_argument("--u0-volts", type=float, default=None, help="override the DC offset")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="needletrap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {io.toolkit_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stability", parents=[common], help="Mathieu stability map and boundary")
    p.add_argument("--a-range", nargs=3, type=float, default=[-0.2, 0.2, 81], metavar=("MIN", "MAX", "N"))
    p.add_argument("--q-range", nargs=3, type=float, default=[0.0, 1.2, 121], metavar=("MIN", "MAX", "N"))
    p.add_argument("--tol", type=float, default=1e-4, help="boundary bisection tolerance in q")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("simulate", parents=[common], help="integrate the trapped motion")
    p.add_argument("--duration-s", type=float, required=True)
    p.add_argument("--steps-per-rf", type=int, default=100, help="integration steps per RF period (>= 50)")
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--axes", default="xyz", help="axes to simulate, e.g. 'z' or 'xyz'")
    p.add_argument("--pos0-nm", nargs="+", type=float, default=None, help="initial position per axis")
    p.add_argument("--vel0-m-s", nargs="+", type=float, default=None, help="initial velocity per axis")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("psd", parents=[common], help="Welch PSD and damped-oscillator peak fit")
    p.add_argument("--input", type=Path, required=True, help="time-series CSV or raw float64 stream")
    p.add_argument("--column", default=None, help="signal column of a CSV input")
    p.add_argument("--sample-rate-hz", type=float, default=None)
    p.add_argument("--nperseg", type=int, default=None)
    p.add_argument("--window-khz", nargs=2, type=float, default=None, metavar=("LO", "HI"),
                   help="fit the peak in this frequency window")
    p.set_defaults(func=cmd_psd)

    p = sub.add_parser("scan", parents=[common], help="axial frequency versus needle separation")
    p.add_argument("--d-range-um", nargs=3, type=float, default=[50.0, 800.0, 76], metavar=("MIN", "MAX", "N"))
    p.add_argument("--exact", action="store_true", help="monodromy exponent instead of the series")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("fit", parents=[common], help="fit charge and DC offset to a frequency scan")
    p.add_argument("--scan", type=Path, required=True, help="CSV with d_um, f_khz[, sigma_f_khz]")
    p.add_argument("--guess", nargs=2, type=float, default=[5.0, 0.0], metavar=("CHARGE_E", "U0_V"))
    p.add_argument("--exact", action="store_true", help="monodromy exponent instead of the series")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("libration", parents=[common], help="libration stability parameter and frequency")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--charges", type=Path, help="CSV with charge_C, x_m, y_m, z_m")
    src.add_argument("--dumbbell", nargs=2, type=float, metavar=("CHARGE_E", "LENGTH_NM"),
                     help="two equal charges on the z axis")
    masses = p.add_mutually_exclusive_group()
    masses.add_argument("--masses", type=Path, help="CSV with mass_kg, x_m, y_m, z_m")
    masses.add_argument("--ellipsoid-nm", nargs=3, type=float, metavar=("AX", "AY", "AZ"),
                        help="uniform ellipsoid with the particle density")
    p.set_defaults(func=cmd_libration)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _load(args) -> io.RunConfig:
    cfg = io.load_config(args.config) if args.config else io.RunConfig()
    overrides = {}
    if args.v0_volts is not None:
        overrides["v0"] = args.v0_volts / (2.0 if args.vpp else 1.0)
    elif args.vpp:
        raise io.ConfigError("--vpp only applies to --v0-volts")
    if args.freq_khz is not None:
        overrides["omega_rf"] = 2 * math.pi * args.freq_khz * io.KHZ
    if args.d_um is not None:
        overrides["d"] = args.d_um * io.UM
    if args.u0_volts is not None:
        overrides["u0"] = args.u0_volts
    if overrides:
        cfg.trap = dataclasses.replace(cfg.require_trap(), **overrides)
    return cfg


def _finish(args, cfg, outputs, inputs=None, extra=None):
    manifest = io.RunManifest(
        command=args.command,
        config={**io.config_to_dict(cfg), **(extra or {})},
        inputs={k: str(v) for k, v in (inputs or {}).items()},
        outputs=[str(p) for p in outputs],
        seed=args.seed,
        argv=io.argv_list(args._argv),
    )
    manifest.write(args.out)
    for p in outputs:
        print(p)


def _axis_block(p: floquet.MathieuParams) -> dict:
    e = floquet.characteristic_exponent(p)
    return {"a": p.a, "q": p.q, "stable": e.stable, "beta": e.beta if e.stable else None}


# ---------------------------------------------------------------------------
# subcommands


def cmd_stability(args, cfg):
    a0, a1, na = args.a_range
    q0, q1, nq = args.q_range
    smap = floquet.stability_boundary_scan(np.linspace(a0, a1, int(na)), np.linspace(q0, q1, int(nq)), tol=args.tol)
    outputs = [io.write_stability_map(args.out / "stability_map.csv", smap),
               io.write_boundary(args.out / "boundary.csv", smap.boundary)]
    if cfg.trap is not None and cfg.particle is not None:
        op = {ax: _axis_block(p) for ax, p in floquet.all_axes(cfg.trap, cfg.particle).items()}
        outputs.append(io.write_json(args.out / "operating_point.json", op))
    return outputs, {}, {"a_range": args.a_range, "q_range": args.q_range, "tol": args.tol}


def cmd_simulate(args, cfg):
    trap, particle = cfg.require_trap(), cfg.require_particle()
    axes = tuple(args.axes)
    n = len(axes)
    x0 = np.zeros(n) if args.pos0_nm is None else np.asarray(args.pos0_nm) * NM
    v0 = np.zeros(n) if args.vel0_m_s is None else np.asarray(args.vel0_m_s)
    if x0.size != n or v0.size != n:
        raise ValueError(f"--pos0-nm and --vel0-m-s need {n} value(s), one per axis")
    if args.steps_per_rf < dynamics.MIN_STEPS_PER_RF_PERIOD:
        raise ValueError(f"--steps-per-rf must be at least {dynamics.MIN_STEPS_PER_RF_PERIOD}")
    dt = trap.rf_period / args.steps_per_rf
    traj = dynamics.integrate(trap, particle, cfg.environment, x0, v0, args.duration_s, dt,
                              seed=args.seed, axes=axes, record_every=args.record_every)
    path = io.write_trajectory(args.out / "trajectory.csv", traj)
    if traj.escaped:
        print(f"warning: trajectory escaped at t = {traj.escape_time:.6g} s", file=sys.stderr)
    extra = {"duration_s": args.duration_s, "dt_s": dt, "record_every": args.record_every, "axes": list(axes)}
    return [path, path.with_suffix(".json")], {}, extra


def cmd_psd(args, cfg):
    series, rate = io.read_time_series(args.input, column=args.column, sample_rate=args.sample_rate_hz)
    spec = analysis.psd(series, rate, nperseg=args.nperseg)
    outputs = [io.write_spectrum(args.out / "spectrum.csv", spec)]
    summary = {"sample_rate_hz": rate, "rbw_hz": spec.resolution_bandwidth, "variance": spec.variance,
               "parseval_ratio": spec.parseval_ratio, "nperseg": spec.nperseg, "window": spec.window}
    if args.window_khz is not None:
        lo, hi = (v * io.KHZ for v in args.window_khz)
        fit = analysis.fit_peak(spec, (lo, hi))
        summary["peak"] = {"f0_hz": fit.f0, "linewidth_hz": fit.linewidth_hz, "gamma_s": fit.gamma,
                           "amplitude": fit.amplitude, "background": fit.background,
                           "residual_norm": fit.residual_norm}
        env, particle = cfg.environment, cfg.particle
        if env.pressure > 0 and env.temperature > 0 and particle is not None:
            r = analysis.radius_from_linewidth(fit.gamma, env, particle.density)
            summary["peak"]["radius_nm"] = r / NM
    outputs.append(io.write_json(args.out / "psd_summary.json", summary))
    return outputs, {"input": args.input}, {"nperseg": args.nperseg, "window_khz": args.window_khz}


def cmd_scan(args, cfg):
    trap, particle = cfg.require_trap(), cfg.require_particle()
    d0, d1, nd = args.d_range_um
    d = np.linspace(d0, d1, int(nd)) * io.UM
    curve = fitting.scan_distance(trap, particle, trap.u0, d, exact=args.exact)
    return [io.write_curve(args.out / "curve.csv", curve)], {}, {"d_range_um": args.d_range_um, "exact": args.exact}


def cmd_fit(args, cfg):
    trap, particle = cfg.require_trap(), cfg.require_particle()
    scan = io.read_scan(args.scan, trap, particle.mass)
    result = fitting.fit_scan(scan, guess=tuple(args.guess), exact=args.exact)
    report = io.fit_report(result, scan)
    outputs = [io.write_json(args.out / "fit_report.json", report)]
    print(f"Q = {result.charge_e:.4f} +/- {result.charge_sigma_e:.4f} e, "
          f"U0 = {result.u0:.4f} +/- {result.u0_sigma:.4f} V", file=sys.stderr)
    return outputs, {"scan": args.scan}, {"guess": args.guess, "exact": args.exact}


def cmd_libration(args, cfg):
    trap = cfg.require_trap()
    particle: Particle | None = cfg.particle
    if args.charges is not None:
        quad = libration.quadrupole_eigenvalues(io.read_charge_distribution(args.charges))
        eig = quad.eigenvalues
    elif args.dumbbell is not None:
        q_e, length = args.dumbbell
        half = 0.5 * length * NM
        dist = libration.PointCharges(np.full(2, 0.5 * q_e * ELEMENTARY_CHARGE), [[0, 0, -half], [0, 0, half]])
        eig = libration.quadrupole_eigenvalues(dist).eigenvalues
    elif particle is not None and particle.quadrupole_eigenvalues is not None:
        eig = np.asarray(particle.quadrupole_eigenvalues)
    else:
        raise ValueError("give --charges, --dumbbell or particle.quadrupole_eigenvalues_c_m2")

    if args.masses is not None:
        inertia = libration.largest_inertia(io.read_mass_distribution(args.masses))
    elif args.ellipsoid_nm is not None:
        density = particle.density if particle is not None else 3500.0
        inertia = libration.largest_inertia(
            libration.SolidEllipsoid(tuple(v * NM for v in args.ellipsoid_nm), density))
    elif particle is not None and particle.largest_inertia is not None:
        inertia = particle.largest_inertia
    elif particle is not None and particle.radius is not None:
        inertia = 0.4 * particle.mass * particle.radius**2
    else:
        raise ValueError("give --masses, --ellipsoid-nm, or a particle with a radius or largest_inertia_kg_m2")

    mode = libration.libration_mode(trap, eig, inertia)
    out = {
        "quadrupole_eigenvalues_C_m2": list(map(float, eig)),
        "quadrupole_gap_C_m2": float(eig[2] - eig[1]),
        "largest_inertia_kg_m2": inertia,
        "q_alpha": mode.q_alpha,
        "omega_alpha_rad_s": mode.omega_alpha,
        "f_alpha_hz": mode.omega_alpha / (2 * math.pi),
        "stable": mode.stable,
        "beta": mode.beta if mode.stable else None,
    }
    inputs = {k: getattr(args, k) for k in ("charges", "masses") if getattr(args, k) is not None}
    return [io.write_json(args.out / "libration.json", out)], inputs, {
        "dumbbell": args.dumbbell, "ellipsoid_nm": args.ellipsoid_nm}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        cfg = _load(args)
        args.out.mkdir(parents=True, exist_ok=True)
        outputs, inputs, extra = args.func(args, cfg)
        _finish(args, cfg, outputs, inputs, extra)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"needletrap {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
