"""Physical constants, trap/particle data model and the trap potential.

Everything here works in SI units. Conversions from lab units (kHz, um,
Torr, peak-to-peak volts) happen only in :mod:`needletrap.io`.

The quadrupole potential of a needle trap near its centre is

    V(r, t) = [eta_dc * U0 + eta * V0 * cos(Omega_rf t)] / d**2
              * [2 z**2 - (1 - eps) y**2 - (1 + eps) x**2]

which is traceless (harmonic) for every asymmetry ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.interpolate import PchipInterpolator

ELEMENTARY_CHARGE = 1.602176634e-19  # C
BOLTZMANN = 1.380649e-23  # J/K
AVOGADRO = 6.02214076e23  # 1/mol
TORR = 133.322  # Pa, declared conversion factor
DIAMOND_DENSITY = 3500.0  # kg/m^3
AIR_MOLAR_MASS = 28.97e-3  # kg/mol

AXES = ("x", "y", "z")


class OutOfTableRange(ValueError):
    """Raised when an efficiency table is evaluated outside its support."""


class EtaTable:
    """Tabulated voltage efficiency factor versus electrode distance.

    Monotone piecewise-cubic (PCHIP) interpolation; evaluation outside the
    tabulated distance range raises :class:`OutOfTableRange`.

    Parameters
    ----------
    d : array_like
        Electrode separations in metres, strictly increasing.
    eta : array_like
        RF efficiency factor at each separation.
    eta_dc : array_like, optional
        DC efficiency factor. Falls back to ``eta`` when omitted.
    """

    def __init__(self, d, eta, eta_dc=None):
        d = np.asarray(d, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if d.ndim != 1 or d.size < 2 or d.shape != eta.shape:
            raise ValueError("eta table needs matching 1-D arrays with at least two rows")
        if np.any(np.diff(d) <= 0):
            raise ValueError("eta table distances must be strictly increasing")
        if np.any(d <= 0):
            raise ValueError("eta table distances must be positive")
        _check_eta(eta, "eta")
        self.d = d
        self.eta = eta
        self._rf = PchipInterpolator(d, eta, extrapolate=False)
        if eta_dc is None:
            self.eta_dc = None
            self._dc = self._rf
        else:
            eta_dc = np.asarray(eta_dc, dtype=float)
            if eta_dc.shape != d.shape:
                raise ValueError("eta_dc column must match the distance column")
            _check_eta(eta_dc, "eta_dc")
            self.eta_dc = eta_dc
            self._dc = PchipInterpolator(d, eta_dc, extrapolate=False)

    @property
    def d_range(self) -> tuple[float, float]:
        return float(self.d[0]), float(self.d[-1])

    def _eval(self, interp, d):
        d_arr = np.asarray(d, dtype=float)
        lo, hi = self.d_range
        # tolerate round-off at the table edges (e.g. um -> m conversions)
        slack = 1e-12 * hi
        if np.any(d_arr < lo - slack) or np.any(d_arr > hi + slack):
            raise OutOfTableRange(
                f"distance outside eta table range [{lo:.6g}, {hi:.6g}] m: {d_arr}"
            )
        out = interp(np.clip(d_arr, lo, hi))
        return float(out) if out.ndim == 0 else out

    def __call__(self, d):
        return self._eval(self._rf, d)

    def dc(self, d):
        return self._eval(self._dc, d)

    def __repr__(self) -> str:
        lo, hi = self.d_range
        return f"EtaTable({self.d.size} rows, d in [{lo:.3g}, {hi:.3g}] m)"


def _check_eta(values, name):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)) or np.any(values <= 0) or np.any(values > 1):
        raise ValueError(f"{name} must satisfy 0 < {name} <= 1")


Efficiency = Union[float, EtaTable]


@dataclass(frozen=True)
class TrapConfig:
    """Electrode drive and geometry.

    ``v0`` is the zero-to-peak RF amplitude. ``eta``/``eta_dc`` are either
    constants or an :class:`EtaTable`; ``eta_dc=None`` means "same as eta".
    """

    v0: float
    omega_rf: float
    d: float
    eta: Efficiency = 1.0
    u0: float = 0.0
    eta_dc: Efficiency | None = None
    epsilon: float = 0.0

    def __post_init__(self):
        if not (self.v0 >= 0 and math.isfinite(self.v0)):
            raise ValueError("v0 must be a finite amplitude >= 0")
        if not (self.omega_rf > 0 and math.isfinite(self.omega_rf)):
            raise ValueError("omega_rf must be positive")
        if not (self.d > 0 and math.isfinite(self.d)):
            raise ValueError("d must be positive")
        if not math.isfinite(self.u0):
            raise ValueError("u0 must be finite")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must satisfy 0 <= epsilon < 1")
        for name in ("eta", "eta_dc"):
            value = getattr(self, name)
            if value is None or isinstance(value, EtaTable):
                continue
            _check_eta(value, name)

    def eta_at(self, d: float | None = None) -> float:
        d = self.d if d is None else d
        return self.eta(d) if isinstance(self.eta, EtaTable) else float(self.eta)

    def eta_dc_at(self, d: float | None = None) -> float:
        d = self.d if d is None else d
        source = self.eta if self.eta_dc is None else self.eta_dc
        if isinstance(source, EtaTable):
            # a table supplied as eta carries its own DC column (or reuses RF)
            return source.dc(d) if source is self.eta else source(d)
        return float(source)

    @property
    def rf_period(self) -> float:
        return 2 * math.pi / self.omega_rf


@dataclass(frozen=True)
class Particle:
    """A levitated particle.

    ``charge`` is signed, in coulombs. ``radius`` and ``density`` describe a
    sphere; when a radius is given the mass must agree with
    ``4/3 pi r^3 rho`` to 1e-9 relative.
    """

    mass: float
    charge: float
    radius: float | None = None
    density: float = DIAMOND_DENSITY
    quadrupole_eigenvalues: tuple[float, float, float] | None = None
    largest_inertia: float | None = None

    def __post_init__(self):
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise ValueError("particle mass must be positive")
        if not math.isfinite(self.charge):
            raise ValueError("particle charge must be finite")
        if self.radius is not None:
            if self.radius <= 0 or self.density <= 0:
                raise ValueError("radius and density must be positive")
            sphere = sphere_mass(self.radius, self.density)
            if abs(sphere - self.mass) > 1e-9 * self.mass:
                raise ValueError(
                    f"mass {self.mass:.6g} kg disagrees with sphere of radius "
                    f"{self.radius:.6g} m and density {self.density:.6g} kg/m^3 "
                    f"({sphere:.6g} kg)"
                )
        if self.quadrupole_eigenvalues is not None:
            q = tuple(float(v) for v in self.quadrupole_eigenvalues)
            if len(q) != 3 or list(q) != sorted(q):
                raise ValueError("quadrupole eigenvalues must be three values Q1 <= Q2 <= Q3")
            scale = max(abs(v) for v in q)
            if abs(sum(q)) > 1e-12 * max(scale, np.finfo(float).tiny):
                raise ValueError("quadrupole eigenvalues must sum to zero (traceless tensor)")
            object.__setattr__(self, "quadrupole_eigenvalues", q)
        if self.largest_inertia is not None and self.largest_inertia <= 0:
            raise ValueError("largest_inertia must be positive")

    @classmethod
    def sphere(cls, radius: float, charge: float, density: float = DIAMOND_DENSITY, **kw):
        return cls(mass=sphere_mass(radius, density), charge=charge,
                   radius=radius, density=density, **kw)

    @property
    def charge_e(self) -> float:
        return self.charge / ELEMENTARY_CHARGE

    @property
    def charge_to_mass(self) -> float:
        return self.charge / self.mass


@dataclass(frozen=True)
class Environment:
    """Bath temperature (K), gas pressure (Pa) and an optional explicit damping rate (1/s)."""

    temperature: float = 0.0
    pressure: float = 0.0
    damping_rate: float | None = None
    gas_molar_mass: float = AIR_MOLAR_MASS

    def __post_init__(self):
        for name in ("temperature", "pressure"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.damping_rate is not None and self.damping_rate < 0:
            raise ValueError("damping_rate must be >= 0")
        if self.gas_molar_mass <= 0:
            raise ValueError("gas_molar_mass must be positive")

    @classmethod
    def from_torr(cls, temperature: float, pressure_torr: float, **kw):
        return cls(temperature=temperature, pressure=pressure_torr * TORR, **kw)


def sphere_mass(radius: float, density: float = DIAMOND_DENSITY) -> float:
    return 4.0 / 3.0 * math.pi * radius**3 * density


def curvature(cfg: TrapConfig) -> np.ndarray:
    """Diagonal of the spatial quadratic form, ``(-(1+eps), -(1-eps), 2) / d**2``."""
    eps = cfg.epsilon
    return np.array([-(1 + eps), -(1 - eps), 2.0]) / cfg.d**2


def drive_voltage(cfg: TrapConfig, t, include_dc: bool = True):
    """Efficiency-weighted electrode voltage ``eta_dc U0 + eta V0 cos(Omega t)``."""
    rf = cfg.eta_at() * cfg.v0 * np.cos(cfg.omega_rf * np.asarray(t, dtype=float))
    if include_dc:
        rf = rf + cfg.eta_dc_at() * cfg.u0
    return rf


def potential(cfg: TrapConfig, r, t, include_dc: bool = True):
    """Trap potential in volts at position(s) ``r`` (shape ``(..., 3)``) and time ``t``."""
    r = np.asarray(r, dtype=float)
    quad = np.sum(curvature(cfg) * r**2, axis=-1)
    return drive_voltage(cfg, t, include_dc) * quad


def force(cfg: TrapConfig, particle: Particle, r, t, include_dc: bool = True):
    """Force ``-Q grad V`` in newtons; linear in each coordinate."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(drive_voltage(cfg, t, include_dc))[..., None]
    return -particle.charge * 2.0 * curvature(cfg) * s * r


def axis_index(axis: str) -> int:
    try:
        return AXES.index(axis)
    except ValueError:
        raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}") from None
