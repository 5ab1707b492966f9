"""Angular confinement of non-spherical charged particles.

The libration mode is treated as a single scalar Mathieu mode with

    omega_alpha = 2 eta V0 (3 + eps) (Q3 - Q2) / (3 d^2 Omega_rf I1)
    q_alpha = 2 sqrt(2) omega_alpha / Omega_rf

where Q1 <= Q2 <= Q3 are the eigenvalues of the charge quadrupole tensor
``sum q (3 r r - r^2 1)`` and I1 is the largest principal moment of inertia.
The formula is used exactly as written; its (3 + eps) factor assumes the
particle's long axis is aligned with the trap's symmetry axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TrapConfig
from .floquet import MathieuParams, characteristic_exponent


@dataclass(frozen=True)
class PointCharges:
    """Point charges (C) at body-frame positions (m); moments are taken about the origin."""

    charges: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.charges, dtype=float))
        r = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if q.size == 0 or r.shape != (q.size, 3):
            raise ValueError("need one (x, y, z) position per charge")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r))):
            raise ValueError("charges and positions must be finite")
        object.__setattr__(self, "charges", q)
        object.__setattr__(self, "positions", r)

    @property
    def total(self) -> float:
        return float(self.charges.sum())


@dataclass(frozen=True)
class SurfaceChargedSpheroid:
    """Total charge spread with uniform areal density over a spheroid.

    ``equatorial`` is the semi-axis along x and y, ``polar`` the one along z.
    """

    equatorial: float
    polar: float
    charge: float

    def __post_init__(self):
        if self.equatorial <= 0 or self.polar <= 0:
            raise ValueError("spheroid semi-axes must be positive")

    @property
    def total(self) -> float:
        return self.charge


@dataclass(frozen=True)
class PointMasses:
    masses: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.masses, dtype=float))
        r = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if m.size == 0 or r.shape != (m.size, 3):
            raise ValueError("need one (x, y, z) position per mass")
        if np.any(m < 0):
            raise ValueError("masses must be non-negative")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "positions", r)

    @property
    def total(self) -> float:
        return float(self.masses.sum())


@dataclass(frozen=True)
class SolidEllipsoid:
    """Uniform-density ellipsoid with semi-axes ``(ax, ay, az)`` along x, y, z."""

    semi_axes: tuple[float, float, float]
    density: float

    def __post_init__(self):
        if len(self.semi_axes) != 3 or min(self.semi_axes) <= 0 or self.density <= 0:
            raise ValueError("semi-axes and density must be positive")

    @property
    def total(self) -> float:
        ax, ay, az = self.semi_axes
        return 4.0 / 3.0 * math.pi * ax * ay * az * self.density


@dataclass(frozen=True)
class Quadrupole:
    tensor: np.ndarray
    eigenvalues: np.ndarray  # ascending Q1 <= Q2 <= Q3
    degenerate: bool

    @property
    def gap(self) -> float:
        """``Q3 - Q2``, the combination that drives libration."""
        return float(self.eigenvalues[2] - self.eigenvalues[1])


def _spheroid_surface_moments(a: float, c: float, nodes: int = 64):
    # mean z^2 and mean (x^2 + y^2) over the surface, weighted by area;
    # with t = cos(theta): dA ~ sqrt(c^2 (1 - t^2) + a^2 t^2) dt (smooth, so
    # Gauss-Legendre is exact to round-off)
    t, w = np.polynomial.legendre.leggauss(nodes)
    jac = np.sqrt(c**2 * (1 - t**2) + a**2 * t**2)
    area = np.sum(w * jac)
    z2 = np.sum(w * jac * c**2 * t**2) / area
    rho2 = np.sum(w * jac * a**2 * (1 - t**2)) / area
    return z2, rho2


def quadrupole_tensor(dist) -> np.ndarray:
    """Traceless tensor ``sum q (3 r r - r^2 1)`` in C m^2."""
    if isinstance(dist, PointCharges):
        r, q = dist.positions, dist.charges
        r2 = np.sum(r * r, axis=1)
        tensor = 3.0 * np.einsum("k,ki,kj->ij", q, r, r) - np.sum(q * r2) * np.eye(3)
    elif isinstance(dist, SurfaceChargedSpheroid):
        if dist.equatorial == dist.polar:
            return np.zeros((3, 3))
        z2, rho2 = _spheroid_surface_moments(dist.equatorial, dist.polar)
        x2 = rho2 / 2.0
        r2 = rho2 + z2
        tensor = dist.charge * np.diag([3 * x2 - r2, 3 * x2 - r2, 3 * z2 - r2])
    else:
        raise TypeError(f"unsupported charge distribution {type(dist).__name__}")
    # enforce exact symmetry and tracelessness against round-off
    tensor = 0.5 * (tensor + tensor.T)
    return tensor - np.trace(tensor) / 3.0 * np.eye(3)


def quadrupole_eigenvalues(dist) -> Quadrupole:
    """Sorted quadrupole eigenvalues; a distribution with no second moment is flagged degenerate."""
    tensor = quadrupole_tensor(dist)
    if isinstance(dist, PointCharges):
        degenerate = bool(np.all(dist.positions == 0))
    else:
        degenerate = False
    if degenerate:
        return Quadrupole(np.zeros((3, 3)), np.zeros(3), True)
    return Quadrupole(tensor, np.linalg.eigvalsh(tensor), False)


def inertia_tensor(dist) -> np.ndarray:
    """Inertia tensor about the centre of mass, kg m^2."""
    if isinstance(dist, PointMasses):
        m, r = dist.masses, dist.positions
        total = m.sum()
        if total <= 0:
            raise ValueError("mass distribution has zero total mass")
        r = r - (m @ r) / total
        r2 = np.sum(r * r, axis=1)
        return np.sum(m * r2) * np.eye(3) - np.einsum("k,ki,kj->ij", m, r, r)
    if isinstance(dist, SolidEllipsoid):
        ax, ay, az = dist.semi_axes
        m = dist.total
        return m / 5.0 * np.diag([ay**2 + az**2, ax**2 + az**2, ax**2 + ay**2])
    raise TypeError(f"unsupported mass distribution {type(dist).__name__}")


def largest_inertia(dist) -> float:
    return float(np.linalg.eigvalsh(inertia_tensor(dist))[-1])


@dataclass(frozen=True)
class LibrationMode:
    q_alpha: float
    omega_alpha: float
    stable: bool
    beta: float


def libration_frequency(cfg: TrapConfig, quadrupole_gap: float, inertia: float) -> float:
    """Libration angular frequency (rad/s) from ``Q3 - Q2`` (C m^2) and ``I1`` (kg m^2)."""
    if inertia <= 0:
        raise ValueError("largest moment of inertia must be positive")
    return (
        2.0 * cfg.eta_at() * cfg.v0 * (3.0 + cfg.epsilon) * quadrupole_gap
        / (3.0 * cfg.d**2 * cfg.omega_rf * inertia)
    )


def libration_mode(cfg: TrapConfig, quadrupole, inertia: float) -> LibrationMode:
    """Libration stability parameter, frequency and monodromy stability.

    ``quadrupole`` is a :class:`Quadrupole`, a sorted eigenvalue triple or
    directly the gap ``Q3 - Q2``.
    """
    if isinstance(quadrupole, Quadrupole):
        gap = quadrupole.gap
    elif np.ndim(quadrupole) == 0:
        gap = float(quadrupole)
    else:
        vals = np.sort(np.asarray(quadrupole, dtype=float))
        gap = float(vals[2] - vals[1])
    omega = libration_frequency(cfg, gap, inertia)
    q_alpha = 2.0 * math.sqrt(2.0) * omega / cfg.omega_rf
    exp = characteristic_exponent(MathieuParams(0.0, q_alpha, "alpha"))
    return LibrationMode(q_alpha, omega, exp.stable, exp.beta)
