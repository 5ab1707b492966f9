"""Frequency-versus-distance model and least-squares estimation of (Q, U0).

The forward model maps a needle separation ``d`` to the axial secular
frequency: ``(a_z, q_z)`` from the drive with ``eta(d)``, ``eta_dc(d)``,
then ``beta`` from the a^1 q^6 series (default) or from the monodromy
matrix (``exact=True``), then ``omega = beta Omega_rf / 2``.

The fit minimises ``sum(((omega_model - omega) / sigma)^2)`` over the
charge (in units of e) and the DC offset (V) with a Nelder-Mead simplex,
then refines with Gauss-Newton on a central-difference Jacobian. The
covariance is ``(J^T W J)^-1``; when no uncertainties are given the
weights are uniform and the covariance is scaled by the reduced chi^2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import ELEMENTARY_CHARGE, Particle, TrapConfig
from .floquet import (
    SERIES_A_MAX,
    SERIES_Q_MAX,
    SeriesValidityWarning,
    exact_beta,
    pseudopotential_frequency,
    series_beta,
)


class UnstableOperatingPoint(ValueError):
    """The model has no bounded axial motion at some requested distance."""


class FitError(RuntimeError):
    """The charge/offset fit failed to converge or started outside the stable region."""


def _stability_params(d, charge, u0, cfg: TrapConfig, mass):
    d = np.asarray(d, dtype=float)
    eta = np.asarray(cfg.eta_at(d), dtype=float)
    eta_dc = np.asarray(cfg.eta_dc_at(d), dtype=float)
    scale = charge / (d**2 * cfg.omega_rf**2 * mass)
    q = 8.0 * eta * cfg.v0 * scale
    a = 16.0 * eta_dc * u0 * scale
    return np.broadcast_to(a, d.shape), np.broadcast_to(q, d.shape)


def model_frequency(
    d,
    charge: float,
    u0: float,
    cfg: TrapConfig,
    mass: float,
    exact: bool = False,
    on_unstable: str = "raise",
    warn: bool = True,
):
    """Axial secular angular frequency (rad/s) at separations ``d`` (m).

    ``cfg`` supplies the drive and the efficiency factors; its own ``d``
    and ``u0`` are ignored. In series mode a point is unstable when the
    series gives ``beta^2 < 0`` or ``beta >= 1``; exact mode uses the
    monodromy trace. ``on_unstable`` is ``"raise"`` or ``"nan"``.
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    if on_unstable not in ("raise", "nan"):
        raise ValueError("on_unstable must be 'raise' or 'nan'")
    a, q = _stability_params(d, charge, u0, cfg, mass)
    if exact:
        beta, stable = exact_beta(a, q)
    else:
        if warn and (np.any(np.abs(a) > SERIES_A_MAX) or np.any(np.abs(q) > SERIES_Q_MAX)):
            warnings.warn(
                "series exponent used outside its accurate range at some distances",
                SeriesValidityWarning,
                stacklevel=2,
            )
        beta, stable = series_beta(a, q)
    stable = stable & (beta < 1)
    if not np.all(stable):
        if on_unstable == "raise":
            bad = np.atleast_1d(np.asarray(d, dtype=float))[~np.atleast_1d(stable)]
            raise UnstableOperatingPoint(
                f"no stable axial motion at d = {np.round(bad * 1e6, 3).tolist()} um"
            )
        beta = np.where(stable, beta, np.nan)
    omega = beta * cfg.omega_rf / 2.0
    return float(omega) if np.ndim(omega) == 0 else omega


@dataclass(frozen=True)
class FrequencyScan:
    """Measured axial frequencies (rad/s) at needle separations (m).

    ``cfg`` fixes the drive and the ``eta`` tables; ``sigma`` is optional and
    absolute (rad/s).
    """

    d: np.ndarray
    omega: np.ndarray
    cfg: TrapConfig
    mass: float
    sigma: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        w = np.asarray(self.omega, dtype=float)
        if d.ndim != 1 or d.shape != w.shape:
            raise ValueError("d and omega must be matching 1-D arrays")
        if np.unique(d).size < 3:
            raise ValueError("a frequency scan needs at least 3 distinct distances")
        if np.any(d <= 0) or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("scan distances and frequencies must be positive")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        # raises OutOfTableRange for distances outside an eta table
        self.cfg.eta_at(d)
        self.cfg.eta_dc_at(d)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "omega", w)
        if self.sigma is not None:
            s = np.broadcast_to(np.asarray(self.sigma, dtype=float), d.shape).copy()
            if np.any(s <= 0) or not np.all(np.isfinite(s)):
                raise ValueError("sigma must be positive")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return self.d.size


@dataclass(frozen=True)
class FitResult:
    charge: float  # C
    u0: float  # V
    charge_sigma: float
    u0_sigma: float
    covariance: np.ndarray  # in (C, V)
    residuals: np.ndarray  # omega_model - omega, rad/s
    chi2: float
    dof: int
    converged: bool
    iterations: int
    nfev: int
    method: str
    message: str = ""
    model_omega: np.ndarray = field(default=None, repr=False)

    @property
    def charge_e(self) -> float:
        return self.charge / ELEMENTARY_CHARGE

    @property
    def charge_sigma_e(self) -> float:
        return self.charge_sigma / ELEMENTARY_CHARGE

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residuals))

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    def to_dict(self) -> dict:
        return {
            "charge_C": self.charge,
            "charge_e": self.charge_e,
            "charge_sigma_C": self.charge_sigma,
            "charge_sigma_e": self.charge_sigma_e,
            "u0_V": self.u0,
            "u0_sigma_V": self.u0_sigma,
            "covariance_C_V": self.covariance.tolist(),
            "chi2": self.chi2,
            "dof": self.dof,
            "reduced_chi2": self.reduced_chi2,
            "residual_norm_rad_s": self.residual_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "nfev": self.nfev,
            "method": self.method,
            "message": self.message,
        }


def _weights(scan: FrequencyScan):
    return np.ones_like(scan.omega) if scan.sigma is None else 1.0 / scan.sigma


def fit_scan(
    scan: FrequencyScan,
    guess: tuple[float, float] = (5.0, 0.0),
    exact: bool = False,
    max_iter: int = 50,
    simplex_iter: int = 2000,
) -> FitResult:
    """Estimate charge and DC offset from a frequency-versus-distance scan.

    Parameters
    ----------
    scan : FrequencyScan
    guess : (charge in units of e, U0 in volts)
        Must give stable motion at every scan distance.
    exact : bool
        Use the monodromy exponent instead of the series (slow; verification).
    max_iter, simplex_iter : int
        Iteration budgets for the Gauss-Newton and simplex stages.
    """
    w = _weights(scan)
    nfev = 0

    def residual(theta):
        nonlocal nfev
        nfev += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SeriesValidityWarning)
            model = model_frequency(
                scan.d, theta[0] * ELEMENTARY_CHARGE, theta[1], scan.cfg, scan.mass,
                exact=exact, on_unstable="nan", warn=False,
            )
        return (model - scan.omega) * w

    def chi2(theta):
        r = residual(theta)
        return math.inf if np.any(np.isnan(r)) else float(r @ r)

    theta0 = np.array(guess, dtype=float)
    if not math.isfinite(chi2(theta0)):
        raise FitError(f"initial guess Q={theta0[0]:g} e, U0={theta0[1]:g} V is unstable at some scan distance")

    step = np.array([0.1 * max(abs(theta0[0]), 1.0), max(1.0, 0.1 * abs(theta0[1]))])
    simplex = np.array([theta0, theta0 + [step[0], 0.0], theta0 + [0.0, step[1]]])
    nm = optimize.minimize(
        chi2, theta0, method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": 1e-6, "fatol": 1e-12, "maxiter": simplex_iter},
    )
    if not np.all(np.isfinite(nm.x)) or not math.isfinite(nm.fun):
        raise FitError("simplex search left the stable region")

    theta = nm.x.copy()
    r = residual(theta)
    cost = float(r @ r)
    converged = False
    message = ""
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(residual, theta, r)
        if not np.all(np.isfinite(J)):
            message = "Jacobian undefined (stability edge)"
            break
        delta, *_ = np.linalg.lstsq(J, -r, rcond=None)
        lam = 1.0
        accepted = False
        while lam > 1e-6:
            trial = theta + lam * delta
            r_trial = residual(trial)
            c_trial = float(r_trial @ r_trial) if not np.any(np.isnan(r_trial)) else math.inf
            if c_trial <= cost:
                accepted = True
                break
            lam *= 0.5
        small = np.all(np.abs(delta) <= 1e-10 * np.maximum(np.abs(theta), 1.0))
        if not accepted:
            # no descent along the Gauss-Newton direction: at the optimum to round-off
            converged = bool(small) or cost == 0 or _at_minimum(cost, delta, J, r)
            message = "Gauss-Newton step made no progress" if not converged else "converged"
            break
        decrease = cost - c_trial
        theta, r, cost = trial, r_trial, c_trial
        if small or decrease <= 1e-15 * max(cost, 1e-300):
            converged = True
            message = "converged"
            break
    else:
        message = f"Gauss-Newton did not converge in {max_iter} iterations"
    if not converged:
        raise FitError(message)

    J = _jacobian(residual, theta, r)
    dof = len(scan) - 2
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal matrix; parameters not identifiable from this scan") from exc
    if scan.sigma is None and dof > 0:
        cov = cov * cost / dof
    units = np.array([ELEMENTARY_CHARGE, 1.0])
    cov_si = cov * np.outer(units, units)
    model = scan.omega + r / w
    return FitResult(
        charge=float(theta[0] * ELEMENTARY_CHARGE),
        u0=float(theta[1]),
        charge_sigma=float(math.sqrt(cov_si[0, 0])),
        u0_sigma=float(math.sqrt(cov_si[1, 1])),
        covariance=cov_si,
        residuals=r / w,
        chi2=cost,
        dof=dof,
        converged=True,
        iterations=it,
        nfev=nfev,
        method="exact" if exact else "series",
        message=message,
        model_omega=model,
    )


def _jacobian(residual, theta, r0):
    J = np.empty((r0.size, theta.size))
    for i in range(theta.size):
        h = 1e-6 * max(abs(theta[i]), 1.0)
        e = np.zeros_like(theta)
        e[i] = h
        J[:, i] = (residual(theta + e) - residual(theta - e)) / (2 * h)
    return J


def _at_minimum(cost, delta, J, r):
    # predicted decrease below round-off of the cost
    predicted = -(2 * r @ (J @ delta) + (J @ delta) @ (J @ delta))
    return predicted <= 1e-12 * max(cost, 1e-300)


def objective(scan: FrequencyScan, charge: float, u0: float, exact: bool = False) -> float:
    """Weighted sum of squared residuals at ``(charge [C], u0 [V])``."""
    model = model_frequency(scan.d, charge, u0, scan.cfg, scan.mass, exact=exact, on_unstable="nan", warn=False)
    r = (model - scan.omega) * _weights(scan)
    return float(r @ r)


def synthetic_scan(
    cfg: TrapConfig,
    mass: float,
    charge: float,
    u0: float,
    d,
    noise: float = 0.0,
    seed: int | None = None,
    exact: bool = False,
) -> FrequencyScan:
    """Scan generated by the forward model, with optional multiplicative Gaussian noise.

    With ``noise > 0`` each point gets ``sigma = noise * omega_true``.
    """
    d = np.asarray(d, dtype=float)
    omega = np.asarray(model_frequency(d, charge, u0, cfg, mass, exact=exact, warn=False))
    sigma = None
    if noise > 0:
        if seed is None:
            raise ValueError("a noisy synthetic scan needs a seed")
        rng = np.random.default_rng(seed)
        sigma = noise * omega
        omega = omega * (1.0 + noise * rng.standard_normal(omega.shape))
    return FrequencyScan(d=d, omega=omega, cfg=cfg, mass=mass, sigma=sigma)


@dataclass(frozen=True)
class ScanCurve:
    """Frequency-versus-distance curve; unstable rows are kept and flagged.

    ``stable`` refers to the axial mode (monodromy test); ``radial_stable``
    reports whether both radial modes are bounded too.
    """

    d: np.ndarray
    q_z: np.ndarray
    a_z: np.ndarray
    beta: np.ndarray
    omega: np.ndarray
    omega_pseudo: np.ndarray
    stable: np.ndarray
    radial_stable: np.ndarray
    method: str


def scan_distance(cfg: TrapConfig, particle: Particle, u0: float, d_grid, exact: bool = False) -> ScanCurve:
    """Tabulate ``(q_z, a_z, beta, omega_z)`` over separations ``d_grid`` (m)."""
    d = np.asarray(d_grid, dtype=float)
    if d.ndim != 1 or d.size == 0 or np.any(d <= 0):
        raise ValueError("d grid must be a non-empty 1-D array of positive distances")
    a, q = _stability_params(d, particle.charge, u0, cfg, particle.mass)
    a, q = np.array(a), np.array(q)
    _, stable = exact_beta(a, q)
    if exact:
        beta, _ = exact_beta(a, q)
    else:
        beta, _ = series_beta(a, q)
    ok = stable & (beta < 1)
    beta = np.where(ok, beta, np.nan)
    radial = np.ones(d.shape, dtype=bool)
    for sign in (1.0, -1.0):
        f = 1.0 + sign * cfg.epsilon
        radial &= exact_beta(-f * a / 2.0, -f * q / 2.0)[1]
    return ScanCurve(
        d=d, q_z=q, a_z=a, beta=beta, omega=beta * cfg.omega_rf / 2.0,
        omega_pseudo=pseudopotential_frequency(q, cfg.omega_rf),
        stable=ok, radial_stable=radial, method="exact" if exact else "series",
    )
