"""Spectral estimation and parameter extraction from position records.

PSDs are one-sided Welch averages (Hann window, 50 % overlap, constant
detrend, density scaling) so that ``sum(psd) * df`` reproduces the variance
of the record. Peaks are fitted with the position spectrum of a damped
harmonic oscillator,

    S(f) = A / [(f0^2 - f^2)^2 + (Gamma f)^2] + B,

whose linewidth ``Gamma`` (Hz, full width at half maximum) equals the
momentum damping rate ``gamma / 2 pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal
from scipy.ndimage import uniform_filter1d

from .core import BOLTZMANN, Environment
from .dynamics import EPSTEIN_DIFFUSE, mean_thermal_speed

MIN_SEGMENTS = 4
DEFAULT_WINDOW = "hann"
PEAK_OVER_MEDIAN = 3.0
COMPARABLE_PEAK = 0.3


class PeakFitError(RuntimeError):
    """No usable peak, several comparable peaks, or a failed fit."""


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectral density.

    ``resolution_bandwidth`` is the equivalent noise bandwidth of the window
    (1.5 bins for Hann). ``parseval_ratio`` is ``integral(psd) / variance``.
    """

    f: np.ndarray
    psd: np.ndarray
    resolution_bandwidth: float
    window: str
    nperseg: int
    noverlap: int
    variance: float
    parseval_ratio: float

    @property
    def df(self) -> float:
        return float(self.f[1] - self.f[0])

    def integrated_power(self, f_lo: float = -np.inf, f_hi: float = np.inf) -> float:
        sel = (self.f >= f_lo) & (self.f <= f_hi)
        return float(np.sum(self.psd[sel]) * self.df)


def psd(
    series,
    sample_rate: float,
    nperseg: int | None = None,
    noverlap: int | None = None,
    window: str = DEFAULT_WINDOW,
) -> Spectrum:
    """Welch PSD estimate of a uniformly sampled real signal.

    Parameters
    ----------
    series : array_like
        Samples in arbitrary units.
    sample_rate : float
        Sampling rate in Hz.
    nperseg : int, optional
        Segment length; defaults to ``len(series) // 8`` (15 overlapping
        segments).
    noverlap : int, optional
        Overlap in samples, default half a segment.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("psd expects a 1-D series")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite samples")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    if nperseg is None:
        nperseg = x.size // 8
    nperseg = int(nperseg)
    if noverlap is None:
        noverlap = nperseg // 2
    if nperseg < 8:
        raise ValueError(f"series too short: {x.size} samples")
    step = nperseg - noverlap
    segments = 1 + (x.size - nperseg) // step if x.size >= nperseg else 0
    if segments < MIN_SEGMENTS:
        raise ValueError(
            f"series too short: {x.size} samples give {segments} segments of "
            f"{nperseg}, need at least {MIN_SEGMENTS}"
        )
    f, p = signal.welch(
        x, fs=sample_rate, window=window, nperseg=nperseg, noverlap=noverlap,
        detrend="constant", return_onesided=True, scaling="density",
    )
    w = signal.get_window(window, nperseg)
    enbw = sample_rate * np.sum(w**2) / np.sum(w) ** 2
    var = float(np.var(x))
    integral = float(np.sum(p) * (f[1] - f[0]))
    ratio = integral / var if var > 0 else float("nan")
    return Spectrum(f, p, float(enbw), window, nperseg, int(noverlap), var, ratio)


@dataclass(frozen=True)
class PeakFit:
    f0: float
    linewidth_hz: float
    amplitude: float
    background: float
    residual_norm: float
    window: tuple[float, float]

    @property
    def gamma(self) -> float:
        """Momentum damping rate in 1/s."""
        return 2 * math.pi * self.linewidth_hz

    @property
    def omega0(self) -> float:
        return 2 * math.pi * self.f0

    def model(self, f):
        return oscillator_psd(f, self.f0, self.linewidth_hz, self.amplitude, self.background)


def oscillator_psd(f, f0, linewidth_hz, amplitude, background=0.0):
    f = np.asarray(f, dtype=float)
    return amplitude / ((f0**2 - f**2) ** 2 + (linewidth_hz * f) ** 2) + background


def fit_peak(spec: Spectrum, window: tuple[float, float] | None = None) -> PeakFit:
    """Fit the damped-oscillator line shape to the single peak inside ``window`` (Hz).

    The fit is done on log residuals, so fitted ``f0`` and linewidth are
    independent of the overall signal scale. Raises :class:`PeakFitError`
    when the window holds no peak above ``3 x`` the median level, holds two
    comparable peaks, or the optimiser fails.
    """
    f_lo, f_hi = window if window is not None else (spec.f[1], spec.f[-1])
    if not f_hi > f_lo:
        raise ValueError("peak window must satisfy f_lo < f_hi")
    sel = (spec.f >= f_lo) & (spec.f <= f_hi) & (spec.f > 0)
    f, p = spec.f[sel], spec.psd[sel]
    if f.size < 8:
        raise PeakFitError(f"peak window [{f_lo:g}, {f_hi:g}] Hz holds only {f.size} bins")
    if np.any(p <= 0):
        raise PeakFitError("spectrum has non-positive bins inside the peak window")

    median = float(np.median(p))
    i_max = int(np.argmax(p))
    if p[i_max] <= PEAK_OVER_MEDIAN * median:
        raise PeakFitError(
            f"no peak above {PEAK_OVER_MEDIAN:g}x the median level in [{f_lo:g}, {f_hi:g}] Hz"
        )
    # smooth over a fraction of the half-maximum width so estimator scatter on
    # a well-resolved line is not mistaken for extra peaks
    smooth = uniform_filter1d(p, 5, mode="nearest")
    half_width = np.count_nonzero(smooth > 0.5 * (smooth.max() + median))
    span = max(5, half_width // 4)
    smooth = uniform_filter1d(p, span, mode="nearest")
    peaks, _ = signal.find_peaks(
        smooth,
        prominence=COMPARABLE_PEAK * (smooth.max() - np.median(smooth)),
        distance=max(1, half_width),
    )
    if peaks.size > 1:
        raise PeakFitError(
            f"{peaks.size} comparable peaks in window at {np.round(f[peaks], 3).tolist()} Hz"
        )

    f_guess = float(f[i_max])
    df = spec.df
    g_guess = max(half_width * df, df)
    b_guess = max(float(np.min(p)) * 0.5, np.finfo(float).tiny)
    a_guess = max(float(p[i_max]) - b_guess, float(p[i_max]) * 0.5) * (g_guess * f_guess) ** 2
    x0 = np.array([f_guess / df, math.log(g_guess / df), math.log(a_guess), math.log(b_guess)])
    logp = np.log(p)

    def unpack(x):
        return x[0] * df, math.exp(x[1]) * df, math.exp(x[2]), math.exp(x[3])

    def residual(x):
        f0, g, amp, bg = unpack(x)
        return np.log(oscillator_psd(f, f0, g, amp, bg)) - logp

    try:
        res = optimize.least_squares(residual, x0, method="trf", x_scale=1.0, max_nfev=2000)
    except (ValueError, FloatingPointError) as exc:
        raise PeakFitError(f"peak fit failed: {exc}") from exc
    if not res.success:
        raise PeakFitError(f"peak fit did not converge: {res.message}")
    f0, g, amp, bg = unpack(res.x)
    if not (f_lo <= f0 <= f_hi) or not g > 0:
        raise PeakFitError(f"fitted peak f0={f0:.6g} Hz, linewidth={g:.6g} Hz is outside the window")
    return PeakFit(f0, g, amp, bg, float(np.linalg.norm(res.fun)), (float(f_lo), float(f_hi)))


def thermal_sigma(temperature: float, mass: float, omega: float) -> float:
    """RMS thermal displacement ``sqrt(k_B T / (m omega^2))`` in metres."""
    if temperature < 0 or mass <= 0 or omega <= 0:
        raise ValueError("thermal_sigma needs temperature >= 0 and positive mass and omega")
    return math.sqrt(BOLTZMANN * temperature / (mass * omega**2))


def radius_from_linewidth(
    gamma: float,
    env: Environment,
    density: float,
    accommodation: float = EPSTEIN_DIFFUSE,
) -> float:
    """Sphere radius from the damping rate, inverting the Epstein closure.

    ``r = K P / (rho_p gamma v_th)``; ``gamma`` is in 1/s
    (``PeakFit.gamma``).
    """
    if gamma <= 0 or density <= 0 or env.pressure <= 0 or env.temperature <= 0:
        raise ValueError("radius_from_linewidth needs positive gamma, density, pressure and temperature")
    v_th = mean_thermal_speed(env.temperature, env.gas_molar_mass)
    return accommodation * env.pressure / (density * gamma * v_th)
