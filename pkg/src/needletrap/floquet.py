"""Mathieu-equation machinery for decoupled trap axes.

Each axis obeys ``x'' + (a - 2 q cos 2 tau) x = 0`` with ``tau = Omega_rf t / 2``.
The characteristic exponent ``beta`` is obtained from the monodromy matrix
(the one-period state-transition matrix, integrated with fixed-step RK4),
from the a^1 q^6 series, or used to build the Floquet series coefficients
``c_2n`` by backward recursion.

Sign convention
---------------
``q`` follows the usual positive-for-positive-charge convention
``q_z = 8 eta V0 Q / (d^2 Omega^2 m)``. In the trap's own time origin the
equation of motion is ``x'' + (a + 2 q cos 2 tau) x = 0``, i.e. the standard
form shifted by a quarter RF period; ``beta`` depends on ``|q|`` only.
``a_z = +16 eta_dc U0 Q / (d^2 Omega^2 m)`` is the value that follows from
the force ``-Q grad V`` of the trap potential.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import Particle, TrapConfig

MATHIEU_AXES = ("x", "y", "z", "alpha")
DEFAULT_STEPS = 2000
DEFAULT_TRACE_TOL = 1e-9
SERIES_A_MAX = 0.1
SERIES_Q_MAX = 0.8
TAIL_TOL = 1e-12


class IntegrationError(RuntimeError):
    """Fixed-step integration failed its Richardson accuracy check."""


class TruncationError(RuntimeError):
    """Floquet series truncation too small for the requested tail decay."""


class SeriesValidityWarning(UserWarning):
    """Series expansion used outside its accurate range."""


@dataclass(frozen=True)
class MathieuParams:
    a: float
    q: float
    axis: str = "z"

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.q)):
            raise ValueError("Mathieu parameters must be finite")
        if self.axis not in MATHIEU_AXES:
            raise ValueError(f"axis must be one of {MATHIEU_AXES}, got {self.axis!r}")


@dataclass(frozen=True)
class Exponent:
    """Characteristic exponent of one Mathieu mode.

    ``stable`` is the explicit outcome flag; ``beta`` is NaN when unstable.
    Monodromy results also carry the trace, the matrix and the Richardson
    error estimate of the trace.
    """

    params: MathieuParams
    beta: float
    stable: bool
    method: str
    trace: float | None = None
    monodromy: np.ndarray | None = None
    error_estimate: float | None = None


@dataclass(frozen=True)
class FloquetSolution:
    """Truncated Floquet series ``sum_n c_2n cos((2n + beta) tau + phi)``.

    ``n`` runs from ``-N`` to ``N`` and ``c`` is normalised so that ``c_0 = 1``.
    ``residual`` is the mismatch of the n = 0 recursion row, a measure of how
    well ``beta`` matches ``(a, q)``.
    """

    params: MathieuParams
    beta: float
    n: np.ndarray
    c: np.ndarray
    N: int
    residual: float
    stable: bool = True

    def coefficient(self, n: int) -> float:
        if abs(n) > self.N:
            return 0.0
        return float(self.c[n + self.N])

    @property
    def frequencies(self) -> np.ndarray:
        """Angular frequencies ``2n + beta`` in units of ``1/tau``."""
        return 2 * self.n + self.beta

    def basis(self, tau):
        """Even and odd series ``(sum c cos(k tau), sum c sin(k tau))`` and their tau-derivatives."""
        tau = np.asarray(tau, dtype=float)
        # drop negligible modes, evaluate in blocks to bound memory
        keep = np.abs(self.c) > 1e-18
        k, c = self.frequencies[keep], self.c[keep]
        flat = tau.ravel()
        out = np.empty((4, flat.size))
        for lo in range(0, flat.size, 1 << 14):
            arg = np.multiply.outer(flat[lo : lo + (1 << 14)], k)
            cos, sin = np.cos(arg), np.sin(arg)
            out[:, lo : lo + (1 << 14)] = (cos @ c, sin @ c, -(sin @ (c * k)), cos @ (c * k))
        return tuple(o.reshape(tau.shape) if tau.ndim else float(o[0]) for o in out)

    def _match(self, x0, dx0, tau0):
        C, S, dC, dS = self.basis(tau0)
        det = C * dS - S * dC
        if det == 0:
            raise ValueError("degenerate Floquet basis at the matching time")
        return (x0 * dS - dx0 * S) / det, (dx0 * C - x0 * dC) / det

    def evaluate(self, tau, x0: float, dx0: float, tau0: float = 0.0):
        """Solution with ``x(tau0) = x0`` and ``dx/dtau(tau0) = dx0``."""
        A, B = self._match(x0, dx0, tau0)
        C, S, _, _ = self.basis(tau)
        return A * C + B * S

    def evaluate_derivative(self, tau, x0: float, dx0: float, tau0: float = 0.0):
        A, B = self._match(x0, dx0, tau0)
        _, _, dC, dS = self.basis(tau)
        return A * dC + B * dS

    def amplitude_phase(self, x0: float, dx0: float, tau0: float = 0.0) -> tuple[float, float]:
        """``(C, phi)`` with ``x = C sum c_2n cos((2n + beta) tau + phi)``."""
        A, B = self._match(x0, dx0, tau0)
        return math.hypot(A, B), math.atan2(-B, A)

    @property
    def micromotion_ratio(self) -> float:
        """Summed first-sideband amplitude over carrier, ``(|c_2| + |c_-2|) / |c_0|``."""
        c0 = abs(self.coefficient(0))
        return (abs(self.coefficient(1)) + abs(self.coefficient(-1))) / c0


# ---------------------------------------------------------------------------
# stability parameters


def mathieu_params(
    cfg: TrapConfig,
    particle: Particle,
    axis: str = "z",
    a_ext: dict[str, float] | None = None,
) -> MathieuParams:
    """Per-axis ``(a, q)`` for a particle in the trap.

    ``a_ext`` optionally holds stray-field offsets per axis (``"x"``, ``"y"``,
    ``"z"``); missing axes default to zero. Efficiency factors are taken at
    ``cfg.d``, so an :class:`~needletrap.core.EtaTable` out of range raises.
    """
    if axis not in ("x", "y", "z"):
        raise ValueError("mathieu_params handles the x, y and z axes; use libration for alpha")
    a_ext = dict(a_ext or {})
    unknown = set(a_ext) - {"x", "y", "z"}
    if unknown:
        raise ValueError(f"unknown a_ext axes: {sorted(unknown)}")
    scale = particle.charge / (cfg.d**2 * cfg.omega_rf**2 * particle.mass)
    q_z = 8.0 * cfg.eta_at() * cfg.v0 * scale
    a_dc = 16.0 * cfg.eta_dc_at() * cfg.u0 * scale
    if axis == "z":
        return MathieuParams(a_dc + a_ext.get("z", 0.0), q_z, "z")
    sign = 1.0 if axis == "x" else -1.0
    factor = 1.0 + sign * cfg.epsilon
    return MathieuParams(-factor * a_dc / 2.0 + a_ext.get(axis, 0.0), -factor * q_z / 2.0, axis)


def all_axes(cfg: TrapConfig, particle: Particle, a_ext=None) -> dict[str, MathieuParams]:
    return {ax: mathieu_params(cfg, particle, ax, a_ext) for ax in ("x", "y", "z")}


# ---------------------------------------------------------------------------
# monodromy


def rk4_step_matrices(k0, kh, k1, h: float, damping=0.0) -> np.ndarray:
    """Classical RK4 one-step propagators for ``x'' = -k(t) x - damping x'``.

    ``k0, kh, k1`` are the stiffness at the start, midpoint and end of each
    step (equal shapes). Returns matrices of shape ``k0.shape + (2, 2)``
    acting on ``(x, x')``.
    """
    k0, kh, k1 = np.broadcast_arrays(*(np.asarray(k, dtype=float) for k in (k0, kh, k1)))
    g = np.asarray(damping, dtype=float)
    half = 0.5 * h
    out = np.empty(k0.shape + (2, 2))
    for col, (x, v) in enumerate(((1.0, 0.0), (0.0, 1.0))):
        a1x, a1v = v, -k0 * x - g * v
        x2, v2 = x + half * a1x, v + half * a1v
        a2x, a2v = v2, -kh * x2 - g * v2
        x3, v3 = x + half * a2x, v + half * a2v
        a3x, a3v = v3, -kh * x3 - g * v3
        x4, v4 = x + h * a3x, v + h * a3v
        a4x, a4v = v4, -k1 * x4 - g * v4
        out[..., 0, col] = x + (h / 6.0) * (a1x + 2.0 * a2x + 2.0 * a3x + a4x)
        out[..., 1, col] = v + (h / 6.0) * (a1v + 2.0 * a2v + 2.0 * a3v + a4v)
    return out


def _matmul2(P, Q):
    R = np.empty(np.broadcast_shapes(P.shape, Q.shape))
    R[..., 0, 0] = P[..., 0, 0] * Q[..., 0, 0] + P[..., 0, 1] * Q[..., 1, 0]
    R[..., 0, 1] = P[..., 0, 0] * Q[..., 0, 1] + P[..., 0, 1] * Q[..., 1, 1]
    R[..., 1, 0] = P[..., 1, 0] * Q[..., 0, 0] + P[..., 1, 1] * Q[..., 1, 0]
    R[..., 1, 1] = P[..., 1, 0] * Q[..., 0, 1] + P[..., 1, 1] * Q[..., 1, 1]
    return R


def ordered_product(mats: np.ndarray) -> np.ndarray:
    """Time-ordered product ``M[..., n-1, :, :] @ ... @ M[..., 0, :, :]`` by pairwise reduction."""
    while mats.shape[-3] > 1:
        if mats.shape[-3] % 2:
            pad = np.broadcast_to(np.eye(2), mats.shape[:-3] + (1, 2, 2))
            mats = np.concatenate([mats, pad], axis=-3)
        mats = _matmul2(mats[..., 1::2, :, :], mats[..., 0::2, :, :])
    return mats[..., 0, :, :]


_CHUNK_ELEMENTS = 1 << 21
# above this many (a, q) points stepping in time beats pairwise reduction
_LOOP_THRESHOLD = 512


def _monodromy_stepwise(a, q, h, steps):
    x = np.zeros((2, a.size))
    v = np.zeros((2, a.size))
    x[0] = 1.0
    v[1] = 1.0
    half = 0.5 * h
    for i in range(steps):
        tau = i * h
        k0 = a - 2.0 * q * math.cos(2.0 * tau)
        kh = a - 2.0 * q * math.cos(2.0 * (tau + half))
        k1 = a - 2.0 * q * math.cos(2.0 * (tau + h))
        a1x, a1v = v, -k0 * x
        a2x, a2v = v + half * a1v, -kh * (x + half * a1x)
        a3x, a3v = v + half * a2v, -kh * (x + half * a2x)
        a4x, a4v = v + h * a3v, -k1 * (x + h * a3x)
        x = x + (h / 6.0) * (a1x + 2.0 * a2x + 2.0 * a3x + a4x)
        v = v + (h / 6.0) * (a1v + 2.0 * a2v + 2.0 * a3v + a4v)
    # x[col], v[col] -> M[point, row, col]
    return np.stack([x.T, v.T], axis=1)


def monodromy(a, q, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """One-period state-transition matrices, shape ``broadcast(a, q).shape + (2, 2)``.

    Columns are the solutions starting from ``(1, 0)`` and ``(0, 1)``.
    Fixed-step classical RK4 over ``tau in [0, pi]``; vectorised over ``a, q``.
    """
    a, q = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(q, dtype=float))
    shape = a.shape
    a, q = a.ravel(), q.ravel()
    h = math.pi / steps
    tau = np.arange(steps) * h
    c0, ch, c1 = np.cos(2 * tau), np.cos(2 * tau + h), np.cos(2 * tau + 2 * h)
    if a.size >= _LOOP_THRESHOLD:
        return _monodromy_stepwise(a, q, h, steps).reshape(shape + (2, 2))
    out = np.empty((a.size, 2, 2))
    chunk = max(1, _CHUNK_ELEMENTS // steps)
    for lo in range(0, a.size, chunk):
        aa, qq = a[lo : lo + chunk, None], q[lo : lo + chunk, None]
        mats = rk4_step_matrices(aa - 2 * qq * c0, aa - 2 * qq * ch, aa - 2 * qq * c1, h)
        out[lo : lo + chunk] = ordered_product(mats)
    return out.reshape(shape + (2, 2))


def monodromy_trace(a, q, steps: int = DEFAULT_STEPS, tol: float | None = DEFAULT_TRACE_TOL):
    """Trace of the monodromy matrix with a Richardson error estimate.

    Integrates at ``steps`` and ``2 * steps``; returns the finer trace and
    ``|tr_h - tr_h/2| / 15``. Raises :class:`IntegrationError` if any estimate
    exceeds ``tol * max(1, |tr|)`` (pass ``tol=None`` to skip the check).
    """
    coarse = monodromy(a, q, steps)
    fine = monodromy(a, q, 2 * steps)
    tr_c = np.trace(coarse, axis1=-2, axis2=-1)
    tr_f = np.trace(fine, axis1=-2, axis2=-1)
    err = np.abs(tr_f - tr_c) / 15.0
    if tol is not None and np.any(err > tol * np.maximum(1.0, np.abs(tr_f))):
        worst = float(np.max(err / np.maximum(1.0, np.abs(tr_f))))
        raise IntegrationError(
            f"monodromy trace error estimate {worst:.3g} exceeds tolerance {tol:.3g}; "
            f"increase steps (now {steps})"
        )
    return tr_f, err, fine


def beta_from_trace(trace):
    """Fundamental-zone exponent ``arccos(tr / 2) / pi``; NaN where ``|tr| >= 2``."""
    trace = np.asarray(trace, dtype=float)
    stable = np.abs(trace) < 2.0
    beta = np.where(stable, np.arccos(np.clip(trace / 2.0, -1.0, 1.0)) / math.pi, np.nan)
    return beta, stable


def characteristic_exponent(
    p: MathieuParams, steps: int = DEFAULT_STEPS, tol: float | None = DEFAULT_TRACE_TOL
) -> Exponent:
    """Exact exponent from the monodromy matrix; unstable is an outcome, not an error."""
    trace, err, mat = monodromy_trace(p.a, p.q, steps, tol)
    beta, stable = beta_from_trace(trace)
    return Exponent(
        params=p,
        beta=float(beta),
        stable=bool(stable),
        method="monodromy",
        trace=float(trace),
        monodromy=np.asarray(mat),
        error_estimate=float(err),
    )


def exact_beta(a, q, steps: int = DEFAULT_STEPS, tol: float | None = DEFAULT_TRACE_TOL):
    """Vectorised monodromy exponent: ``(beta, stable)`` arrays."""
    trace, _, _ = monodromy_trace(a, q, steps, tol)
    return beta_from_trace(trace)


# ---------------------------------------------------------------------------
# series


def beta_squared_series(a, q):
    """``beta^2`` to order ``a^1 q^6`` (vectorised)."""
    a = np.asarray(a, dtype=float)
    q2 = np.asarray(q, dtype=float) ** 2
    return (
        a
        + (0.5 + a / 2.0) * q2
        + (25.0 / 128.0 + 273.0 * a / 512.0) * q2**2
        + (317.0 / 2304.0 + 59525.0 * a / 82944.0) * q2**3
    )


def series_beta(a, q):
    """Vectorised series exponent: ``(beta, stable)``, NaN where ``beta^2 < 0``."""
    b2 = beta_squared_series(a, q)
    stable = b2 >= 0
    return np.where(stable, np.sqrt(np.where(stable, b2, 0.0)), np.nan), stable


def beta_series(p: MathieuParams, warn: bool = True) -> Exponent:
    if warn and (abs(p.a) > SERIES_A_MAX or abs(p.q) > SERIES_Q_MAX):
        warnings.warn(
            f"series exponent used outside |a| <= {SERIES_A_MAX}, |q| <= {SERIES_Q_MAX} "
            f"(a={p.a:.4g}, q={p.q:.4g})",
            SeriesValidityWarning,
            stacklevel=2,
        )
    beta, stable = series_beta(p.a, p.q)
    return Exponent(params=p, beta=float(beta), stable=bool(stable), method="series")


# ---------------------------------------------------------------------------
# Floquet coefficients


def _backward_ratios(a, q, beta, N, sign):
    # r_n = c_{sign*2n} / c_{sign*2(n-1)} from r_{N+1} = 0 down to n = 1
    ratios = np.zeros(N + 2)
    for n in range(N, 0, -1):
        m = sign * n
        D = (a - (2 * m + beta) ** 2) / q
        denom = D - ratios[n + 1]
        if denom == 0.0:
            raise ZeroDivisionError("singular recursion denominator")
        ratios[n] = 1.0 / denom
    return ratios[1 : N + 1]


def floquet_coefficients(
    p: MathieuParams,
    beta: float,
    N: int = 20,
    grow: bool = True,
    max_N: int = 1280,
) -> FloquetSolution:
    """Floquet coefficients ``c_2n`` for ``n in [-N, N]`` by backward recursion.

    Solves ``c_{2n+2} + c_{2n-2} = (a - (2n + beta)^2) / q * c_2n`` inwards from
    ``|n| = N`` with ``c_0 = 1``. With ``grow`` the truncation doubles until
    ``|c_{+-2N}| < 1e-12``; otherwise, or past ``max_N``, a
    :class:`TruncationError` is raised.
    """
    if not math.isfinite(beta):
        raise ValueError("beta must be finite (stable mode)")
    a, q = p.a, p.q
    if q == 0.0:
        c = np.zeros(2 * N + 1)
        c[N] = 1.0
        return FloquetSolution(p, beta, np.arange(-N, N + 1), c, N, abs(a - beta**2))
    while True:
        up = np.cumprod(_backward_ratios(a, q, beta, N, +1))
        down = np.cumprod(_backward_ratios(a, q, beta, N, -1))
        tail = max(abs(up[-1]), abs(down[-1]))
        if tail < TAIL_TOL:
            break
        if not grow or 2 * N > max_N:
            raise TruncationError(
                f"|c_2N| = {tail:.3g} at N = {N} does not meet {TAIL_TOL:g}; use a larger N"
            )
        N *= 2
    c = np.concatenate([down[::-1], [1.0], up])
    residual = abs(up[0] + down[0] - (a - beta**2) / q)
    return FloquetSolution(p, float(beta), np.arange(-N, N + 1), c, N, float(residual))


def floquet_solution(p: MathieuParams, N: int = 20, **kw) -> FloquetSolution:
    """Monodromy exponent followed by the coefficient recursion."""
    exp = characteristic_exponent(p, **kw)
    if not exp.stable:
        return FloquetSolution(p, math.nan, np.zeros(0, dtype=int), np.zeros(0), 0, math.nan, False)
    return floquet_coefficients(p, exp.beta, N)


# ---------------------------------------------------------------------------
# secular frequencies


def secular_frequency(beta: float, omega_rf: float) -> float:
    """``beta * Omega_rf / 2`` in rad/s, for ``0 <= beta < 1``."""
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    return beta * omega_rf / 2.0


def pseudopotential_frequency(q, omega_rf: float):
    """Pseudopotential (a = 0) secular frequency ``|q| Omega_rf / (2 sqrt 2)``."""
    return np.abs(q) * omega_rf / (2.0 * math.sqrt(2.0))


# ---------------------------------------------------------------------------
# stability diagram


@dataclass(frozen=True)
class StabilityMap:
    a: np.ndarray
    q: np.ndarray
    stable: np.ndarray  # shape (len(a), len(q))
    beta: np.ndarray
    boundary: np.ndarray  # rows of (a, q_boundary)


def boundary_bisect(a, q_lo, q_hi, tol: float = 1e-4, steps: int = DEFAULT_STEPS):
    """Bisect along q for the stability edge between ``q_lo`` and ``q_hi`` (vectorised over a).

    The stability flag must differ at the two ends.
    """
    a, lo, hi = (np.array(v, dtype=float) for v in np.broadcast_arrays(a, q_lo, q_hi))
    s_lo = exact_beta(a, lo, steps)[1]
    s_hi = exact_beta(a, hi, steps)[1]
    if np.any(s_lo == s_hi):
        raise ValueError("bisection bracket does not straddle the stability boundary")
    while np.max(np.abs(hi - lo)) > tol:
        mid = 0.5 * (lo + hi)
        s_mid = exact_beta(a, mid, steps)[1]
        same = s_mid == s_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def stability_boundary_scan(a_values, q_values, tol: float = 1e-4, steps: int = DEFAULT_STEPS):
    """Stability flags and exponents on an ``a x q`` grid plus bisected edge points."""
    a_values = np.asarray(a_values, dtype=float)
    q_values = np.asarray(q_values, dtype=float)
    A, Q = np.meshgrid(a_values, q_values, indexing="ij")
    beta, stable = exact_beta(A, Q, steps)
    ia, iq = np.nonzero(stable[:, 1:] != stable[:, :-1])
    if ia.size:
        edges = boundary_bisect(a_values[ia], q_values[iq], q_values[iq + 1], tol, steps)
        # a = 0, q = 0 is marginal (|tr M| = 2); that edge is not a boundary
        real = np.abs(edges) > tol
        boundary = np.column_stack([a_values[ia][real], edges[real]])
    else:
        boundary = np.zeros((0, 2))
    return StabilityMap(a_values, q_values, stable, beta, boundary)
