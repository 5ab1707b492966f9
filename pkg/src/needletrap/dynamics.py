"""Time-domain motion of a particle in the RF trap.

Each axis is integrated independently (the trap force is separable):

    x'' = -kappa_i(t) x - gamma x' + xi(t),   <xi(t) xi(t')> = 2 gamma k_B T / m delta(t - t')

with ``kappa_i(t) = 2 Q c_i [eta_dc U0 + eta V0 cos(Omega t)] / m`` from
:func:`needletrap.core.force`. The deterministic part uses the classical
RK4 propagator of each fixed step; the additive thermal kick is applied to
the velocity after each step.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .core import (
    AVOGADRO,
    BOLTZMANN,
    Environment,
    Particle,
    TrapConfig,
    axis_index,
    curvature,
)
from .floquet import (
    characteristic_exponent,
    floquet_coefficients,
    mathieu_params,
    rk4_step_matrices,
)

# Epstein drag, diffuse reflection with full thermal accommodation:
# delta = 1 + pi/8 in F = delta (4 pi / 3) r^2 rho_gas v_th u, hence
# gamma = (1 + 8/pi) P / (rho_p r v_th) for a sphere.
EPSTEIN_DIFFUSE = 1.0 + 8.0 / math.pi
ESCAPE_FACTOR = 1e6
MIN_STEPS_PER_RF_PERIOD = 50
_CHUNK = 1 << 15


@dataclass(frozen=True)
class Trajectory:
    """Sampled motion on a uniform time grid.

    ``position`` and ``velocity`` have shape ``(samples, len(axes))``. When
    the motion diverged, ``escaped`` is set, ``escape_time`` records the first
    threshold crossing and the arrays stop at the last sample before it.
    """

    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    axes: tuple[str, ...]
    seed: int | None = None
    escaped: bool = False
    escape_time: float | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def stable(self) -> bool:
        return not self.escaped

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    def axis(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        i = self.axes.index(name)
        return self.position[:, i], self.velocity[:, i]


def damping_rate(env: Environment, particle: Particle) -> float:
    """Explicit ``env.damping_rate`` if given, else gas drag from pressure, else zero."""
    if env.damping_rate is not None:
        return float(env.damping_rate)
    if env.pressure > 0:
        return damping_from_pressure(env, particle)
    return 0.0


def mean_thermal_speed(temperature: float, molar_mass: float) -> float:
    return math.sqrt(8.0 * BOLTZMANN * temperature / (math.pi * molar_mass / AVOGADRO))


def damping_from_pressure(
    env: Environment, particle: Particle, accommodation: float = EPSTEIN_DIFFUSE
) -> float:
    """Free-molecular (Epstein) momentum damping rate in 1/s.

    ``gamma = K P / (rho_p r v_th)`` with ``v_th = sqrt(8 k_B T / (pi m_gas))``.
    The default ``K = 1 + 8/pi`` is Epstein's diffuse-reflection value.
    """
    if particle.radius is None:
        raise ValueError("damping from pressure needs the particle radius")
    if env.temperature <= 0:
        raise ValueError("damping from pressure needs a positive gas temperature")
    v_th = mean_thermal_speed(env.temperature, env.gas_molar_mass)
    return accommodation * env.pressure / (particle.density * particle.radius * v_th)


def stiffness(cfg: TrapConfig, particle: Particle, axes, t):
    """``kappa_i(t)`` for the requested axes, shape ``(len(axes),) + t.shape``."""
    t = np.asarray(t, dtype=float)
    c = curvature(cfg)[[axis_index(ax) for ax in axes]]
    volts = cfg.eta_dc_at() * cfg.u0 + cfg.eta_at() * cfg.v0 * np.cos(cfg.omega_rf * t)
    return (2.0 * particle.charge / particle.mass) * np.multiply.outer(c, volts)


def integrate(
    cfg: TrapConfig,
    particle: Particle,
    env: Environment,
    x0,
    v0,
    duration: float,
    dt: float,
    seed: int | None = None,
    axes: tuple[str, ...] = ("x", "y", "z"),
    record_every: int = 1,
) -> Trajectory:
    """Integrate the driven, damped, thermally forced motion.

    Parameters
    ----------
    x0, v0 : array_like
        Initial position (m) and velocity (m/s) per entry of ``axes``.
    duration, dt : float
        Total time and fixed step in seconds; ``dt <= 2 pi / (50 Omega_rf)``.
    seed : int, optional
        Seed of the noise stream. Required when ``T > 0`` and the damping is
        non-zero, so that every run is reproducible.
    record_every : int
        Keep every n-th step.

    Returns
    -------
    Trajectory
        With ``escaped=True`` if any axis exceeded 1e6 times its initial
        amplitude scale.
    """
    axes = tuple(axes)
    for ax in axes:
        axis_index(ax)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (len(axes),)).copy()
    v0 = np.broadcast_to(np.asarray(v0, dtype=float), (len(axes),)).copy()
    if dt <= 0 or duration <= 0:
        raise ValueError("duration and dt must be positive")
    if dt > cfg.rf_period / MIN_STEPS_PER_RF_PERIOD * (1 + 1e-12):
        raise ValueError(
            f"dt = {dt:.3g} s exceeds RF period / {MIN_STEPS_PER_RF_PERIOD} = "
            f"{cfg.rf_period / MIN_STEPS_PER_RF_PERIOD:.3g} s"
        )
    record_every = int(record_every)
    nsteps = int(round(duration / dt))
    if nsteps // record_every < 1:
        raise ValueError("duration too short for two recorded samples")

    gamma = damping_rate(env, particle)
    kick = math.sqrt(2.0 * gamma * BOLTZMANN * env.temperature / particle.mass * dt)
    if kick > 0 and seed is None:
        raise ValueError("a noise seed is required for thermal simulations")
    rng = np.random.default_rng(seed)

    half_rf = 0.5 * cfg.omega_rf
    amp = np.hypot(x0, v0 / half_rf)
    thermal_len = math.sqrt(BOLTZMANN * env.temperature / particle.mass) / half_rf
    amp = np.where(amp > 0, amp, thermal_len)
    threshold = ESCAPE_FACTOR * amp

    xs_out = [x0[None, :]]
    vs_out = [v0[None, :]]
    state_x, state_v = x0.tolist(), v0.tolist()
    escaped_at = None
    for start in range(0, nsteps, _CHUNK):
        m = min(_CHUNK, nsteps - start)
        t0 = (start + np.arange(m)) * dt
        k0 = stiffness(cfg, particle, axes, t0)
        kh = stiffness(cfg, particle, axes, t0 + 0.5 * dt)
        k1 = stiffness(cfg, particle, axes, t0 + dt)
        mats = rk4_step_matrices(k0, kh, k1, dt, gamma)
        noise = rng.standard_normal((m, len(axes))) * kick if kick > 0 else None
        chunk_x = np.empty((m, len(axes)))
        chunk_v = np.empty((m, len(axes)))
        first_escape = m
        for j in range(len(axes)):
            xs, vs = _propagate(
                mats[j], None if noise is None else noise[:, j], state_x[j], state_v[j]
            )
            chunk_x[:, j] = xs
            chunk_v[:, j] = vs
            over = np.nonzero(~(np.abs(chunk_x[:, j]) <= threshold[j]))[0]
            if over.size:
                first_escape = min(first_escape, int(over[0]))
            state_x[j], state_v[j] = xs[-1], vs[-1]
        # keep samples of global step index n+1 with (n+1) % record_every == 0
        idx = np.arange(start + 1, start + m + 1)
        if first_escape < m:
            escaped_at = (start + first_escape + 1) * dt
            keep = (idx % record_every == 0) & (np.arange(m) < first_escape)
            xs_out.append(chunk_x[keep])
            vs_out.append(chunk_v[keep])
            break
        keep = idx % record_every == 0
        xs_out.append(chunk_x[keep])
        vs_out.append(chunk_v[keep])

    position = np.concatenate(xs_out)
    velocity = np.concatenate(vs_out)
    t = np.arange(position.shape[0]) * (dt * record_every)
    meta = {
        "cfg": cfg,
        "particle": particle,
        "environment": env,
        "dt": dt,
        "record_every": record_every,
        "damping_rate": gamma,
        "seed": seed,
    }
    return Trajectory(t, position, velocity, axes, seed, escaped_at is not None, escaped_at, meta)


def _propagate(mats, noise, x, v):
    a00 = mats[:, 0, 0].tolist()
    a01 = mats[:, 0, 1].tolist()
    a10 = mats[:, 1, 0].tolist()
    a11 = mats[:, 1, 1].tolist()
    m = len(a00)
    xs = [0.0] * m
    vs = [0.0] * m
    if noise is None:
        for i in range(m):
            x, v = a00[i] * x + a01[i] * v, a10[i] * x + a11[i] * v
            xs[i] = x
            vs[i] = v
    else:
        w = noise.tolist()
        for i in range(m):
            x, v = a00[i] * x + a01[i] * v, a10[i] * x + a11[i] * v + w[i]
            xs[i] = x
            vs[i] = v
    return np.array(xs), np.array(vs)


def _integrate_seed(args):
    seed, kwargs = args
    return integrate(seed=seed, **kwargs)


def integrate_ensemble(seeds, workers: int = 1, **kwargs) -> list[Trajectory]:
    """Run :func:`integrate` once per seed; results follow the order of ``seeds``."""
    jobs = [(int(s), kwargs) for s in seeds]
    if workers <= 1:
        return [_integrate_seed(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_integrate_seed, jobs))


def floquet_reference(cfg: TrapConfig, particle: Particle, axis: str, x0: float, v0: float, t):
    """Undamped, noise-free motion of one axis from the Floquet series.

    Matches ``x(0) = x0`` and ``x'(0) = v0`` in trap time. The quarter-period
    shift between trap time and the standard Mathieu form is applied here.
    """
    p = mathieu_params(cfg, particle, axis)
    exp = characteristic_exponent(p)
    if not exp.stable:
        raise ValueError(f"axis {axis} is unstable at a={p.a:.4g}, q={p.q:.4g}")
    sol = floquet_coefficients(p, exp.beta)
    half_rf = 0.5 * cfg.omega_rf
    tau = half_rf * np.asarray(t, dtype=float) + 0.5 * math.pi
    return sol.evaluate(tau, x0, v0 / half_rf, tau0=0.5 * math.pi)


# ---------------------------------------------------------------------------
# micromotion / macromotion


@dataclass(frozen=True)
class Decomposition:
    """Secular carrier and first RF sidebands of one axis.

    ``micromotion_ratio`` is ``(A(Omega - w) + A(Omega + w)) / A(w)``, which
    the lowest-order picture ``x = C cos(w t)(1 - q/2 cos Omega t)`` puts at ``q/2``.
    """

    omega_secular: float
    beta: float
    macromotion_amplitude: float
    lower_sideband: float
    upper_sideband: float
    micromotion_ratio: float


def decompose(traj: Trajectory, omega_rf: float, axis: str = "z", orders: int = 3) -> Decomposition:
    """Split an axis into its secular carrier and RF sidebands.

    The secular frequency is located by a Hann-windowed, zero-padded FFT and
    refined by maximising the windowed Fourier amplitude; the carrier and the
    sidebands at ``|k Omega +- w|`` (``k <= orders``) are then fitted jointly
    by linear least squares.
    """
    if traj.escaped:
        raise ValueError("cannot decompose an escaped trajectory")
    x, _ = traj.axis(axis)
    t = traj.t
    duration = t[-1] - t[0]
    rf_periods = duration * omega_rf / (2 * math.pi)
    if rf_periods < 20:
        raise ValueError(f"insufficient duration: {rf_periods:.1f} RF periods, need >= 20")
    nyquist = math.pi * traj.sample_rate
    x = x - x.mean()
    n = x.size
    win = np.hanning(n)
    pad = 8 * n
    spec = np.abs(np.fft.rfft(win * x, pad))
    freqs = 2 * math.pi * np.fft.rfftfreq(pad, traj.dt)
    band = (freqs > 0) & (freqs < 0.5 * omega_rf)
    if not np.any(band):
        raise ValueError("no frequency bins below Omega_rf / 2")
    k = np.flatnonzero(band)[np.argmax(spec[band])]
    if spec[k] < 10 * np.median(spec[band]):
        raise ValueError("no identifiable secular peak")
    dw = freqs[1] - freqs[0]

    def neg_amp(w):
        return -abs(np.sum(win * x * np.exp(-1j * w * t)))

    w_sec = minimize_scalar(
        neg_amp, bounds=(freqs[k] - 2 * dw, freqs[k] + 2 * dw), method="bounded",
        options={"xatol": dw * 1e-6},
    ).x
    components = [w_sec]
    for order in range(1, orders + 1):
        components += [order * omega_rf - w_sec, order * omega_rf + w_sec]
    components = [w for w in components if 0 < w < nyquist]
    design = np.column_stack(
        [f(w * t) for w in components for f in (np.cos, np.sin)]
    )
    coef, *_ = np.linalg.lstsq(design, x, rcond=None)
    amps = np.hypot(coef[0::2], coef[1::2])
    carrier, lower, upper = amps[0], amps[1], amps[2]
    return Decomposition(
        omega_secular=float(w_sec),
        beta=float(2 * w_sec / omega_rf),
        macromotion_amplitude=float(carrier),
        lower_sideband=float(lower),
        upper_sideband=float(upper),
        micromotion_ratio=float((lower + upper) / carrier),
    )


def trap_for_params(
    a_z: float,
    q_z: float,
    particle: Particle,
    omega_rf: float,
    d: float = 50e-6,
    eta: float = 1.0,
    epsilon: float = 0.0,
) -> TrapConfig:
    """A trap whose z axis has the requested ``(a, q)`` for this particle."""
    if particle.charge == 0:
        raise ValueError("a neutral particle has a = q = 0")
    scale = d**2 * omega_rf**2 * particle.mass / (eta * particle.charge)
    v0 = q_z * scale / 8.0
    if v0 < 0:
        raise ValueError("q_z must have the sign of the particle charge")
    return TrapConfig(v0=v0, omega_rf=omega_rf, d=d, eta=eta, u0=a_z * scale / 16.0, epsilon=epsilon)
