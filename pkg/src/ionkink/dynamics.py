"""Time integration: velocity Verlet, BAOAB Langevin, radial quenches and field ramps.

States are indexed by ion identity (the order of ``IonSystem.masses``), so a
mass defect keeps its mass through axial exchanges; :meth:`DynamicsState.config`
returns the axially sorted :class:`~ionkink.model.Configuration` with the
identities carried along.

Langevin noise is drawn in fixed blocks of :data:`NOISE_BLOCK` steps, each
seeded from ``(rng_seed, block index)``.  A run therefore gives the same
trajectory however it is split into calls, and on either kernel backend.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from . import kernels, kinkdetect
from .errors import Instability, IonLoss
from .model import Configuration, hessian, mass_vector
from .statics import minimize_energy

log = logging.getLogger(__name__)

NOISE_BLOCK = 1024
DEFAULT_DT = 10e-9
DEFAULT_ETA = 3e-21
SURVIVAL_TIME = 400e-6
CHUNK = 8192


@dataclass
class DynamicsState:
    """Positions and velocities (dimensionless, by ion identity) at ``time``."""

    z: np.ndarray
    x: np.ndarray
    vz: np.ndarray
    vx: np.ndarray
    time: float = 0.0
    rng_seed: int = 0
    step: int = 0

    @classmethod
    def at_rest(cls, config, rng_seed=0):
        n = config.n
        z = np.empty(n)
        x = np.empty(n)
        z[config.ids] = config.z
        x[config.ids] = config.x
        return cls(z, x, np.zeros(n), np.zeros(n), 0.0, int(rng_seed), 0)

    def copy(self):
        return dataclasses.replace(self, z=self.z.copy(), x=self.x.copy(),
                                   vz=self.vz.copy(), vx=self.vx.copy())

    @property
    def n(self):
        return self.z.size

    def config(self):
        return Configuration(self.z, self.x, np.arange(self.n))

    def kinetic_energy(self, sys):
        mu = sys.mass_ratio
        return 0.5 * float(np.sum(mu * (self.vz**2 + self.vx**2)))

    def equals(self, other):
        return (self.time == other.time and self.step == other.step
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("z", "x", "vz", "vx")))


@dataclass(frozen=True)
class RampSchedule:
    """Radial frequency ramp over ``t_r`` followed by a hold; piecewise-linear field."""

    nu_x_start: float
    nu_x_end: float
    t_r: float
    shape: str = "linear_nu"
    e_field: tuple = ()
    hold_time: float = 0.0

    def __post_init__(self):
        if self.t_r <= 0:
            raise ValueError("ramp duration must be positive")
        if self.shape not in ("linear_nu", "linear_nu_squared"):
            raise ValueError(f"unknown ramp shape {self.shape!r}")
        object.__setattr__(self, "e_field", tuple(tuple(map(float, p)) for p in self.e_field))

    @classmethod
    def from_tau_q(cls, tau_q, nu_x_start=500e3, nu_x_end=140e3, **kw):
        return cls(nu_x_start, nu_x_end, 2.0 * tau_q, **kw)

    @property
    def tau_q(self):
        return self.t_r / 2.0

    @property
    def duration(self):
        return self.t_r + self.hold_time

    def nu_x(self, t):
        s = np.clip(np.asarray(t, dtype=float) / self.t_r, 0.0, 1.0)
        if self.shape == "linear_nu":
            return self.nu_x_start + (self.nu_x_end - self.nu_x_start) * s
        return np.sqrt(self.nu_x_start**2 + (self.nu_x_end**2 - self.nu_x_start**2) * s)

    def field(self, t):
        if not self.e_field:
            return np.zeros_like(np.asarray(t, dtype=float))
        ts, es = zip(*self.e_field)
        return np.interp(t, ts, es)


@dataclass(frozen=True)
class LangevinParams:
    temperature: float = 0.0
    eta: float = DEFAULT_ETA
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if self.dt <= 0 or self.eta < 0 or self.temperature < 0:
            raise ValueError("need dt > 0, eta >= 0, T >= 0")

    def force_variance(self):
        """Variance (N^2) of the discretized random force per coordinate, ``2 eta k_B T / dt``."""
        return 2 * self.eta * constants.k * self.temperature / self.dt


@dataclass
class Trajectory:
    """Frames ``(n_frames, 4, N)`` of ``(z, x, vz, vx)`` by ion identity, dimensionless."""

    times: np.ndarray
    frames: np.ndarray
    system: object

    def configs(self):
        ids = np.arange(self.frames.shape[2])
        return [Configuration(f[0], f[1], ids) for f in self.frames]

    def kink_reports(self, ref, **kw):
        return [kinkdetect.detect(c, ref, **kw) for c in self.configs()]

    def to_table(self, path=None, every=1):
        units = self.system.units
        n = self.frames.shape[2]
        head = (["t_s"] + [f"z{j}_m" for j in range(n)] + [f"x{j}_m" for j in range(n)]
                + [f"vz{j}_m_s" for j in range(n)] + [f"vx{j}_m_s" for j in range(n)])
        lines = ["\t".join(head)]
        for t, f in zip(self.times[::every], self.frames[::every]):
            row = [t * units.time] + list(f[0] * units.length) + list(f[1] * units.length)
            row += list(f[2] * units.velocity) + list(f[3] * units.velocity)
            lines.append("\t".join(f"{v:.10e}" for v in row))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass
class TrialRecord:
    trial: int
    seed: int
    tau_q: float
    defects: dict
    n_created: int = 0
    n_survived: int = 0
    created_centres: list = field(default_factory=list)
    survived_centres: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    error: str | None = None

    def to_json(self):
        d = dataclasses.asdict(self)
        d["defects"] = {str(k): v for k, v in self.defects.items()}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        d["defects"] = {int(k): v for k, v in d["defects"].items()}
        return cls(**d)


# -- core integration ----------------------------------------------------------


def _noise_block(seed, block, n):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal((NOISE_BLOCK, 2, n))


def _noise(seed, start, nsteps, n):
    """Standard normals for absolute steps ``start .. start + nsteps - 1``."""
    out = np.empty((nsteps, 2, n))
    k = 0
    while k < nsteps:
        step = start + k
        b, off = divmod(step, NOISE_BLOCK)
        take = min(NOISE_BLOCK - off, nsteps - k)
        out[k:k + take] = _noise_block(seed, b, n)[off:off + take]
        k += take
    return out


def _thermostat(sys, params, dt):
    mu = sys.mass_ratio
    units = sys.units
    gamma = (params.eta / units.friction) / mu
    c1 = np.exp(-gamma * dt)
    kt = params.temperature / units.temperature
    sig = np.sqrt((1 - c1**2) * kt / mu)
    return c1, sig


def integrate(sys, state, nsteps, dt, w2=None, efield=None, params=None, stride=0,
              backend=None, check_energy=True, loss_length=None):
    """Advance ``state`` by ``nsteps`` steps of ``dt`` (dimensionless); returns ``(state, Trajectory)``.

    ``w2`` and ``efield`` optionally give the dimensionless schedule at the
    ``nsteps + 1`` step boundaries.  ``params`` switches on the Langevin
    thermostat; without it the step is velocity Verlet.
    """
    kern = kernels.get_backend(backend)
    n = state.n
    st = state.copy()
    if w2 is None:
        w2 = np.full(nsteps + 1, sys.w2)
    if efield is None:
        efield = np.full(nsteps + 1, sys.efield)
    w2 = np.ascontiguousarray(w2, dtype=float)
    efield = np.ascontiguousarray(efield, dtype=float)
    inv_m = np.ascontiguousarray(1.0 / sys.mass_ratio)
    kz = np.ascontiguousarray(sys.kz)
    kxm = np.ascontiguousarray(sys.kxm)
    thermo = params is not None and (params.eta > 0 or params.temperature > 0)
    if thermo:
        c1, sig = _thermostat(sys, params, dt)
    else:
        c1 = sig = np.zeros(n)
    if loss_length is None:
        loss_length = 10.0 * max(np.ptp(st.z), 1.0)
    frames = []
    empty_noise = np.zeros((0, 2, n))
    chunk = CHUNK if stride <= 0 else max(stride, (CHUNK // stride) * stride)
    done = 0
    e_prev = None
    while done < nsteps:
        m = min(chunk, nsteps - done)
        noise = _noise(st.rng_seed, st.step, m, n) if thermo else empty_noise
        out = np.zeros((1 + m // stride, 4, n)) if stride > 0 else np.zeros((0, 4, n))
        if check_energy and not thermo and e_prev is None:
            e_prev = _total_energy(sys, st, w2[done], efield[done])
        u = kern.run_baoab(st.z, st.x, st.vz, st.vx, inv_m, kz, kxm, sys.coulomb,
                           w2[done:done + m + 1], efield[done:done + m + 1], dt, m, c1, sig,
                           noise, max(stride, 0), out)
        if stride > 0:
            frames.append(out if done == 0 else out[1:])
        st.step += m
        st.time = state.time + dt * (done + m)
        done += m
        if not (np.all(np.isfinite(st.z)) and np.all(np.isfinite(st.x))
                and np.all(np.isfinite(st.vz)) and np.all(np.isfinite(st.vx))):
            raise Instability(f"non-finite state at step {st.step}")
        if np.max(np.abs(st.z)) > loss_length or np.max(np.abs(st.x)) > loss_length:
            raise IonLoss(f"ion escaped at step {st.step}")
        if check_energy and not thermo:
            e_now = u + st.kinetic_energy(sys)
            if abs(e_now - e_prev) / max(abs(e_now), 1e-300) > 1e-3 * m:
                raise Instability("energy drift exceeds 1e-3 per step")
            e_prev = e_now
    if stride > 0 and frames:
        fr = np.concatenate(frames)
        traj = Trajectory(state.time + dt * stride * np.arange(fr.shape[0]), fr, sys)
    else:
        traj = Trajectory(np.zeros(0), np.zeros((0, 4, n)), sys)
    return st, traj


def _total_energy(sys, st, w2, efield):
    u, _, _ = kernels.forces(np.ascontiguousarray(st.z), np.ascontiguousarray(st.x), sys.kz,
                             sys.kxm, w2, efield, sys.coulomb)
    return u + st.kinetic_energy(sys)


def total_energy(sys, state):
    """Kinetic plus potential energy (dimensionless)."""
    return _total_energy(sys, state, sys.w2, sys.efield)


def dt_dimensionless(sys, dt_seconds):
    return dt_seconds / sys.units.time


def step_nve(sys, state, dt):
    """One velocity-Verlet step of ``dt`` seconds."""
    return integrate(sys, state, 1, dt_dimensionless(sys, dt))[0]


def step_langevin(sys, state, params):
    """One BAOAB step with friction ``eta`` and temperature ``T`` from ``params``."""
    return integrate(sys, state, 1, dt_dimensionless(sys, params.dt), params=params)[0]


def run_nve(sys, state, duration, dt=DEFAULT_DT, stride=0, backend=None):
    nsteps = int(round(duration / dt))
    return integrate(sys, state, nsteps, dt_dimensionless(sys, dt), stride=stride, backend=backend)


def run_langevin(sys, state, params, duration, stride=0, backend=None):
    nsteps = int(round(duration / params.dt))
    return integrate(sys, state, nsteps, dt_dimensionless(sys, params.dt), params=params,
                     stride=stride, backend=backend)


def damping_time(sys, params):
    """``m / eta`` for the reference mass, seconds."""
    return sys.units.mass_kg / params.eta if params.eta > 0 else np.inf


def thermalize(sys, state0, params, duration):
    """Langevin run at fixed trap settings; ``T = 0`` relaxes to the nearest minimum."""
    if params.temperature == 0:
        relaxed = minimize_energy(sys, state0.config())
        st = DynamicsState.at_rest(relaxed, state0.rng_seed)
        st.time = state0.time
        st.step = state0.step
        return st
    if duration < 10 * damping_time(sys, params):
        warnings.warn("thermalization shorter than 10 damping times", RuntimeWarning, stacklevel=2)
    return run_langevin(sys, state0, params, duration)[0]


def thermal_sample(sys, config, temperature, rng):
    """Canonical sample in the harmonic approximation about the minimum ``config``.

    Positions are drawn mode by mode from the mass-weighted Hessian,
    velocities from the Maxwell distribution.  Exact for small oscillations,
    and far cheaper than a Langevin equilibration.
    """
    kt = temperature / sys.units.temperature
    mvec = mass_vector(sys, config)
    s = 1.0 / np.sqrt(mvec)
    evals, evecs = np.linalg.eigh(hessian(sys, config) * s[:, None] * s[None, :])
    if evals[0] <= 0:
        raise ValueError("thermal_sample needs a minimum with a positive-definite Hessian")
    amp = rng.standard_normal(evals.size) * np.sqrt(kt / evals)
    dq = s * (evecs @ amp)
    v = rng.standard_normal(mvec.size) * np.sqrt(kt / mvec)
    n = config.n
    st = DynamicsState.at_rest(Configuration(config.z + dq[:n], config.x + dq[n:], config.ids))
    st.vz[config.ids] = v[:n]
    st.vx[config.ids] = v[n:]
    return st


def run_quench(sys, state0, schedule, params, ref=None, survival_time=SURVIVAL_TIME,
               stride=0, detect_kw=None, backend=None):
    """Integrate a radial quench and report kinks at ramp end and at ``survival_time``.

    ``survival_time`` is measured from the start of the ramp.  Returns
    ``(final_state, trajectory, report_at_ramp_end, report_at_survival)``.
    """
    detect_kw = dict(detect_kw or {})
    dt = dt_dimensionless(sys, params.dt)
    total = max(schedule.duration, survival_time)
    nsteps = int(round(total / params.dt))
    t = np.arange(nsteps + 1) * params.dt
    w2 = sys.w2_from_nu(schedule.nu_x(t))
    ef = sys.efield_from_si(schedule.field(t)) if schedule.e_field else np.full(nsteps + 1, sys.efield)
    n_ramp = int(round(schedule.t_r / params.dt))
    n_surv = int(round(survival_time / params.dt))
    marks = sorted({min(n_ramp, nsteps), min(n_surv, nsteps), nsteps})
    st = state0
    reports = {}
    trajs = []
    done = 0
    loss_length = 10.0 * max(np.ptp(state0.z), 1.0)
    for mark in marks:
        if mark > done:
            st, tr = integrate(sys, st, mark - done, dt, w2[done:mark + 1], ef[done:mark + 1],
                               params, stride, backend, loss_length=loss_length)
            if stride > 0:
                trajs.append(tr if not trajs else Trajectory(tr.times[1:], tr.frames[1:], sys))
            done = mark
        if mark in (min(n_ramp, nsteps), min(n_surv, nsteps)):
            x_off = float(ef[mark] / w2[mark])
            reports[mark] = kinkdetect.detect(st.config(), ref, x_offset=x_off, **detect_kw)
    traj = None
    if trajs:
        traj = Trajectory(np.concatenate([tr.times for tr in trajs]),
                          np.concatenate([tr.frames for tr in trajs]), sys)
    return st, traj, reports[min(n_ramp, nsteps)], reports[min(n_surv, nsteps)]


def kink_track(traj, ref, **detect_kw):
    """Kink count and centre per frame; the centre is NaN unless exactly one kink is present."""
    n = np.empty(traj.frames.shape[0], dtype=int)
    X = np.full(traj.frames.shape[0], np.nan)
    for k, cfg in enumerate(traj.configs()):
        rep = kinkdetect.detect(cfg, ref, **detect_kw)
        n[k] = rep.n_kinks
        if rep.n_kinks == 1:
            X[k] = rep.kinks[0].centre
    return n, X


def power_spectrum(t, y, n_fft=None):
    """Hann-windowed power spectrum of ``y(t)`` (uniform ``t``), mean removed.

    Returns ``(frequencies, power)``.  The transform is zero-padded to
    ``n_fft`` points, by default four times the next power of two, so that
    spectra of equal-length series can be averaged bin by bin.
    """
    y = np.asarray(y, dtype=float)
    if y.size < 8 or not np.all(np.isfinite(y)):
        raise ValueError("need at least 8 finite samples")
    dt = float(t[1] - t[0])
    y = (y - y.mean()) * np.hanning(y.size)
    if n_fft is None:
        n_fft = 1 << int(np.ceil(np.log2(y.size)) + 2)
    return np.fft.rfftfreq(n_fft, dt), np.abs(np.fft.rfft(y, n_fft)) ** 2


def spectral_peak(freqs, power):
    """Frequency of the largest non-zero-frequency peak, refined on the log power."""
    p = np.asarray(power)
    k = int(np.argmax(p[1:])) + 1
    shift = 0.0
    if 1 <= k < p.size - 1 and min(p[k - 1], p[k], p[k + 1]) > 0:
        a, b, c = np.log(p[k - 1]), np.log(p[k]), np.log(p[k + 1])
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
    return float(freqs[k] + shift * (freqs[1] - freqs[0]))


def dominant_frequency(t, y):
    """Frequency of the largest spectral peak of ``y(t)``; see :func:`power_spectrum`."""
    return spectral_peak(*power_spectrum(t, y))
