"""Ion system, crystal configurations and the trap + Coulomb potential.

Internal units are dimensionless: the reference ion mass ``m`` is 1, the
axial angular frequency ``omega_z`` is 1 and ``e^2 / (4 pi eps0)`` is 1, so
lengths are in units of ``l = (e^2 / (4 pi eps0 m omega_z^2))**(1/3)`` and
energies in ``m omega_z^2 l^2``.  :class:`UnitSystem` converts at the API
boundary.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants

from . import kernels
from .errors import CoincidentIons, ConfigError

REFERENCE_MASS_AMU = 172.0

AXIAL_SCALINGS = ("paper", "static")


@dataclass(frozen=True)
class UnitSystem:
    """Scales that make the potential energy dimensionless."""

    mass_kg: float
    omega_z: float

    @property
    def length(self):
        return (constants.e**2 / (4 * np.pi * constants.epsilon_0 * self.mass_kg * self.omega_z**2)) ** (1.0 / 3.0)

    @property
    def time(self):
        return 1.0 / self.omega_z

    @property
    def energy(self):
        return self.mass_kg * self.omega_z**2 * self.length**2

    @property
    def temperature(self):
        return self.energy / constants.k

    @property
    def velocity(self):
        return self.length * self.omega_z

    @property
    def force(self):
        return self.energy / self.length

    @property
    def efield(self):
        """Field (V/m) whose force on one elementary charge is one force unit."""
        return self.force / constants.e

    @property
    def friction(self):
        """Friction coefficient unit, kg/s."""
        return self.mass_kg * self.omega_z

    _KINDS = ("length", "time", "energy", "temperature", "velocity", "force", "efield", "friction")

    def to_si(self, value, kind):
        if kind not in self._KINDS:
            raise ValueError(f"unknown unit kind {kind!r}")
        return np.asarray(value) * getattr(self, kind) if np.ndim(value) else value * getattr(self, kind)

    def from_si(self, value, kind):
        if kind not in self._KINDS:
            raise ValueError(f"unknown unit kind {kind!r}")
        return np.asarray(value) / getattr(self, kind) if np.ndim(value) else value / getattr(self, kind)


@dataclass(frozen=True)
class IonSystem:
    """Ions in a harmonic pseudopotential with an optional uniform field along x.

    ``masses`` are in atomic mass units and indexed by ion identity (the
    order of the ions along the initial linear chain).  Trap frequencies
    refer to a single ion of ``reference_mass``.
    """

    masses: tuple
    nu_z: float
    nu_x: float
    e_field_x: float = 0.0
    charge: int = 1
    axial_mass_scaling: str = "paper"
    reference_mass: float = REFERENCE_MASS_AMU

    def __post_init__(self):
        masses = tuple(float(m) for m in np.atleast_1d(self.masses))
        object.__setattr__(self, "masses", masses)
        if len(masses) < 1:
            raise ConfigError("need at least one ion")
        if min(masses) <= 0 or self.reference_mass <= 0:
            raise ConfigError("masses must be positive")
        if self.nu_z <= 0 or self.nu_x <= 0:
            raise ConfigError("trap frequencies must be positive")
        if self.axial_mass_scaling not in AXIAL_SCALINGS:
            raise ConfigError(f"axial_mass_scaling must be one of {AXIAL_SCALINGS}")
        if int(self.charge) != self.charge or self.charge == 0:
            raise ConfigError("charge must be a non-zero integer")

    @classmethod
    def uniform(cls, n, nu_z, nu_x, defects=None, **kw):
        """``n`` reference ions, with ``defects`` mapping ion index -> mass."""
        masses = [kw.get("reference_mass", REFERENCE_MASS_AMU)] * n
        for site, mass in (defects or {}).items():
            if not 0 <= int(site) < n:
                raise ConfigError(f"defect position {site} outside 0..{n - 1}")
            masses[int(site)] = float(mass)
        return cls(tuple(masses), nu_z, nu_x, **kw)

    @classmethod
    def from_config(cls, cfg):
        """Build from a mapping (or a JSON/YAML file path) with SI, unit-suffixed keys."""
        if isinstance(cfg, (str, Path)):
            cfg = load_config_file(cfg)
        cfg = dict(cfg)
        known = {"n_ions", "masses", "defects", "nu_z_hz", "nu_x_hz", "e_field_v_per_m",
                 "axial_mass_scaling", "charge", "reference_mass_amu"}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown system keys: {sorted(unknown)}")
        try:
            ref = float(cfg.get("reference_mass_amu", REFERENCE_MASS_AMU))
            masses = cfg.get("masses")
            if masses is None or masses == "default":
                masses = [ref] * int(cfg["n_ions"])
            masses = [float(m) for m in masses]
            if "n_ions" in cfg and int(cfg["n_ions"]) != len(masses):
                raise ConfigError("n_ions does not match the length of masses")
            for site, mass in (cfg.get("defects") or {}).items():
                if not 0 <= int(site) < len(masses):
                    raise ConfigError(f"defect position {site} outside 0..{len(masses) - 1}")
                masses[int(site)] = float(mass)
            return cls(
                masses=tuple(masses),
                nu_z=float(cfg["nu_z_hz"]),
                nu_x=float(cfg["nu_x_hz"]),
                e_field_x=float(cfg.get("e_field_v_per_m", 0.0)),
                charge=int(cfg.get("charge", 1)),
                axial_mass_scaling=str(cfg.get("axial_mass_scaling", "paper")),
                reference_mass=ref,
            )
        except KeyError as exc:
            raise ConfigError(f"missing system key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def to_config(self):
        return {
            "n_ions": self.n,
            "masses": list(self.masses),
            "nu_z_hz": self.nu_z,
            "nu_x_hz": self.nu_x,
            "e_field_v_per_m": self.e_field_x,
            "axial_mass_scaling": self.axial_mass_scaling,
            "charge": self.charge,
            "reference_mass_amu": self.reference_mass,
        }

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    @property
    def n(self):
        return len(self.masses)

    @property
    def units(self):
        return UnitSystem(self.reference_mass * constants.atomic_mass, 2 * np.pi * self.nu_z)

    @property
    def mass_ratio(self):
        """Masses in units of the reference mass, by ion identity."""
        return np.asarray(self.masses) / self.reference_mass

    @property
    def kz(self):
        """Axial stiffness per ion."""
        if self.axial_mass_scaling == "paper":
            return 1.0 / self.mass_ratio
        return np.ones(self.n)

    @property
    def kxm(self):
        """Radial stiffness per ion divided by ``(nu_x / nu_z)**2``."""
        return 1.0 / self.mass_ratio

    @property
    def w2(self):
        return (self.nu_x / self.nu_z) ** 2

    @property
    def coulomb(self):
        return float(self.charge) ** 2

    @property
    def efield(self):
        """Dimensionless force of the dc field on one ion."""
        return self.charge * self.e_field_x / self.units.efield

    def efield_from_si(self, e_v_per_m):
        return self.charge * np.asarray(e_v_per_m, dtype=float) / self.units.efield

    def w2_from_nu(self, nu_x):
        return (np.asarray(nu_x, dtype=float) / self.nu_z) ** 2

    def single_ion_frequencies(self, j=0):
        """Secular frequencies ``(nu_x, nu_z)`` in Hz of ion ``j`` trapped alone."""
        mu = self.mass_ratio[j]
        return (self.nu_x * np.sqrt(self.kxm[j] / mu), self.nu_z * np.sqrt(self.kz[j] / mu))


def load_config_file(path):
    """Read a JSON or YAML mapping."""
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return data


@dataclass(frozen=True, eq=False)
class Configuration:
    """Ion coordinates ordered so that ``z`` is non-decreasing.

    ``ids[k]`` is the identity (index into ``IonSystem.masses``) of the ion
    at axial rank ``k``.  Unsorted input is sorted, carrying ``ids`` along.
    """

    z: np.ndarray
    x: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        z = np.array(self.z, dtype=float).ravel()
        x = np.array(self.x, dtype=float).ravel()
        if z.shape != x.shape:
            raise ValueError("z and x must have the same length")
        ids = np.arange(z.size) if self.ids is None else np.array(self.ids, dtype=np.intp).ravel()
        if ids.shape != z.shape:
            raise ValueError("ids must match the number of ions")
        if z.size > 1 and np.any(np.diff(z) < 0):
            order = np.argsort(z, kind="stable")
            z, x, ids = z[order], x[order], ids[order]
        for a in (z, x, ids):
            a.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_q(cls, q, ids=None):
        q = np.asarray(q, dtype=float)
        n = q.size // 2
        return cls(q[:n], q[n:], ids)

    @property
    def n(self):
        return self.z.size

    @property
    def q(self):
        """Flat coordinate vector ``(z_1..z_N, x_1..x_N)``."""
        return np.concatenate([self.z, self.x])

    def to_si(self, units):
        return self.z * units.length, self.x * units.length

    def mirrored_x(self):
        return Configuration(self.z, -self.x, self.ids)

    def mirrored_z(self):
        return Configuration(-self.z[::-1], self.x[::-1], self.ids[::-1])

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (np.array_equal(self.z, other.z) and np.array_equal(self.x, other.x)
                and np.array_equal(self.ids, other.ids))

    __hash__ = None


def _stiffness(sys, ids):
    return sys.kz[ids], sys.kxm[ids]


def _check_coincident(z, x):
    if z.size < 2:
        return
    dz = z[:, None] - z[None, :]
    dx = x[:, None] - x[None, :]
    r2 = dz * dz + dx * dx
    np.fill_diagonal(r2, np.inf)
    if np.min(r2) == 0.0:
        raise CoincidentIons("two ions occupy the same position")


def energy_and_gradient_q(sys, q, ids, w2=None, efield=None):
    """Energy and gradient for a flat ``q`` at fixed ion identities ``ids``."""
    n = ids.size
    z = np.ascontiguousarray(q[:n])
    x = np.ascontiguousarray(q[n:])
    _check_coincident(z, x)
    kz, kxm = _stiffness(sys, ids)
    u, fz, fx = kernels.forces(z, x, np.ascontiguousarray(kz), np.ascontiguousarray(kxm),
                               sys.w2 if w2 is None else w2,
                               sys.efield if efield is None else efield, sys.coulomb)
    return u, -np.concatenate([fz, fx])


def potential_energy(sys, q):
    """Dimensionless potential energy of configuration ``q``."""
    return energy_and_gradient_q(sys, q.q, q.ids)[0]


def gradient(sys, q):
    """Exact gradient ordered as ``(dV/dz_1..dV/dz_N, dV/dx_1..dV/dx_N)``."""
    return energy_and_gradient_q(sys, q.q, q.ids)[1]


def coulomb_energy(q):
    dz = q.z[:, None] - q.z[None, :]
    dx = q.x[:, None] - q.x[None, :]
    r = np.sqrt(dz * dz + dx * dx)
    iu = np.triu_indices(q.n, 1)
    return float(np.sum(1.0 / r[iu]))


def hessian_q(sys, q, ids):
    n = ids.size
    z, x = q[:n], q[n:]
    _check_coincident(z, x)
    kz, kxm = _stiffness(sys, ids)
    dz = z[:, None] - z[None, :]
    dx = x[:, None] - x[None, :]
    r2 = dz * dz + dx * dx
    np.fill_diagonal(r2, 1.0)
    ir5 = sys.coulomb * r2**-2.5
    np.fill_diagonal(ir5, 0.0)
    # d^2(1/r)/dd_a dd_b = (3 d_a d_b - r^2 delta_ab) / r^5 for the pair separation d
    tzz = (3 * dz * dz - r2) * ir5
    txx = (3 * dx * dx - r2) * ir5
    tzx = 3 * dz * dx * ir5
    h = np.empty((2 * n, 2 * n))
    h[:n, :n] = -tzz
    h[n:, n:] = -txx
    h[:n, n:] = -tzx
    h[n:, :n] = -tzx.T
    idx = np.arange(n)
    h[idx, idx] = tzz.sum(axis=1) + kz
    h[idx + n, idx + n] = txx.sum(axis=1) + sys.w2 * kxm
    h[idx, idx + n] = tzx.sum(axis=1)
    h[idx + n, idx] = tzx.sum(axis=1)
    return h


def hessian(sys, q):
    """Second-derivative matrix in the ``(z..., x...)`` ordering, symmetric by construction."""
    return hessian_q(sys, q.q, q.ids)


def mass_vector(sys, q):
    """Per-coordinate masses (reference-mass units) in the ``(z..., x...)`` ordering."""
    mu = sys.mass_ratio[q.ids]
    return np.concatenate([mu, mu])


def normal_modes(sys, q):
    """Mass-weighted eigen-analysis at a stationary point.

    Returns ``(freqs_hz, vectors)``; unstable modes get negative frequencies
    (``-|nu|``).  Columns of ``vectors`` are mass-weighted eigenvectors.
    """
    h = hessian(sys, q)
    s = 1.0 / np.sqrt(mass_vector(sys, q))
    evals, evecs = np.linalg.eigh(h * s[:, None] * s[None, :])
    freqs = np.sign(evals) * np.sqrt(np.abs(evals)) * sys.nu_z
    return freqs, evecs


def linear_guess(n, spacing=None):
    """Evenly spaced axial guess with the central spacing of an n-ion chain."""
    if n == 1:
        return np.zeros(1)
    if spacing is None:
        spacing = 2.0 * n**-0.56
    return (np.arange(n) - (n - 1) / 2.0) * spacing


def critical_nu_x(sys, linear_config):
    """Radial frequency (Hz) at which the linear chain's lowest transverse mode softens.

    Uses the transverse Hessian block of the linear chain, which is
    independent of ``nu_x`` apart from the trap term, so the threshold is the
    root of a generalized symmetric eigenproblem.
    """
    from scipy.linalg import eigh

    n = linear_config.n
    h0 = hessian(sys.replace(nu_x=sys.nu_z * 1e-9), linear_config)[n:, n:]
    kxm = np.diag(sys.kxm[linear_config.ids])
    # (h0 + w2 kxm) v = 0 -> -h0 v = w2 kxm v; the softening w2 is the largest root
    w2 = eigh(-h0, kxm, eigvals_only=True).max()
    return float(np.sqrt(w2) * sys.nu_z)


def steane_critical_nu_x(n, nu_z):
    """Empirical linear-zigzag threshold ``0.73 N^0.86 nu_z``."""
    return 0.73 * n**0.86 * nu_z
