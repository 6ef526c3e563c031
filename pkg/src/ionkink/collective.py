"""Collective-coordinate description of a kink riding on its adiabatic trajectory.

A configuration is written as ``Q = f(X) + q`` with ``f`` the adiabatic
trajectory of a :class:`~ionkink.statics.PNCurve` and ``q`` the dressing.
Inner products are mass weighted, ``<u, v> = sum_j m_j u_j v_j``, so the
bare-kink kinetic energy is ``M(X) Xdot**2 / 2`` with ``M = <f', f'>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BPoly, CubicHermiteSpline, CubicSpline, PPoly
from scipy.optimize import brentq

from .errors import NoRoot, OutOfRange
from .kinkdetect import ExtendedCentre, OddCentre
from .model import Configuration, energy_and_gradient_q, hessian_q


def by_identity(config):
    """Flat ``(z, x)`` vector ordered by ion identity rather than axial rank."""
    n = config.n
    out = np.empty(2 * n)
    out[config.ids] = config.z
    out[n + config.ids] = config.x
    return out


def sample_derivatives(curve, sample):
    """Exact ``(df/dX, dlam/dX)`` at a PN sample; ``df/dX`` is ordered by ion identity.

    Differentiating the stationarity conditions ``grad V + lam grad g = 0``,
    ``g = X`` along the curve gives a bordered linear system for both.
    """
    cfg = sample.config
    q = cfg.q
    func = OddCentre(sample.interface) if curve.kink_kind == "odd" else ExtendedCentre(curve.reference_config.z)
    _, gg = func.value_grad(q)
    m = q.size
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = hessian_q(curve.system, q, cfg.ids) + sample.lam * func.hess(q)
    kkt[:m, m] = gg
    kkt[m, :m] = gg
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    sol = np.linalg.solve(kkt, rhs)
    t = sol[:m]
    return by_identity(Configuration(t[:cfg.n], t[cfg.n:], cfg.ids)), float(sol[m])


def rank_swaps(curve):
    """``(X_left, X_right)`` sample intervals in which two ions exchange axial rank.

    The sorted-order centre functional is only piecewise smooth, so ``f'``
    and ``lam`` jump inside these intervals; interpolants smooth the jump
    over one sample spacing.
    """
    out = []
    for s0, s1 in zip(curve.samples[:-1], curve.samples[1:]):
        if not np.array_equal(s0.config.ids, s1.config.ids):
            out.append((float(s0.X), float(s1.X)))
    return out


class KinkTrajectory:
    """Cubic-spline interpolation of ``f(X)`` and ``U(X)`` from a PN curve.

    Parameters
    ----------
    curve : PNCurve
    every : int
        Use every ``every``-th sample (for refinement studies).
    mass_definition : {"fprime", "f"}
        ``"fprime"`` gives the inertia ``<f', f'>``; ``"f"`` evaluates the
        literal ``<f, f>`` for comparison.
    tangents : bool
        Use exact sample tangents ``df/dX`` and slopes ``dU/dX = -lam``
        instead of differentiating a spline through the positions.  The
        inertia has narrow peaks where the kink crosses a PN maximum, and
        the tangent data resolve them with far fewer samples.
    """

    def __init__(self, curve, every=1, mass_definition="fprime", tangents=True):
        if mass_definition not in ("fprime", "f"):
            raise ValueError("mass_definition must be 'fprime' or 'f'")
        samples = curve.samples[::every]
        if len(samples) < 4:
            raise ValueError("need at least four samples")
        self.curve = curve
        self.mass_definition = mass_definition
        self.X = np.array([s.X for s in samples])
        Q = np.array([by_identity(s.config) for s in samples])
        E = np.array([s.energy for s in samples])
        if tangents:
            d = [sample_derivatives(curve, s) for s in samples]
            T = np.array([t for t, _ in d])
            lam = np.array([s.lam for s in samples])
            dlam = np.array([dl for _, dl in d])
            self.f = CubicHermiteSpline(self.X, Q, T, axis=0)
            # f' as a C2 spline of the exact tangents, so the reduced
            # equation of motion has a continuous right-hand side
            self.fp = CubicSpline(self.X, T, axis=0)
            # dU/dX = grad V . f' = -lam on a stationary curve
            bp = BPoly.from_derivatives(self.X, np.column_stack([E, -lam, -dlam]))
            self.U = PPoly.from_bernstein_basis(bp)
        else:
            self.f = CubicSpline(self.X, Q, axis=0)
            self.fp = self.f.derivative(1)
            self.U = CubicSpline(self.X, E)
        self.fpp = self.fp.derivative(1)
        self.Up = self.U.derivative(1)
        self.Upp = self.U.derivative(2)
        mu = curve.system.mass_ratio
        self.mvec = np.concatenate([mu, mu])
        self.system = curve.system
        # scalar piecewise polynomials so that dM/dX = 2 <f', f''> holds exactly
        g = self.fp if mass_definition == "fprime" else self.f
        c = g.c
        deg = c.shape[0]
        coef = np.zeros((2 * deg - 1, c.shape[1]))
        for a in range(deg):
            for b in range(deg):
                coef[a + b] += np.sum(self.mvec * c[a] * c[b], axis=-1)
        self._M = PPoly(coef, g.x)
        self._halfMp = PPoly(0.5 * self._M.derivative(1).c, g.x)

    @property
    def bounds(self):
        return float(self.X[0]), float(self.X[-1])

    def _check(self, X):
        lo, hi = self.bounds
        if np.any(np.asarray(X) < lo) or np.any(np.asarray(X) > hi):
            raise OutOfRange(f"X outside sampled range [{lo:.4g}, {hi:.4g}]")

    def mass(self, X):
        self._check(X)
        return self._M(X)

    def curvature(self, X):
        """``<f', f''>``, half the X-derivative of the effective mass."""
        self._check(X)
        return self._halfMp(X)

    def force(self, X):
        """PN force ``-dU/dX``."""
        self._check(X)
        return -self.Up(X)


def effective_mass(curve, X, **kw):
    """Effective kink mass at ``X`` in units of the reference ion mass."""
    return float(KinkTrajectory(curve, **kw).mass(X))


def projection(curve, X, traj=None):
    """Rank-one projector onto ``f'(X)`` in the mass-weighted metric.

    ``P = f' (m f')^T / M``; it satisfies ``P f' = f'`` and ``P @ P = P``.
    """
    traj = traj or KinkTrajectory(curve)
    traj._check(X)
    fp = traj.fp(X)
    return np.outer(fp, traj.mvec * fp) / traj.mass(X)


@dataclass
class ReducedTrajectory:
    t: np.ndarray
    X: np.ndarray
    V: np.ndarray
    energy: np.ndarray
    system: object = None

    def to_table(self, path=None):
        units = self.system.units
        lines = ["t_s\tX_m\tXdot_m_s\tE_reduced_J"]
        for t, x, v, e in zip(self.t, self.X, self.V, self.energy):
            lines.append(f"{t * units.time:.10e}\t{x * units.length:.10e}\t"
                         f"{v * units.velocity:.10e}\t{e * units.energy:.10e}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def integrate_bare_kink(curve, X0, V0, duration, dt, traj=None, stride=1):
    """Classical RK4 solution of ``M Xddot + <f', f''> Xdot^2 + U'(X) = 0`` (dimensionless)."""
    traj = traj or KinkTrajectory(curve)
    traj._check(X0)

    lo, hi = traj.bounds
    Up, M, C = traj.Up, traj._M, traj._halfMp

    def rhs(X, V):
        if not lo <= X <= hi:
            raise OutOfRange(f"X outside sampled range [{lo:.4g}, {hi:.4g}]")
        return V, -(float(Up(X)) + float(C(X)) * V * V) / float(M(X))

    nsteps = int(round(duration / dt))
    ts, xs, vs = [0.0], [X0], [V0]
    X, V = float(X0), float(V0)
    for k in range(1, nsteps + 1):
        k1x, k1v = rhs(X, V)
        k2x, k2v = rhs(X + 0.5 * dt * k1x, V + 0.5 * dt * k1v)
        k3x, k3v = rhs(X + 0.5 * dt * k2x, V + 0.5 * dt * k2v)
        k4x, k4v = rhs(X + dt * k3x, V + dt * k3v)
        X += dt * (k1x + 2 * k2x + 2 * k3x + k4x) / 6
        V += dt * (k1v + 2 * k2v + 2 * k3v + k4v) / 6
        if k % stride == 0:
            ts.append(k * dt)
            xs.append(X)
            vs.append(V)
    xs = np.array(xs)
    vs = np.array(vs)
    energy = 0.5 * traj.mass(xs) * vs**2 + traj.U(xs)
    return ReducedTrajectory(np.array(ts), xs, vs, energy, curve.system)


def harmonic_frequency(curve, X0, traj=None):
    """Small-oscillation frequency (Hz) ``sqrt(U''/M) / 2 pi`` about ``X0``."""
    traj = traj or KinkTrajectory(curve)
    w = np.sqrt(traj.Upp(X0) / traj.mass(X0))
    return float(w * curve.system.nu_z)


@dataclass
class KinkFrame:
    X: float
    Pi: float
    q: np.ndarray
    p: np.ndarray
    c1: float
    c2: float


def decompose(curve, config, velocity=None, traj=None, window=None):
    """Split ``config`` into ``f(X) + q`` with ``<f'(X), q> = 0``.

    All vectors (``q``, ``p``, ``velocity``) are ordered by ion identity.

    Among the roots of ``<f'(X), Q - f(X)>`` the one with the smallest
    dressing norm is taken.  With ``velocity`` (flat, same ordering as
    ``config.q``) the momentum ``Pi = <f', Qdot>`` is returned and the
    dressing velocity ``p`` satisfies ``<f', p> = 0``.  ``c1 = <f, q>`` and
    ``c2 = <f', q>`` are reported as residuals.
    """
    traj = traj or KinkTrajectory(curve)
    Q = by_identity(config)
    m = traj.mvec

    def h(X):
        return float(np.sum(m * traj.fp(X) * (Q - traj.f(X))))

    lo, hi = window if window is not None else traj.bounds
    grid = traj.X[(traj.X >= lo) & (traj.X <= hi)]
    vals = np.array([h(X) for X in grid])
    roots = []
    for k in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0):
        if vals[k] == 0:
            roots.append(grid[k])
        elif vals[k + 1] != 0:
            roots.append(brentq(h, grid[k], grid[k + 1], xtol=1e-14, rtol=1e-14))
    if not roots:
        raise NoRoot("no kink position satisfies the orthogonality condition")
    X = min(roots, key=lambda r: np.linalg.norm(Q - traj.f(r)))
    fX = traj.f(X)
    fp = traj.fp(X)
    q = Q - fX
    Pi, p = 0.0, np.zeros_like(q)
    if velocity is not None:
        v = np.asarray(velocity, dtype=float)
        Pi = float(np.sum(m * fp * v))
        p = v - fp * Pi / traj.mass(X)
    return KinkFrame(float(X), Pi, q, p, float(np.sum(m * fX * q)), float(np.sum(m * fp * q)))


def dressing_residual(curve, frames_q, dt, traj=None):
    """Relative residuals of the projected dressing and kink equations along an MD trajectory.

    ``frames_q`` holds flat configurations ordered by ion identity, sampled
    every ``dt``.  Second time
    derivatives come from central differences, so the residual is limited by
    the sampling interval.  Returns ``(dressing, kink)`` arrays for the
    interior frames.
    """
    traj = traj or KinkTrajectory(curve)
    sys = curve.system
    m = traj.mvec
    ids = np.arange(sys.n)
    dec = [decompose(curve, Configuration.from_q(Q, ids), traj=traj) for Q in frames_q]
    X = np.array([d.X for d in dec])
    qs = np.array([d.q for d in dec])
    res_q, res_x = [], []
    for k in range(1, len(dec) - 1):
        Xd = (X[k + 1] - X[k - 1]) / (2 * dt)
        Xdd = (X[k + 1] - 2 * X[k] + X[k - 1]) / dt**2
        qdd = (qs[k + 1] - 2 * qs[k] + qs[k - 1]) / dt**2
        _, grad = energy_and_gradient_q(sys, frames_q[k], ids)
        acc = grad / m
        fp, fpp = traj.fp(X[k]), traj.fpp(X[k])
        P = np.outer(fp, m * fp) / traj.mass(X[k])
        inner = qdd + fpp * Xd**2 + acc
        r2 = inner - P @ inner
        scale = np.linalg.norm(acc) + np.linalg.norm(fpp * Xd**2) + 1e-300
        res_q.append(np.linalg.norm(r2) / scale)
        r1 = (traj.mass(X[k]) * Xdd + np.sum(fp * grad) + np.sum(m * fp * qdd)
              + np.sum(m * fp * fpp) * Xd**2)
        res_x.append(abs(r1) / (abs(np.sum(fp * grad)) + traj.mass(X[k]) * abs(Xdd) + 1e-300))
    return np.array(res_q), np.array(res_x)
