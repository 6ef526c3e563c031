"""Stationary crystals, kink seeding, constrained continuation and PN potentials.

The adiabatic kink trajectory ``f(X)`` minimizes the potential energy on
the surface ``g(Q) = X`` for a kink-centre functional ``g``.  Each point is
found with a Newton iteration on the stationarity conditions of the
Lagrange function ``V + lambda (g - X)``, warm-started from the previous
point of the trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kinkdetect
from .errors import (ConstraintSingular, NoConvergence, NoKinkFormed, NumericalError,
                     OutOfRange, TooFewExtrema)
from .kinkdetect import ExtendedCentre, OddCentre
from .model import (Configuration, energy_and_gradient_q, hessian_q, linear_guess,
                    potential_energy)

log = logging.getLogger(__name__)

GRAD_TOL = 1e-9
KKT_TOL = 1e-10
MAX_STEP = 0.05


# -- unconstrained -------------------------------------------------------------


def _newton_polish(sys, q, ids, tol, maxiter=50):
    for _ in range(maxiter):
        u, g = energy_and_gradient_q(sys, q, ids)
        if np.max(np.abs(g)) < tol:
            return q, True
        h = hessian_q(sys, q, ids)
        evals, evecs = np.linalg.eigh(h)
        if evals[0] <= 0:
            return q, False
        step = -evecs @ ((evecs.T @ g) / evals)
        big = np.max(np.abs(step))
        if big > MAX_STEP:
            step *= MAX_STEP / big
        q = q + step
    u, g = energy_and_gradient_q(sys, q, ids)
    return q, bool(np.max(np.abs(g)) < tol)


def minimize_energy(sys, q0, tol=GRAD_TOL, maxiter=20000, ensure_minimum=True):
    """Relax ``q0`` to a local minimum of the potential energy.

    L-BFGS from ``q0`` followed by Newton polishing with the exact Hessian.
    If the result is a saddle (negative Hessian eigenvalue) it is pushed
    down the unstable direction and relaxed again.
    """
    ids = q0.ids
    q = q0.q.copy()
    e0 = potential_energy(sys, q0)
    for attempt in range(6):
        res = minimize(lambda v: energy_and_gradient_q(sys, v, ids), q, jac=True,
                       method="L-BFGS-B",
                       options={"maxiter": maxiter, "gtol": 1e-12, "ftol": 1e-16, "maxcor": 30})
        q, ok = _newton_polish(sys, res.x, ids, tol)
        h = hessian_q(sys, q, ids)
        evals, evecs = np.linalg.eigh(h)
        if ok and (not ensure_minimum or evals[0] > 0):
            break
        if evals[0] <= 0:
            q = q + 0.02 * evecs[:, 0]
    else:
        raise NoConvergence("energy minimization did not reach a minimum")
    out = Configuration.from_q(q, ids)
    if potential_energy(sys, out) > e0 + 1e-12 * max(1.0, abs(e0)):
        raise NoConvergence("minimization increased the energy")
    return out


def linear_chain(sys, tol=GRAD_TOL):
    """Relaxed chain with every ion on the trap axis (stationary for any nu_x when E_x = 0)."""
    n = sys.n
    ids = np.arange(n)
    x0 = np.zeros(n)

    def fun(z):
        u, g = energy_and_gradient_q(sys, np.concatenate([z, x0]), ids)
        return u, g[:n]

    res = minimize(fun, linear_guess(n), jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-13, "ftol": 1e-18, "maxiter": 20000})
    z = res.x
    for _ in range(20):
        u, g = fun(z)
        if np.max(np.abs(g)) < tol:
            break
        h = hessian_q(sys, np.concatenate([z, x0]), ids)[:n, :n]
        z = z - np.linalg.solve(h, g)
    if sys.efield != 0.0:
        # uniform field: each ion sits at its own shifted transverse equilibrium
        return minimize_energy(sys, Configuration(z, sys.efield / (sys.w2 * sys.kxm)), tol)
    return Configuration(z, x0)


def zigzag(sys, amplitude=0.2, tol=GRAD_TOL):
    """Kink-free ground state started from an alternating transverse pattern."""
    n = sys.n
    lin = linear_chain(sys, tol)
    x0 = amplitude * np.where(np.arange(n) % 2 == 0, 1.0, -1.0) + sys.efield / (sys.w2 * sys.kxm)
    return minimize_energy(sys, Configuration(lin.z, x0), tol)


def seed_kink(sys, zig, tol=GRAD_TOL, ref=None, at=0.0):
    """Stationary single-kink configuration from a kink-free zigzag.

    Flips the transverse sign of every ion with ``z > at``, relaxes, and
    checks that exactly one kink survived.  With a mass defect the energy
    landscape has several single-kink minima; ``at`` just beyond the defect
    seeds the one trapped there.
    """
    rep0 = kinkdetect.detect(zig)
    if rep0.structure == "linear":
        raise NoKinkFormed("no zigzag to host a kink")
    x = np.where(zig.z > at, -zig.x, zig.x)
    relaxed = minimize_energy(sys, Configuration(zig.z, x, zig.ids), tol)
    rep = kinkdetect.detect(relaxed, ref if ref is not None else zig)
    if rep.n_kinks != 1:
        raise NoKinkFormed(f"relaxation left {rep.n_kinks} kinks ({rep.structure})")
    return relaxed


# -- constrained ---------------------------------------------------------------


def kkt_residuals(sys, q, func, target):
    """``(tangential gradient norm, constraint violation, lambda)`` at ``q``."""
    u, grad = energy_and_gradient_q(sys, q.q, q.ids)
    gv, gg = func.value_grad(q.q)
    lam = -float(grad @ gg / (gg @ gg))
    return float(np.linalg.norm(grad + lam * gg)), abs(gv - target), lam


def constrained_minimize(sys, q0, func, target, tol=KKT_TOL, tol_c=KKT_TOL, maxiter=200):
    """Minimize the energy subject to ``func(q) = target``.

    Returns ``(configuration, lambda)`` with ``|grad V + lambda grad g| < tol``
    and ``|g - target| < tol_c``.  The reduced Hessian is shifted when it is
    not positive definite so that iterates head for a constrained minimum.
    """
    ids = q0.ids
    q = q0.q.copy()
    m = q.size
    gv, gg = func.value_grad(q)
    if np.linalg.norm(gg) < 1e-12:
        raise ConstraintSingular("centre functional has vanishing gradient")
    u, grad = energy_and_gradient_q(sys, q, ids)
    lam = -float(grad @ gg / (gg @ gg))
    for it in range(maxiter):
        u, grad = energy_and_gradient_q(sys, q, ids)
        gv, gg = func.value_grad(q)
        nrm = gg @ gg
        if nrm < 1e-24:
            raise ConstraintSingular("centre functional has vanishing gradient")
        lam = -float(grad @ gg / nrm)
        r = grad + lam * gg
        c = gv - target
        if np.linalg.norm(r) < tol and abs(c) < tol_c:
            return Configuration.from_q(q, ids), lam
        w = hessian_q(sys, q, ids) + lam * func.hess(q)
        nvec = gg / np.sqrt(nrm)
        p = np.eye(m) - np.outer(nvec, nvec)
        red = np.linalg.eigvalsh(p @ w @ p + np.outer(nvec, nvec) * 1e6)
        shift = 0.0
        if red[0] <= 1e-6:
            shift = 1e-3 - red[0]
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = w + shift * np.eye(m)
        kkt[:m, m] = gg
        kkt[m, :m] = gg
        rhs = -np.concatenate([r, [c]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            raise ConstraintSingular("singular KKT system") from None
        step = sol[:m]
        big = np.max(np.abs(step))
        if big > MAX_STEP:
            step *= MAX_STEP / big
        merit0 = np.linalg.norm(r) + abs(c)
        alpha = 1.0
        for _ in range(8):
            qn = q + alpha * step
            try:
                un, gn = energy_and_gradient_q(sys, qn, ids)
                gvn, ggn = func.value_grad(qn)
            except NumericalError:
                alpha *= 0.5
                continue
            lamn = -float(gn @ ggn / (ggn @ ggn))
            merit = np.linalg.norm(gn + lamn * ggn) + abs(gvn - target)
            if merit < merit0 or (shift > 0 and un + lamn * (gvn - target) < u):
                break
            alpha *= 0.5
        # keep rank order so the centre functional sees sorted positions
        cfg = Configuration.from_q(q + alpha * step, ids)
        q, ids = cfg.q, cfg.ids
    raise NoConvergence(f"constrained minimization did not converge at X={target:.6g}")


# -- PN curves -----------------------------------------------------------------


@dataclass
class PNSample:
    X: float
    config: Configuration
    energy: float
    lam: float
    kkt: float = 0.0
    interface: int | None = None


@dataclass
class PNCurve:
    """Sampled adiabatic trajectory; energies relative to the kink-free zigzag."""

    samples: list
    kink_kind: str
    reference_config: Configuration
    system: object
    reference_energy: float = 0.0
    truncated: tuple = (False, False)
    meta: dict = field(default_factory=dict)

    @property
    def X(self):
        return np.array([s.X for s in self.samples])

    @property
    def U(self):
        return np.array([s.energy for s in self.samples])

    @property
    def lam(self):
        return np.array([s.lam for s in self.samples])

    @property
    def configs(self):
        return [s.config for s in self.samples]

    def U_kelvin(self):
        return self.U * self.system.units.temperature

    def functional(self, sample):
        if self.kink_kind == "odd":
            return OddCentre(sample.interface)
        return ExtendedCentre(self.reference_config.z)

    def centre_spacing(self):
        return kinkdetect.central_spacing(self.reference_config)[1]

    def to_table(self, path=None):
        """Tab-separated table: X_m, U_J, U_K, lambda, then z_*/x_* in meters."""
        units = self.system.units
        n = self.reference_config.n
        header = (["X_m", "U_J", "U_K", "lambda_N"] + [f"z{j}_m" for j in range(n)]
                  + [f"x{j}_m" for j in range(n)])
        lines = ["\t".join(header)]
        for s in self.samples:
            row = [s.X * units.length, s.energy * units.energy, s.energy * units.temperature,
                   s.lam * units.force]
            row += list(s.config.q * units.length)
            lines.append("\t".join(f"{v:.12e}" for v in row))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _odd_interface(q, ref):
    rep = kinkdetect.detect(q, ref, kind="odd")
    if rep.n_kinks != 1 or rep.kinks[0].interface is None:
        raise NoKinkFormed("no single odd-kink interface found")
    return rep.kinks[0].interface


def _solve_at(sys, cur, cur_j, kind, ref, target, tol):
    """Constrained point at ``target``, re-sorting ions and switching odd interfaces as needed."""
    if kind == "odd":
        j = cur_j
        if target > cur.z[j + 1] and j + 2 < cur.n:
            j += 1
        elif target < cur.z[j] and j > 0:
            j -= 1
        func = OddCentre(j)
    else:
        j = None
        func = ExtendedCentre(ref.z)
    start = cur
    for _ in range(3):
        sol, lam = constrained_minimize(sys, start, func, target, tol, tol)
        val = func.value(sol.q)
        if abs(val - target) < tol:
            return sol, lam, j
        start = sol
    raise NoConvergence("ion reordering moved the kink centre off target")


def trace_adiabatic(sys, start, kind, ref, dX=None, x_range=None, tol=KKT_TOL,
                    min_step_fraction=1 / 16, max_samples=4000):
    """Continue the constrained minimum from ``start`` in both directions.

    Parameters
    ----------
    start : Configuration
        Stationary single-kink configuration.
    kind : {"odd", "extended", "intermediate"}
        Selects the centre functional (intermediate kinks use the extended one).
    ref : Configuration
        Kink-free zigzag of the same system.
    dX : float, optional
        Continuation step; defaults to 1/20 of the central axial spacing.
    x_range : (float, float), optional
        Bounds for X; defaults to the zigzag extent of ``ref``.
    """
    if kind not in kinkdetect.KINDS:
        raise ValueError(f"unknown kink kind {kind!r}")
    b = kinkdetect.central_spacing(ref)[1]
    if dX is None:
        dX = b / 20
    if dX <= 0:
        raise ValueError("dX must be positive")
    if x_range is None:
        rep = kinkdetect.detect(ref)
        x_range = rep.zigzag_extent or (ref.z[0], ref.z[-1])
    e_ref = potential_energy(sys, ref)

    j0 = _odd_interface(start, ref) if kind == "odd" else None
    func0 = OddCentre(j0) if kind == "odd" else ExtendedCentre(ref.z)
    X0 = func0.value(start.q)
    cfg0, lam0 = constrained_minimize(sys, start, func0, X0, tol, tol)
    first = PNSample(X0, cfg0, potential_energy(sys, cfg0) - e_ref, lam0,
                     kkt_residuals(sys, cfg0, func0, X0)[0], j0)

    branches = []
    truncated = []
    for direction in (1.0, -1.0):
        cur, cur_j, X = cfg0, j0, X0
        step = dX
        out = []
        cut = False
        while len(out) < max_samples:
            target = X + direction * step
            if not x_range[0] <= target <= x_range[1]:
                break
            try:
                sol, lam, j = _solve_at(sys, cur, cur_j, kind, ref, target, tol)
                rep = kinkdetect.detect(sol, ref, kind="odd" if kind == "odd" else "extended")
                if rep.n_kinks != 1:
                    raise NoKinkFormed(f"{rep.n_kinks} kinks at X={target:.4g}")
            except NumericalError as exc:
                if step > dX * min_step_fraction * 1.0001:
                    step *= 0.5
                    continue
                log.info("continuation stopped at X=%.5g: %s", target, exc)
                cut = True
                break
            func = OddCentre(j) if kind == "odd" else ExtendedCentre(ref.z)
            out.append(PNSample(target, sol, potential_energy(sys, sol) - e_ref, lam,
                                kkt_residuals(sys, sol, func, target)[0], j))
            cur, cur_j, X = sol, j, target
            step = min(step * 2, dX)
        branches.append(out)
        truncated.append(cut)
    samples = branches[1][::-1] + [first] + branches[0]
    return PNCurve(samples, kind, ref, sys, e_ref, (truncated[1], truncated[0]),
                   {"dX": dX, "x_range": tuple(x_range)})


# -- barriers ------------------------------------------------------------------


@dataclass
class Barrier:
    x_min: float
    x_max: float
    height: float
    height_kelvin: float


def local_extrema(X, U, rel_tol=1e-12):
    """Indices of interior local minima and maxima of sampled ``U``."""
    U = np.asarray(U)
    scale = max(np.ptp(U), 1e-300)
    d = np.diff(U)
    d[np.abs(d) < rel_tol * scale] = 0.0
    sgn = np.sign(d)
    # carry the last non-zero slope across flat runs
    for k in range(1, sgn.size):
        if sgn[k] == 0:
            sgn[k] = sgn[k - 1]
    mins, maxs = [], []
    for k in range(1, sgn.size):
        if sgn[k - 1] < 0 < sgn[k]:
            mins.append(k)
        elif sgn[k - 1] > 0 > sgn[k]:
            maxs.append(k)
    return np.array(mins, dtype=int), np.array(maxs, dtype=int)


def pn_barriers(curve):
    """Energy differences between adjacent local extrema of the PN potential."""
    X, U = curve.X, curve.U
    mins, maxs = local_extrema(X, U)
    ext = sorted([(k, "min") for k in mins] + [(k, "max") for k in maxs])
    if len(ext) < 3:
        raise TooFewExtrema(f"only {len(ext)} interior extrema")
    tk = curve.system.units.temperature
    out = []
    for (k1, t1), (k2, t2) in zip(ext[:-1], ext[1:]):
        kmin, kmax = (k1, k2) if t1 == "min" else (k2, k1)
        h = U[kmax] - U[kmin]
        out.append(Barrier(float(X[kmin]), float(X[kmax]), float(h), float(h * tk)))
    return out


def central_barrier(curve):
    """Lowest escape barrier out of the local minimum closest to ``X = 0``."""
    bars = pn_barriers(curve)
    xm = min({b.x_min for b in bars}, key=abs)
    return min(b.height for b in bars if b.x_min == xm)


def pn_period(curve, window=None, extent=2.0):
    """Mean spacing of consecutive ripple extrema of the detrended PN potential.

    The trend (e.g. the decrease toward the chain ends) shifts the raw
    extrema of ``U``, so the period is measured on the ripple left after
    subtracting a moving average; see :func:`detrended_ripple`.
    """
    grid, res = detrended_ripple(curve, window, extent)
    mins, maxs = local_extrema(grid, res)
    spacings = [np.diff(np.sort(grid[k])) for k in (mins, maxs) if k.size >= 2]
    if not spacings:
        raise TooFewExtrema("need two ripple extrema of the same type")
    return float(np.mean(np.concatenate(spacings)))


def well_depth(curve, X_near):
    """Depth of the local minimum closest to ``X_near``: lower neighbouring peak minus the minimum.

    Curve endpoints count as peaks when they lie above the minimum.
    """
    X, U = curve.X, curve.U
    mins, maxs = local_extrema(X, U)
    if mins.size == 0:
        raise TooFewExtrema("no interior minimum")
    k = mins[np.argmin(np.abs(X[mins] - X_near))]
    left = [m for m in maxs if m < k]
    right = [m for m in maxs if m > k]
    lpk = U[max(left)] if left else U[0]
    rpk = U[min(right)] if right else U[-1]
    return float(min(lpk, rpk) - U[k]), float(X[k])


def trap_depth(curve, pure, X_near):
    """Binding of the kink by a defect: how far the defect lowers ``U`` at its trapped minimum.

    The trapped minimum is the local minimum of ``curve`` closest to
    ``X_near`` (the global minimum when there is no interior one).  Both
    curves are measured from their own kink-free zigzag, so the difference
    ``U_pure(X) - U(X)`` isolates the defect's contribution.  Returns
    ``(depth, X)``.
    """
    X, U = curve.X, curve.U
    mins, _ = local_extrema(X, U)
    k = mins[np.argmin(np.abs(X[mins] - X_near))] if mins.size else int(np.argmin(U))
    if not pure.X[0] <= X[k] <= pure.X[-1]:
        raise OutOfRange(f"X = {X[k]:.4g} outside the defect-free curve")
    return float(np.interp(X[k], pure.X, pure.U) - U[k]), float(X[k])


def detrended_ripple(curve, window=None, extent=2.0):
    """``(X, U - moving average of U)`` on a uniform grid, restricted to the interior.

    Parameters
    ----------
    curve : PNCurve
    window : float, optional
        Averaging window (dimensionless).  Defaults to ``2 b`` for extended
        and intermediate kinks and ``b`` for odd kinks, the nominal PN
        periods; averaging over one period removes the ripple from the trend.
    extent : float
        Only ``|X| < extent * window`` is kept, away from the zigzag edges.
    """
    b = curve.centre_spacing()
    if window is None:
        window = b if curve.kink_kind == "odd" else 2.0 * b
    X, U = curve.X, curve.U
    h = float(np.min(np.diff(X)))
    grid = np.arange(X[0], X[-1] + 0.5 * h, h)
    Ug = np.interp(grid, X, U)
    w = max(int(round(window / h)), 1)
    w += 1 - w % 2
    smooth = np.convolve(Ug, np.ones(w) / w, mode="same")
    half = w // 2
    valid = np.zeros(grid.size, dtype=bool)
    valid[half:grid.size - half] = True
    valid &= np.abs(grid) < extent * window
    if np.count_nonzero(valid) < 3:
        raise TooFewExtrema("curve too short for the averaging window")
    return grid[valid], (Ug - smooth)[valid]


def corrugation_amplitude(curve, period=None, extent=2.0):
    """Peak-to-peak lattice ripple of ``U`` about its one-period moving average.

    Unlike :func:`pn_barriers` this is defined on a bowl-shaped curve
    without interior maxima; on a corrugated curve it tracks the barrier
    height.  Arguments as for :func:`detrended_ripple`.
    """
    return float(np.ptp(detrended_ripple(curve, period, extent)[1]))
