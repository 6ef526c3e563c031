import numpy as np
import pytest
from scipy.optimize import brentq, minimize

from ionkink import statics
from ionkink.collective import rank_swaps
from ionkink.errors import NoKinkFormed, NumericalError, TooFewExtrema
from ionkink.kinkdetect import ExtendedCentre, central_spacing, detect
from ionkink.model import (Configuration, IonSystem, energy_and_gradient_q, gradient,
                           potential_energy)

NU_Z = 24.6e3


# -- unconstrained -------------------------------------------------------------


def test_two_ions_from_random_start(rng):
    sys = IonSystem.uniform(2, NU_Z, 500e3)
    start = Configuration(rng.uniform(-2, 2, 2), rng.uniform(-0.3, 0.3, 2))
    q = statics.minimize_energy(sys, start)
    s = 2.0 ** (1 / 3)
    assert q.z == pytest.approx([-s / 2, s / 2], abs=1e-9)
    assert np.max(np.abs(q.x)) < 1e-9
    assert potential_energy(sys, q) <= potential_energy(sys, start)


def test_linear_chain_at_500khz():
    sys = IonSystem.uniform(30, NU_Z, 500e3)
    q = statics.minimize_energy(sys, Configuration(statics.linear_chain(sys).z, np.full(30, 1e-3)))
    assert np.max(np.abs(q.x)) < 1e-6
    assert np.max(np.abs(gradient(sys, q))) < statics.GRAD_TOL


def test_zigzag_at_140khz(zz140, sys140):
    a, b = central_spacing(zz140)
    assert a > b
    assert detect(zz140).structure == "zigzag"
    assert np.max(np.abs(gradient(sys140, zz140))) < statics.GRAD_TOL


# -- seeding -------------------------------------------------------------------


def test_seed_extended_kink_at_140(kink140, zz140, sys140):
    rep = detect(kink140, zz140)
    assert rep.n_kinks == 1 and rep.kinks[0].kind == "extended"
    b = rep.spacing[1]
    moved = np.abs(kink140.z - zz140.z) > 0.1 * b
    assert 7 <= moved.sum() <= 12
    assert np.max(np.abs(gradient(sys140, kink140))) < statics.GRAD_TOL


def test_seed_in_linear_regime_fails():
    sys = IonSystem.uniform(6, NU_Z, 500e3)
    with pytest.raises(NoKinkFormed):
        statics.seed_kink(sys, statics.zigzag(sys))


# -- constrained ---------------------------------------------------------------


def test_inactive_constraint_gives_zero_multiplier(kink140, zz140, sys140):
    func = ExtendedCentre(zz140.z)
    X = func.value(kink140.q)
    q, lam = statics.constrained_minimize(sys140, kink140, func, X)
    assert abs(lam) < 1e-8
    assert np.max(np.abs(q.q - kink140.q)) < 1e-8


def penalty_energy(sys, q0, func, target, weight):
    ids = q0.ids

    def fun(v):
        u, g = energy_and_gradient_q(sys, v, ids)
        c, gc = func.value_grad(v)
        return u + 0.5 * weight * (c - target) ** 2, g + weight * (c - target) * gc

    res = minimize(fun, q0.q, jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-12, "ftol": 1e-16, "maxiter": 50000, "maxcor": 50})
    return energy_and_gradient_q(sys, res.x, ids)[0]


def test_constrained_step_matches_penalty_oracle(kink140, zz140, sys140):
    func = ExtendedCentre(zz140.z)
    b = central_spacing(zz140)[1]
    X = func.value(kink140.q) + b / 20
    q, lam = statics.constrained_minimize(sys140, kink140, func, X)
    tang, viol, _ = statics.kkt_residuals(sys140, q, func, X)
    assert tang < 1e-8 and viol < 1e-8
    e = potential_energy(sys140, q)
    assert e > potential_energy(sys140, kink140)
    # penalty energies approach from below as e - lam^2 / (2 w); extrapolate the sweep
    weights = (1e5, 1e6, 1e7)
    pen = [penalty_energy(sys140, kink140, func, X, w) for w in weights]
    assert pen[0] < pen[1] < pen[2] < e + 1e-6 * abs(e)
    extrap = pen[2] + (pen[2] - pen[1]) / 9
    assert abs(extrap - e) / abs(e) < 1e-6


def test_target_beyond_zigzag_fails(kink140, zz140, sys140):
    func = ExtendedCentre(zz140.z)
    target = zz140.z[-1] + 5.0
    try:
        q, _ = statics.constrained_minimize(sys140, kink140, func, target, maxiter=60)
    except NumericalError:
        return
    assert detect(q, zz140).n_kinks != 1


# -- PN curves -----------------------------------------------------------------


@pytest.mark.parametrize("name", ["curve140", "curve220"])
def test_curve_samples_satisfy_kkt(name, request):
    curve = request.getfixturevalue(name)
    for s in curve.samples:
        tang, viol, _ = statics.kkt_residuals(curve.system, s.config, curve.functional(s), s.X)
        assert tang < 1e-8 and viol < 1e-8


@pytest.mark.parametrize("name", ["curve140", "curve220"])
def test_curve_samples_hold_one_kink(name, request):
    curve = request.getfixturevalue(name)
    kind = "odd" if curve.kink_kind == "odd" else "extended"
    for s in curve.samples[1:-1]:
        assert detect(s.config, curve.reference_config, kind=kind).n_kinks == 1


def assert_even(curve):
    X, U = curve.X, curve.U
    assert np.all(np.diff(X) > 0)
    centre = int(np.argmin(np.abs(X)))
    assert abs(X[centre]) < 1e-9
    k = min(centre, X.size - 1 - centre)
    assert k > 20
    left, right = U[centre - k:centre][::-1], U[centre + 1:centre + 1 + k]
    assert np.max(np.abs(X[centre - k:centre][::-1] + X[centre + 1:centre + 1 + k])) < 1e-9
    assert np.max(np.abs(left - right)) < 1e-6


def test_extended_curve_is_even(curve140):
    assert_even(curve140)


def test_odd_curve_is_even(sys220, zz220):
    # pin the start at X = 0 so the grid is symmetric
    q = statics.seed_kink(sys220, zz220)
    for _ in range(3):
        j = detect(q, zz220, kind="odd").kinks[0].interface
        q, _ = statics.constrained_minimize(sys220, q, statics.OddCentre(j), 0.0)
    b = central_spacing(zz220)[1]
    assert_even(statics.trace_adiabatic(sys220, q, "odd", zz220, x_range=(-3 * b, 3 * b)))


def test_multiplier_is_minus_slope(curve140):
    X, U, lam = curve140.X, curve140.U, curve140.lam
    swaps = rank_swaps(curve140)
    h = curve140.meta["dX"]
    checked = 0
    for k in range(2, X.size - 2):
        stencil = X[k - 2:k + 3]
        if not np.allclose(np.diff(stencil), h, rtol=1e-9):
            continue
        if any(lo - 2 * h <= X[k] <= hi + 2 * h for lo, hi in swaps):
            continue
        slope = (-U[k + 2] + 8 * U[k + 1] - 8 * U[k - 1] + U[k - 2]) / (12 * h)
        assert abs(slope + lam[k]) < 1e-5 * np.max(np.abs(lam))
        checked += 1
    assert checked > 50


def test_multiplier_vanishes_at_interior_minima(curve220):
    curve = curve220
    sys = curve.system
    mins, _ = statics.local_extrema(curve.X, curve.U)
    assert mins.size >= 2
    by_x = {s.X: s for s in curve.samples}
    for k in mins[:3]:
        lo, hi = curve.samples[k - 1], curve.samples[k + 1]
        cache = {}

        def lam_at(x):
            start = by_x.get(x, lo)
            func = statics.OddCentre(lo.interface)
            q, lam = statics.constrained_minimize(sys, start.config, func, x)
            cache[x] = q
            return lam

        x_star = brentq(lam_at, lo.X, hi.X, xtol=1e-13)
        q = cache[x_star]
        assert abs(lam_at(x_star)) < 1e-6
        assert np.max(np.abs(gradient(sys, q))) < 1e-6


def test_warm_start_path_independence(curve140, sys140):
    b = curve140.centre_spacing()
    k = int(np.argmin(np.abs(curve140.X - 2 * b)))
    start = curve140.samples[k]
    back = statics.trace_adiabatic(sys140, start.config, "extended", curve140.reference_config,
                                   dX=curve140.meta["dX"], x_range=(-2 * b, start.X + 1e-9))
    common = 0
    for s in back.samples:
        j = np.flatnonzero(np.abs(curve140.X - s.X) < 1e-9)
        if j.size:
            common += 1
            assert abs(curve140.U[j[0]] - s.energy) < 1e-6
    assert common > 50


def test_monotone_curve_has_too_few_extrema(curve140):
    half = statics.PNCurve(curve140.samples[-15:], "extended", curve140.reference_config,
                           curve140.system)
    assert np.all(np.diff(half.U) > 0)
    with pytest.raises(TooFewExtrema):
        statics.pn_barriers(half)


def test_barriers_in_kelvin(curve220):
    bars = statics.pn_barriers(curve220)
    tk = curve220.system.units.temperature
    for bar in bars:
        assert bar.height > 0
        assert bar.height_kelvin == pytest.approx(bar.height * tk)


def synthetic_curve(curve, U):
    samples = [statics.PNSample(x, s.config, u, 0.0) for x, s, u in
               zip(curve.X, curve.samples, U)]
    return statics.PNCurve(samples, "odd", curve.reference_config, curve.system)


def test_period_and_corrugation_on_synthetic_ripple(curve220):
    b = curve220.centre_spacing()
    X = curve220.X
    amp, period = 0.01, 0.93 * b
    U = amp * np.cos(2 * np.pi * X / period) - 0.05 * X**2
    curve = synthetic_curve(curve220, U)
    assert statics.pn_period(curve, window=period) == pytest.approx(period, rel=0.01)
    assert statics.corrugation_amplitude(curve, period) == pytest.approx(2 * amp, rel=0.02)


def test_pn_table(curve220, tmp_path):
    path = tmp_path / "pn_curve.tsv"
    text = curve220.to_table(path)
    lines = path.read_text().splitlines()
    assert text.splitlines() == lines
    header = lines[0].split("\t")
    assert header[:4] == ["X_m", "U_J", "U_K", "lambda_N"]
    assert len(header) == 4 + 2 * 30
    assert len(lines) == 1 + len(curve220.samples)
    row = np.array(lines[1].split("\t"), dtype=float)
    units = curve220.system.units
    assert row[0] == pytest.approx(curve220.X[0] * units.length, rel=1e-11)
    assert row[2] == pytest.approx(curve220.U[0] * units.temperature, rel=1e-11)


@pytest.mark.parametrize("target_um", [20.0, -35.0])
def test_large_constrained_jump_lands_on_target(kink140, zz140, sys140, target_um):
    # ions change axial rank along the way; the solution must still satisfy the constraint
    func = ExtendedCentre(zz140.z)
    target = target_um * 1e-6 / sys140.units.length
    q, _ = statics.constrained_minimize(sys140, kink140, func, target)
    tang, viol, _ = statics.kkt_residuals(sys140, q, func, target)
    assert tang < 1e-8 and viol < 1e-8
    assert detect(q, zz140).centres[0] == pytest.approx(target, abs=1e-9)


def test_trap_depth_on_synthetic_well(curve140):
    b = curve140.centre_spacing()
    X = curve140.X
    x0, depth = -3.5 * b, 0.02
    well = depth * np.exp(-((X - x0) / b) ** 2)
    pure = synthetic_curve(curve140, 0.01 * X**2)
    trapped = synthetic_curve(curve140, 0.01 * X**2 - well)
    d, where = statics.trap_depth(trapped, pure, x0)
    k = int(np.flatnonzero(X == where)[0])
    # the sampled minimum sits a little inside the well; the depth is the well there
    assert abs(where - x0) < 0.2 * b
    assert d == pytest.approx(well[k], rel=1e-12)
    assert well[k] > 0.9 * depth
    assert statics.trap_depth(pure, pure, x0)[0] == 0.0
