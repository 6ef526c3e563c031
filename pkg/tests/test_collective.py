import numpy as np
import pytest

from ionkink import collective, dynamics, statics
from ionkink.collective import (KinkTrajectory, by_identity, decompose, harmonic_frequency,
                                integrate_bare_kink, projection, rank_swaps, sample_derivatives)
from ionkink.errors import NoRoot, OutOfRange
from ionkink.kinkdetect import centre_extended
from ionkink.model import Configuration, IonSystem


def away_from_swaps(curve, X, margin):
    return np.array([not any(lo - margin <= x <= hi + margin for lo, hi in rank_swaps(curve))
                     for x in np.atleast_1d(X)])


def translation_curve(curve):
    """Synthetic trajectory that rigidly shifts the crystal along the axis."""
    base = curve.samples[len(curve.samples) // 2].config
    samples = []
    for x in np.linspace(-1.0, 1.0, 41):
        cfg = Configuration(base.z + x, base.x, base.ids)
        samples.append(statics.PNSample(x, cfg, 0.5 * x * x, 0.0))
    return statics.PNCurve(samples, "extended", curve.reference_config, curve.system)


# -- effective mass ------------------------------------------------------------


def test_rigid_translation_mass_is_total_mass(curve140):
    traj = KinkTrajectory(translation_curve(curve140), tangents=False)
    X = np.linspace(-0.9, 0.9, 13)
    assert np.allclose(traj.mass(X), 30.0, rtol=1e-12)


def test_rigid_translation_mass_with_defect(curve140):
    sys = IonSystem.uniform(30, 24.6e3, 140e3, defects={11: 220})
    curve = translation_curve(curve140)
    curve.system = sys
    traj = KinkTrajectory(curve, tangents=False)
    assert traj.mass(0.3) == pytest.approx(29 + 220 / 172, rel=1e-12)


def test_mass_positive_over_curve(traj140):
    X = np.linspace(*traj140.bounds, 2001)
    assert np.all(traj140.mass(X) > 0)


def test_sample_tangents_match_finite_differences(curve140):
    X = curve140.X
    h = curve140.meta["dX"]
    Q = np.array([by_identity(s.config) for s in curve140.samples])
    checked = 0
    for k in range(1, X.size - 1):
        if not (np.isclose(X[k + 1] - X[k], h) and np.isclose(X[k] - X[k - 1], h)):
            continue
        if not away_from_swaps(curve140, X[k], 1.5 * h)[0]:
            continue
        fd = (Q[k + 1] - Q[k - 1]) / (2 * h)
        exact, _ = sample_derivatives(curve140, curve140.samples[k])
        assert np.linalg.norm(exact - fd) < 5e-3 * np.linalg.norm(exact)
        checked += 1
    assert checked > 50


def test_mass_at_samples_equals_tangent_norm(curve140, traj140):
    m = traj140.mvec
    for s in curve140.samples[::10]:
        t, _ = sample_derivatives(curve140, s)
        assert traj140.mass(s.X) == pytest.approx(np.sum(m * t * t), rel=1e-10)


def test_mass_matches_finite_difference_oracle(curve140, traj140):
    X = curve140.X
    h = curve140.meta["dX"]
    Q = np.array([by_identity(s.config) for s in curve140.samples])
    m = traj140.mvec
    checked = 0
    for k in range(2, X.size - 2):
        if not np.allclose(np.diff(X[k - 2:k + 3]), h, rtol=1e-9):
            continue
        if not away_from_swaps(curve140, X[k], 2 * h)[0]:
            continue
        # fourth-order central difference of the sampled trajectory
        fd = (-Q[k + 2] + 8 * Q[k + 1] - 8 * Q[k - 1] + Q[k - 2]) / (12 * h)
        assert traj140.mass(X[k]) == pytest.approx(np.sum(m * fd * fd), rel=1e-3)
        checked += 1
    assert checked > 100


def test_mass_converges_under_refinement(curve140, traj140):
    # M has cusps where two ions swap axial rank; the interpolants smooth
    # them over a few cells, so convergence is checked away from them
    coarse = KinkTrajectory(curve140, every=2)
    h = 2 * curve140.meta["dX"]
    X = np.linspace(coarse.bounds[0] + h, coarse.bounds[1] - h, 801)
    X = X[away_from_swaps(curve140, X, 3 * h)]
    assert X.size > 400
    rel = np.abs(coarse.mass(X) - traj140.mass(X)) / traj140.mass(X)
    assert rel.max() < 5e-3


def test_literal_mass_definition(curve140, traj140):
    lit = KinkTrajectory(curve140, mass_definition="f")
    X = 0.1
    f = lit.f(X)
    assert lit.mass(X) == pytest.approx(np.sum(lit.mvec * f * f), rel=1e-10)
    assert lit.mass(X) != pytest.approx(traj140.mass(X), rel=0.1)
    with pytest.raises(ValueError):
        KinkTrajectory(curve140, mass_definition="other")


def test_curvature_is_half_mass_derivative(traj140):
    X = np.linspace(-0.5, 0.5, 11)
    h = 1e-6
    fd = (traj140.mass(X + h) - traj140.mass(X - h)) / (4 * h)
    assert np.allclose(traj140.curvature(X), fd, rtol=1e-5, atol=1e-8)


def test_interpolated_energy_matches_samples(curve140, traj140):
    assert np.allclose(traj140.U(curve140.X), curve140.U, atol=1e-14)
    assert np.allclose(traj140.Up(curve140.X), -curve140.lam, atol=1e-12)


def test_out_of_range(curve140, traj140):
    lo, hi = traj140.bounds
    for fn in (traj140.mass, traj140.curvature, traj140.force):
        with pytest.raises(OutOfRange):
            fn(hi + 0.01)
    with pytest.raises(OutOfRange):
        projection(curve140, lo - 0.01, traj140)
    with pytest.raises(OutOfRange):
        collective.effective_mass(curve140, lo - 1.0)


# -- projector -----------------------------------------------------------------


@pytest.mark.parametrize("X", [-0.8, 0.0, 0.37])
def test_projector(curve140, traj140, X, rng):
    P = projection(curve140, X, traj140)
    fp = traj140.fp(X)
    assert np.linalg.norm(P @ fp - fp) < 1e-12 * np.linalg.norm(fp)
    assert np.linalg.norm(fp - P @ fp) / np.linalg.norm(fp) < 1e-12
    v = rng.normal(size=(fp.size, 5))
    assert np.max(np.abs(P @ (P @ v) - P @ v)) < 1e-12 * np.max(np.abs(v))
    # self-adjoint in the mass-weighted metric
    M = np.diag(traj140.mvec)
    assert np.allclose(M @ P, (M @ P).T, atol=1e-12)


# -- reduced dynamics ----------------------------------------------------------


def test_equilibrium_stays_put(curve140, traj140):
    X0 = float(curve140.X[np.argmin(curve140.U)])
    out = integrate_bare_kink(curve140, X0, 0.0, 50.0, 0.0025, traj140, stride=100)
    assert np.max(np.abs(out.X - X0)) < 1e-8


def test_small_oscillation_frequency(curve140, traj140):
    k = int(np.argmin(curve140.U))
    X, U = curve140.X, curve140.U
    h = X[k + 1] - X[k]
    # harmonic expansion of the sampled curve
    upp = (U[k + 1] - 2 * U[k] + U[k - 1]) / h**2
    t, _ = sample_derivatives(curve140, curve140.samples[k])
    oracle = np.sqrt(upp / np.sum(traj140.mvec * t * t)) * curve140.system.nu_z
    nu = harmonic_frequency(curve140, X[k], traj140)
    assert nu == pytest.approx(oracle, rel=1e-3)
    b = curve140.centre_spacing()
    run = integrate_bare_kink(curve140, X[k] + 0.02 * b, 0.0, 40 * np.pi * 2 / (nu / curve140.system.nu_z),
                              0.0025, traj140)
    t_si = run.t / (2 * np.pi * curve140.system.nu_z)
    measured = dynamics.dominant_frequency(t_si, run.X)
    assert measured == pytest.approx(nu, rel=1e-2)


def test_reduced_energy_conservation(curve140, traj140):
    X0 = 25e-6 / curve140.system.units.length
    out = integrate_bare_kink(curve140, X0, 0.0, 250.0, 0.0025, traj140, stride=1000)
    assert out.t[-1] == pytest.approx(250.0)
    e = out.energy
    assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-6


def test_reduced_escape_raises(curve140, traj140):
    with pytest.raises(OutOfRange):
        integrate_bare_kink(curve140, 0.0, 50.0, 50.0, 0.0025, traj140)
    with pytest.raises(OutOfRange):
        integrate_bare_kink(curve140, traj140.bounds[1] + 1, 0.0, 1.0, 0.01, traj140)


def test_reduced_table(curve140, traj140):
    out = integrate_bare_kink(curve140, 0.05, 0.0, 1.0, 0.01, traj140, stride=10)
    lines = out.to_table().splitlines()
    assert lines[0] == "t_s\tX_m\tXdot_m_s\tE_reduced_J"
    assert len(lines) == 1 + out.t.size


# -- decomposition -------------------------------------------------------------


def test_decompose_exact_member(curve140, traj140):
    for s in curve140.samples[20:-20:25]:
        fr = decompose(curve140, s.config, traj=traj140)
        assert abs(fr.X - s.X) < 1e-9
        assert np.linalg.norm(fr.q) < 1e-9
        assert abs(fr.c1) < 1e-8 and abs(fr.c2) < 1e-8


def test_decompose_constructed_perturbation(curve140, traj140, rng):
    m = traj140.mvec
    for s in curve140.samples[30:-30:40]:
        f, fp = traj140.f(s.X), traj140.fp(s.X)
        v = rng.normal(size=f.size)
        basis = np.linalg.qr(np.column_stack([f, fp]))[0]
        # orthogonal to f and f' in the mass-weighted metric
        w = basis / m[:, None]
        v -= w @ np.linalg.solve(basis.T @ w, basis.T @ v)
        v /= np.linalg.norm(v)
        assert abs(np.sum(m * f * v)) < 1e-10 and abs(np.sum(m * fp * v)) < 1e-10
        eps = 1e-3
        Q = f + eps * v
        n = curve140.system.n
        fr = decompose(curve140, Configuration(Q[:n], Q[n:]), traj=traj140)
        assert abs(fr.X - s.X) < 1e-6
        assert np.linalg.norm(fr.q) == pytest.approx(eps, rel=1e-6)
        assert abs(fr.c1) < 1e-8 and abs(fr.c2) < 1e-8


def test_decompose_momentum(curve140, traj140, rng):
    s = curve140.samples[len(curve140.samples) // 2 + 7]
    fp = traj140.fp(s.X)
    v = 0.3 * fp + rng.normal(scale=1e-3, size=fp.size)
    fr = decompose(curve140, s.config, velocity=v, traj=traj140)
    m = traj140.mvec
    assert fr.Pi == pytest.approx(np.sum(m * fp * v))
    assert abs(np.sum(m * fp * fr.p)) < 1e-12


def test_decompose_without_root(curve140, traj140):
    far = curve140.samples[-1].config
    with pytest.raises(NoRoot):
        decompose(curve140, far, traj=traj140, window=(-0.3, -0.1))


def md_centre_disagreement(sys, kink, ref, curve, traj, T, seeds=3):
    """RMS of decomposed X minus the distortion-weighted centre over thermal MD frames."""
    diffs = []
    for seed in range(seeds):
        state = dynamics.thermal_sample(sys, kink, T, np.random.default_rng(seed))
        state.rng_seed = seed
        _, tr = dynamics.run_langevin(sys, state, dynamics.LangevinParams(T), 300e-6, stride=500)
        for cfg in tr.configs():
            x_ref = centre_extended(cfg, ref)
            # frames where the kink wandered to the ends of the traced range are skipped
            b = curve.centre_spacing()
            if not traj.bounds[0] + b < x_ref < traj.bounds[1] - b:
                continue
            fr = decompose(curve, cfg, traj=traj)
            assert abs(fr.c2) < 1e-8
            diffs.append(fr.X - x_ref)
    assert len(diffs) > 100
    return float(np.sqrt(np.mean(np.square(diffs))))


def test_md_frames_agree_with_centre_functional(kink140, zz140, sys140, curve140, traj140):
    rms = md_centre_disagreement(sys140, kink140, zz140, curve140, traj140, 3e-3)
    assert rms < 0.2 * curve140.centre_spacing()


def test_md_frames_agree_with_centre_functional_when_cold(kink140, zz140, sys140, curve140,
                                                          traj140):
    # the two estimators differ by thermal dressing noise, roughly as sqrt(T)
    rms = md_centre_disagreement(sys140, kink140, zz140, curve140, traj140, 0.3e-3)
    assert rms < 0.2 * curve140.centre_spacing()


def test_dressing_residual_is_small(released140, sys140, curve140, traj140):
    dt = 0.5e-9 * 20
    _, tr = dynamics.run_nve(sys140, released140, 20e-6, dt=0.5e-9, stride=20)
    frames = np.array([np.concatenate([f[0], f[1]]) for f in tr.frames])
    res_q, res_x = collective.dressing_residual(curve140, frames, dt / sys140.units.time, traj140)
    assert np.median(res_q) < 1e-2
    assert np.median(res_x) < 1e-2
