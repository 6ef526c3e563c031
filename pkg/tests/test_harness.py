import numpy as np
import pytest
from hypothesis import given, strategies as st

from ionkink import dynamics, harness
from ionkink.dynamics import TrialRecord
from ionkink.errors import ConfigError, EmptyGroup
from ionkink.harness import (DensityEstimate, FieldScenario, Scenario, density_curve,
                             density_table, histogram_table, spatial_histogram)
from ionkink.kinkdetect import KinkReport, Kink

SMALL = Scenario(name="small", tau_q=(15e-6, 30e-6), n_trials=3, master_seed=5,
                 survival_time=80e-6)


def rec(trial, tau, created, survived, centres=(), error=None):
    return TrialRecord(trial, trial, tau, {}, created, survived, [], list(centres), [], error)


# -- scenarios -----------------------------------------------------------------


def test_scenario_config_round_trip(tmp_path):
    s = Scenario(name="x", defects={11: 220}, tau_q=(15e-6, 100e-6), n_trials=7, master_seed=3)
    again = Scenario.from_config(s.to_config())
    assert again == s
    path = tmp_path / "s.yaml"
    path.write_text("n_ions: 30\ntau_q_us: [15, 30]\ndefects: {5: 188}\nn_trials: 4\n")
    loaded = Scenario.from_config(path)
    assert loaded.tau_q == (15e-6, 30e-6) and loaded.defects == ((5, 188.0),)


@pytest.mark.parametrize("cfg", [
    {"n_trials": 0},
    {"defects": {"30": 220}},
    {"defects": {"-1": 220}},
    {"tau_q_us": [-1]},
    {"bogus_key": 1},
    {"ramp_shape": "cubic"},
    {"n_trials": "many"},
])
def test_scenario_config_errors(cfg):
    with pytest.raises(ConfigError):
        Scenario.from_config(cfg)


def test_trial_seeds_are_stable_and_distinct():
    seeds = {SMALL.trial_seed(k, t) for k in range(2) for t in range(50)}
    assert len(seeds) == 100
    assert SMALL.trial_seed(1, 7) == SMALL.replace(n_trials=99).trial_seed(1, 7)


@given(site=st.integers(0, 29))
def test_mirror_site_is_an_involution(site):
    m = harness.mirror_site(site, 30)
    assert 0 <= m < 30 and harness.mirror_site(m, 30) == site
    assert m + site == 29


def test_defect_label():
    assert harness.defect_label({}) == "pure"
    assert harness.defect_label({19: 220, 11: 220.0}) == "11:220+19:220"


# -- running ensembles ---------------------------------------------------------


def test_single_trial_matches_direct_quench():
    s = SMALL.replace(tau_q=(15e-6,), n_trials=1)
    [got] = harness.run_scenario(s)
    assert got == harness.run_trial(s, 0, 0)
    # the same quench assembled by hand
    seed = s.trial_seed(0, 0)
    sys0 = s.system()
    from ionkink import statics
    start = statics.linear_chain(sys0)
    ref = statics.zigzag(sys0.replace(nu_x=s.nu_x_end))
    state = dynamics.thermal_sample(sys0, start, s.initial_temperature, np.random.default_rng(seed))
    state.rng_seed = seed
    _, _, r_ramp, r_surv = dynamics.run_quench(sys0, state, s.schedule(15e-6), s.params(), ref,
                                               survival_time=s.survival_time)
    assert got.n_created == r_ramp.n_kinks and got.n_survived == r_surv.n_kinks
    length = sys0.units.length
    assert got.survived_centres == [c * length for c in r_surv.centres]


def test_results_independent_of_worker_count(tmp_path):
    one = harness.run_scenario(SMALL, workers=1)
    two = harness.run_scenario(SMALL, workers=2)
    assert one == two
    assert [(r.tau_q, r.trial) for r in one] == sorted((r.tau_q, r.trial) for r in one)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    harness.write_records(one, a)
    harness.write_records(two, b)
    assert a.read_bytes() == b.read_bytes()
    assert harness.read_records(a) == one


def test_created_at_least_survived_in_small_ensemble():
    records = harness.run_scenario(SMALL)
    for c, s in zip(density_curve(records, "created"), density_curve(records, "survived")):
        assert c.d >= s.d


def test_numerical_failure_is_recorded():
    # an absurd time step blows up; the ensemble keeps going
    s = SMALL.replace(tau_q=(15e-6,), n_trials=2, dt=3e-6)
    records = harness.run_scenario(s)
    assert len(records) == 2 and all(r.error for r in records)
    with pytest.raises(EmptyGroup):
        density_curve(records)


# -- statistics ----------------------------------------------------------------


def test_density_arithmetic():
    records = [rec(t, 15e-6, c, s) for t, (c, s) in enumerate([(0, 0), (1, 1), (2, 1), (1, 0)])]
    records.append(rec(9, 15e-6, 0, 0, error="Instability: boom"))
    [e] = density_curve(records, "created")
    assert e.d == 1.0 and e.n_trials == 4 and e.n_failed == 1
    half = 1.959963984540054 * np.std([0, 1, 2, 1], ddof=1) / 2
    assert e.ci95 == pytest.approx((1 - half, 1 + half))
    [s] = density_curve(records, "survived")
    assert s.d == 0.5 and s.ci95[0] == 0.0


def test_all_zero_density():
    [e] = density_curve([rec(t, 30e-6, 0, 0) for t in range(10)], "survived")
    assert e.d == 0.0 and e.ci95 == (0.0, 0.0)


def test_density_groups_by_tau():
    records = [rec(0, 30e-6, 1, 1), rec(0, 15e-6, 2, 0), rec(1, 15e-6, 0, 0)]
    est = density_curve(records, "created")
    assert [e.tau_q for e in est] == [15e-6, 30e-6]
    assert [e.d for e in est] == [1.0, 1.0]


def test_empty_group():
    with pytest.raises(EmptyGroup):
        density_curve([])
    with pytest.raises(ValueError):
        density_curve([rec(0, 1e-5, 0, 0)], "lost")


def test_density_estimate_invariants():
    with pytest.raises(ValueError):
        DensityEstimate(1e-5, 1.0, (1.5, 2.0), 3, "created")
    with pytest.raises(ValueError):
        DensityEstimate(1e-5, -0.1, (-1.0, 1.0), 3, "created")


@given(counts=st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=30))
def test_created_density_bounds_survived(counts):
    records = [rec(t, 15e-6, max(c, s), min(c, s)) for t, (c, s) in enumerate(counts)]
    [c] = density_curve(records, "created")
    [s] = density_curve(records, "survived")
    assert c.d >= s.d
    for e in (c, s):
        assert e.ci95[0] <= e.d <= e.ci95[1]


def test_density_table():
    est = density_curve([rec(0, 15e-6, 1, 1), rec(1, 15e-6, 3, 1)], "created")
    lines = density_table({"pure": est}).splitlines()
    assert lines[0].split("\t")[:4] == ["label", "tau_q_s", "stage", "d"]
    assert lines[1].split("\t")[0] == "pure" and float(lines[1].split("\t")[3]) == 2.0


def test_spatial_histogram():
    b = 5e-6
    records = [rec(0, 1e-5, 1, 1, [0.0]), rec(1, 1e-5, 1, 1, [-1.4 * b]),
               rec(2, 1e-5, 2, 2, [-2 * b, 3 * b]), rec(3, 1e-5, 1, 1, [9 * b], error="x")]
    assert spatial_histogram(records, b) == {"left": 1, "centre": 2, "right": 1}
    assert spatial_histogram([rec(0, 1e-5, 1, 1, [0.0])], b)["centre"] == 1
    text = histogram_table({"pure": spatial_histogram(records, b)})
    assert text.splitlines()[1] == "pure\t1\t2\t1\t0.500000"


# -- field protocols -----------------------------------------------------------


def test_field_scenario_config():
    fs = FieldScenario(protocol="parity", defects={11: 220, 19: 220}, e_field=60.0)
    assert FieldScenario.from_config(fs.to_config()) == fs
    with pytest.raises(ConfigError):
        FieldScenario(protocol="parity", defects={11: 220})
    with pytest.raises(ConfigError):
        FieldScenario(protocol="teleport")
    with pytest.raises(ConfigError):
        FieldScenario.from_config({"protocol": "drag", "colour": "red"})


@pytest.mark.parametrize("sites, parity", [((11, 19), 0), ((11, 18), 1), ((12, 13), 1)])
def test_expected_parity(sites, parity):
    fs = FieldScenario(protocol="parity", defects={sites[0]: 220, sites[1]: 220})
    assert harness.expected_parity(fs) == parity


def test_parity_scenario_carries_field():
    fs = FieldScenario(protocol="parity", defects={11: 220, 18: 220}, e_field=60.0, n_trials=4)
    s = harness.parity_scenario(fs)
    assert s.e_field == 60.0 and s.defects == fs.defects and s.n_trials == 4
    assert s.tau_q == (fs.tau_q,)


def synthetic_run(counts, final_centre, defect_z, b=5e-6):
    reports = []
    for n in counts:
        kinks = [Kink("extended", final_centre + 3 * k) for k in range(n)]
        reports.append(KinkReport("kinked" if n else "zigzag", kinks, None, (1.0, 1.0)))
    return harness.FieldRun(list(range(len(counts))), [0.0] * len(counts), reports,
                            [defect_z] * len(counts), b)


def test_ramp_creation_outcome():
    b = 5e-6
    ok = synthetic_run([0, 2, 2, 1], 0.2, 1.0 * b, b)
    assert harness.ramp_creation_outcome(ok) == (True, True)
    far = synthetic_run([0, 2, 1], 0.0, 3 * b, b)
    assert harness.ramp_creation_outcome(far) == (True, False)
    none = synthetic_run([0, 0, 1], 0.0, 0.0, b)
    assert harness.ramp_creation_outcome(none) == (False, True)


def test_weak_field_does_not_drag():
    fs = FieldScenario(protocol="drag", defects={11: 220})
    res = harness.drag_run(fs, 5.0, seed=1)
    assert not res.dragged
    # the defect is pushed outward, never toward the middle
    assert abs(res.defect_z_end) > abs(res.defect_z_start) - 5e-6


def test_intervals_overlap():
    a = DensityEstimate(1e-5, 0.5, (0.2, 0.8), 10, "created")
    b = DensityEstimate(1e-5, 1.0, (0.8, 1.2), 10, "created")
    c = DensityEstimate(1e-5, 1.5, (1.3, 1.7), 10, "created")
    assert harness.intervals_overlap(a, b) and harness.intervals_overlap(b, a)
    assert not harness.intervals_overlap(a, c)
    assert harness.intervals_overlap(b, b)
