"""Command-line entry point.

Every subcommand reads a JSON or YAML config with SI, unit-suffixed keys,
writes its outputs into ``--out`` and a ``manifest.json`` beside them.
Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, collective, dynamics, harness, kernels, kinkdetect, model, statics
from .errors import ConfigError, EmptyGroup, NumericalError
from .model import IonSystem, load_config_file

log = logging.getLogger("ionkink")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class TrialFailure(NumericalError):
    """One or more ensemble trials failed; outputs were still written."""


# -- helpers -------------------------------------------------------------------


def _load(path):
    if path is None:
        return {}
    try:
        return load_config_file(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None


def _take(cfg, key, default=None, conv=float):
    if key not in cfg:
        return default
    try:
        return conv(cfg.pop(key))
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key!r}") from None


def _no_leftovers(cfg, where):
    if cfg:
        raise ConfigError(f"unknown {where} keys: {sorted(cfg)}")


def _system(cfg):
    if "system" not in cfg:
        raise ConfigError("config needs a 'system' section")
    sub = cfg.pop("system")
    if not isinstance(sub, dict):
        raise ConfigError("'system' must be a mapping")
    return IonSystem.from_config(sub)


def write_manifest(out, command, config, seed=None):
    """Resolved config, seed and code version; no timestamps, so reruns are byte-identical."""
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
    }
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _dump(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _structure(sys, kind):
    if kind == "linear":
        return statics.linear_chain(sys)
    zz = statics.zigzag(sys)
    if kind == "zigzag":
        return zz
    if kind == "kink":
        return statics.seed_kink(sys, zz)
    raise ConfigError(f"structure must be linear, zigzag or kink, not {kind!r}")


def _config_table(sys_, q, path):
    length = sys_.units.length
    lines = ["ion\tmass_amu\tz_m\tx_m"]
    for j, z, x in zip(q.ids, q.z, q.x):
        lines.append(f"{j}\t{sys_.masses[j]:g}\t{z * length:.12e}\t{x * length:.12e}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- subcommands ---------------------------------------------------------------


def cmd_ground(cfg, out, args):
    """Relaxed structure, normal modes and the linear-zigzag threshold."""
    sys_ = _system(cfg)
    kind = _take(cfg, "structure", "linear", str)
    _no_leftovers(cfg, "ground")
    q = _structure(sys_, kind)
    units = sys_.units
    _config_table(sys_, q, out / "ground_state.tsv")
    freqs, _ = model.normal_modes(sys_, q)
    (out / "normal_modes.tsv").write_text(
        "mode\tfrequency_hz\n" + "".join(f"{k}\t{f:.9e}\n" for k, f in enumerate(freqs)))
    lin = statics.linear_chain(sys_)
    rep = kinkdetect.detect(q)
    summary = {
        "structure": rep.structure,
        "n_kinks": rep.n_kinks,
        "energy_J": model.potential_energy(sys_, q) * units.energy,
        "critical_nu_x_hz": model.critical_nu_x(sys_, lin),
        "formula_critical_nu_x_hz": model.steane_critical_nu_x(sys_.n, sys_.nu_z),
        "spacing_m": [v * units.length for v in rep.spacing],
    }
    _dump(out / "ground.json", summary)
    return {"system": sys_.to_config(), "structure": kind}, None


def cmd_pn(cfg, out, args):
    """Adiabatic kink trajectory and Peierls-Nabarro potential."""
    sys_ = _system(cfg)
    kind = _take(cfg, "kink_kind", "extended", str)
    frac = _take(cfg, "dx_fraction", 1 / 20)
    xr = cfg.pop("x_range_um", None)
    _no_leftovers(cfg, "pn")
    if kind not in ("odd", "extended", "intermediate"):
        raise ConfigError("kink_kind must be odd, extended or intermediate")
    fkind = "odd" if kind == "odd" else "extended"
    units = sys_.units
    zz = statics.zigzag(sys_)
    start = statics.seed_kink(sys_, zz)
    b = kinkdetect.central_spacing(zz)[1]
    x_range = None if xr is None else tuple(float(v) * 1e-6 / units.length for v in xr)
    curve = statics.trace_adiabatic(sys_, start, fkind, zz, dX=frac * b, x_range=x_range)
    curve.to_table(out / "pn_curve.tsv")
    summary = {"kink_kind": fkind, "n_samples": len(curve.samples),
               "truncated": list(curve.truncated), "spacing_m": b * units.length,
               "X_min_m": float(curve.X[np.argmin(curve.U)]) * units.length,
               "U_min_K": float(curve.U.min()) * units.temperature}
    try:
        bars = statics.pn_barriers(curve)
        (out / "barriers.tsv").write_text(
            "X_min_m\tX_max_m\theight_J\theight_K\n" + "".join(
                f"{br.x_min * units.length:.9e}\t{br.x_max * units.length:.9e}\t"
                f"{br.height * units.energy:.9e}\t{br.height_kelvin:.9e}\n" for br in bars))
        summary["central_barrier_K"] = statics.central_barrier(curve) * units.temperature
    except NumericalError as exc:
        summary["barriers"] = f"unavailable: {exc}"
    try:
        summary["corrugation_K"] = statics.corrugation_amplitude(curve) * units.temperature
    except NumericalError:
        pass
    _dump(out / "pn.json", summary)
    return {"system": sys_.to_config(), "kink_kind": fkind, "dx_fraction": frac,
            "x_range_um": xr}, None


def cmd_dynamics(cfg, out, args):
    """Kink trajectory from full molecular dynamics (NVE or Langevin)."""
    sys_ = _system(cfg)
    start = _take(cfg, "structure", "kink", str)
    x0_um = _take(cfg, "kink_x0_um", None)
    duration = _take(cfg, "duration_us", 1000.0) * 1e-6
    dt = _take(cfg, "dt_s", dynamics.DEFAULT_DT)
    temp = _take(cfg, "temperature_k", 0.0)
    eta = _take(cfg, "eta_kg_per_s", 0.0)
    stride = _take(cfg, "stride", 10, int)
    seed = _take(cfg, "seed", 0, int)
    if args.seed is not None:
        seed = args.seed
    frames = _take(cfg, "write_frames", False, bool)
    _no_leftovers(cfg, "dynamics")
    units = sys_.units
    zz = statics.zigzag(sys_)
    q = _structure(sys_, start)
    if x0_um is not None:
        if start != "kink":
            raise ConfigError("kink_x0_um needs structure = kink")
        func = kinkdetect.ExtendedCentre(zz.z)
        q, _ = statics.constrained_minimize(sys_, q, func, x0_um * 1e-6 / units.length)
    state = dynamics.DynamicsState.at_rest(q, seed)
    params = dynamics.LangevinParams(temp, eta, dt)
    nsteps = int(round(duration / dt))
    thermo = params if (temp > 0 or eta > 0) else None
    _, traj = dynamics.integrate(sys_, state, nsteps, dynamics.dt_dimensionless(sys_, dt),
                                 params=thermo, stride=stride)
    n, X = dynamics.kink_track(traj, zz)
    t_si = traj.times * units.time
    lines = ["t_s\tn_kinks\tX_m"]
    lines += [f"{t:.9e}\t{k}\t{x * units.length:.9e}" for t, k, x in zip(t_si, n, X)]
    (out / "kink_trajectory.tsv").write_text("\n".join(lines) + "\n")
    if frames:
        traj.to_table(out / "trajectory.tsv")
    summary = {"frames": int(t_si.size), "single_kink_fraction": float(np.mean(n == 1))}
    if np.all(np.isfinite(X)):
        summary["dominant_frequency_hz"] = dynamics.dominant_frequency(t_si, X)
        summary["rms_X_m"] = float(np.std(X)) * units.length
    _dump(out / "dynamics.json", summary)
    return {"system": sys_.to_config(), "structure": start, "kink_x0_um": x0_um,
            "duration_us": duration * 1e6, "dt_s": dt, "temperature_k": temp,
            "eta_kg_per_s": eta, "stride": stride, "seed": seed, "write_frames": frames}, seed


def cmd_collective(cfg, out, args):
    """Bare-kink reduced equation of motion on the traced PN curve."""
    sys_ = _system(cfg)
    x0_um = _take(cfg, "kink_x0_um", 25.0)
    v0 = _take(cfg, "kink_v0_m_per_s", 0.0)
    duration = _take(cfg, "duration_us", 10000.0) * 1e-6
    dt = _take(cfg, "dt_s", 16e-9)
    stride = _take(cfg, "stride", 10, int)
    _no_leftovers(cfg, "collective")
    units = sys_.units
    zz = statics.zigzag(sys_)
    curve = statics.trace_adiabatic(sys_, statics.seed_kink(sys_, zz), "extended", zz)
    traj = collective.KinkTrajectory(curve)
    x0 = x0_um * 1e-6 / units.length
    red = collective.integrate_bare_kink(curve, x0, v0 / units.velocity, duration / units.time,
                                         dt / units.time, traj=traj, stride=stride)
    red.to_table(out / "reduced_trajectory.tsv")
    curve.to_table(out / "pn_curve.tsv")
    e = red.energy
    summary = {
        "effective_mass_at_x0": float(traj.mass(x0)),
        "harmonic_frequency_hz": collective.harmonic_frequency(curve, 0.0, traj),
        "dominant_frequency_hz": dynamics.dominant_frequency(red.t * units.time, red.X),
        "relative_energy_drift": float(np.max(np.abs(e - e[0])) / abs(e[0])) if e[0] else 0.0,
    }
    _dump(out / "collective.json", summary)
    return {"system": sys_.to_config(), "kink_x0_um": x0_um, "kink_v0_m_per_s": v0,
            "duration_us": duration * 1e6, "dt_s": dt, "stride": stride}, None


def _sweep_scenarios(cfg):
    sets = cfg.pop("defect_sets", None)
    base = harness.Scenario.from_config(cfg)
    if sets is None:
        return [base]
    if not isinstance(sets, list):
        raise ConfigError("defect_sets must be a list of mappings")
    out = []
    for d in sets:
        try:
            out.append(base.replace(defects={int(s): float(m) for s, m in (d or {}).items()}))
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid defect set {d!r}") from None
    return out


def _reference_spacing(scn):
    pure = IonSystem.uniform(scn.n_ions, scn.nu_z, scn.nu_x_end)
    return kinkdetect.central_spacing(statics.zigzag(pure))[1] * pure.units.length


def _write_reports(records_by_label, spacing, out):
    dens = {}
    hists = {}
    for label, recs in records_by_label.items():
        hists[label] = harness.spatial_histogram(recs, spacing)
        try:
            dens[f"{label}/created"] = harness.density_curve(recs, "created")
            dens[f"{label}/survived"] = harness.density_curve(recs, "survived")
        except EmptyGroup as exc:
            log.error("no density for %s: %s", label, exc)
    harness.density_table(dens, out / "density_vs_tauq.tsv")
    harness.histogram_table(hists, out / "spatial_histogram.tsv")


def cmd_quench_sweep(cfg, out, args):
    """Quench ensembles over tau_Q, optionally for several defect placements."""
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    scenarios = _sweep_scenarios(cfg)
    by_label = {}
    with open(out / "trials.jsonl", "w") as fh:
        for scn in scenarios:
            recs = harness.run_scenario(scn, workers=args.workers)
            by_label[harness.defect_label(dict(scn.defects))] = recs
            for r in recs:
                fh.write(r.to_json() + "\n")
    _write_reports(by_label, _reference_spacing(scenarios[0]), out)
    resolved = scenarios[0].to_config()
    resolved.pop("defects")
    resolved["defect_sets"] = [{str(s): m for s, m in scn.defects} for scn in scenarios]
    failed = [(harness.defect_label(r.defects), r.tau_q, r.trial, r.error)
              for recs in by_label.values() for r in recs if r.error]
    if failed:
        for label, tau, trial, err in failed:
            log.error("trial failed: defects=%s tau_q=%g trial=%d: %s", label, tau, trial, err)
        write_manifest(out, "quench-sweep", resolved, scenarios[0].master_seed)
        raise TrialFailure(f"{len(failed)} trial(s) failed")
    return resolved, scenarios[0].master_seed


def cmd_efield(cfg, out, args):
    """One of the dc-field protocols: drag, parity or ramp_creation."""
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    fs = harness.FieldScenario.from_config(cfg)
    res = harness.efield_protocols(fs, workers=args.workers)
    summary = {"protocol": fs.protocol}
    if fs.protocol == "ramp_creation":
        for k, run in enumerate(res["runs"]):
            run.to_table(out / f"field_run_{k}.tsv")
        summary.update({k: res[k] for k in ("transient_pair", "final_at_defect",
                                            "final_kink_X_m", "final_defect_z_m")})
    elif fs.protocol == "drag":
        summary["threshold_v_per_m"] = res["threshold_v_per_m"]
        lines = ["e_field_v_per_m\tseed\tdefect_z_start_m\tdefect_z_end_m\tdragged"]
        lines += [f"{r.e_field:g}\t{r.seed}\t{r.defect_z_start:.6e}\t{r.defect_z_end:.6e}\t"
                  f"{int(r.dragged)}" for r in res["results"]]
        (out / "drag_scan.tsv").write_text("\n".join(lines) + "\n")
    else:
        harness.write_records(res["records"], out / "trials.jsonl")
        summary.update(expected_parity=res["expected_parity"],
                       parity_fraction=res["parity_fraction"])
    _dump(out / "efield.json", summary)
    return fs.to_config(), fs.master_seed


def cmd_report(cfg, out, args):
    """Rebuild density and histogram tables from an existing trials.jsonl."""
    src = Path(args.input) if args.input else out
    trials = src / "trials.jsonl"
    if not trials.exists():
        raise ConfigError(f"no trials.jsonl in {src}")
    man = src / "manifest.json"
    base = json.loads(man.read_text())["config"] if man.exists() else {}
    base.pop("defect_sets", None)
    base.pop("protocol", None)
    spacing = _take(cfg, "spacing_um", None)
    _no_leftovers(cfg, "report")
    if spacing is None:
        keep = {k: v for k, v in base.items() if k in harness.Scenario._KEYS or k == "tau_q_us"}
        spacing = _reference_spacing(harness.Scenario.from_config(keep))
    else:
        spacing *= 1e-6
    by_label = {}
    for r in harness.read_records(trials):
        by_label.setdefault(harness.defect_label(r.defects), []).append(r)
    _write_reports(by_label, spacing, out)
    return {"input": str(src), "spacing_m": spacing}, None


COMMANDS = {
    "ground": cmd_ground,
    "pn": cmd_pn,
    "quench-sweep": cmd_quench_sweep,
    "dynamics": cmd_dynamics,
    "collective": cmd_collective,
    "efield": cmd_efield,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="ionkink", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        s.add_argument("-c", "--config", help="JSON or YAML config file")
        s.add_argument("-o", "--out", default=f"runs/{name}", help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the master seed")
        s.add_argument("-j", "--workers", type=int, default=1, help="worker processes")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "report":
            s.add_argument("-i", "--input", help="directory holding trials.jsonl")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = _load(args.config)
        if args.command != "report" and args.config is None:
            raise ConfigError(f"{args.command} needs --config")
        out.mkdir(parents=True, exist_ok=True)
        resolved, seed = COMMANDS[args.command](dict(cfg), out, args)
        write_manifest(out, args.command, resolved, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
