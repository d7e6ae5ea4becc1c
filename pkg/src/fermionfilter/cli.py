"""Batch runner: ``fermionfilter <command> --config run.ini [--seed N] [--out DIR]``.

The configuration is an INI document (``key = value`` under ``[section]``
headers, dotted section names for sub-tables, no expressions)::

    [run]
    command = simulate          ; optional when given on the command line
    T = 20
    dt = 1e-4
    seed = 7
    observables = n, c
    output_dir = dot-run        ; relative to $FERMIONFILTER_OUT (default: cwd)

    [model]
    preset = dot                ; dot | photodetector | custom | linear | double_well

    [model.params]
    gamma_L = 1
    gamma_R = 2

    [state]
    kind = basis                ; basis | diag | matrix | mixed | steady
    index = 1

Every run writes ``meta.json`` (configuration, seed, invariant summary,
status).  Exit status: 0 on success, 2 for configuration errors, 3 when a
run aborts on an invariant violation or a degenerate detection (the failing
step is reported on stderr and in ``meta.json``).
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import algebra as alg
from . import classical as cl
from . import dynamics as dyn
from . import models as mdl
from . import stochastics as st
from .errors import (
    BoundaryMassLeak,
    ConfigError,
    DegenerateRatio,
    FermionFilterError,
    InvariantViolation,
)
from .records import MeasurementRecord, fmt, write_table

ENV_OUT = "FERMIONFILTER_OUT"
COMMANDS = ("master", "simulate", "filter", "ensemble", "kalman", "ksgrid")
QUANTUM_PRESETS = ("dot", "photodetector", "custom")
CLASSICAL_PRESETS = ("linear", "double_well")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
U64 = 1 << 64


@dataclass
class RunConfig:
    command: str
    model: str
    params: dict
    state: dict
    T: float
    dt: float
    seed: int
    observables: list
    output_dir: str
    record_path: str | None
    options: dict
    sections: dict = field(default_factory=dict)

    def opt(self, key, default, cast=str):
        if key not in self.options:
            return default
        try:
            return cast(self.options[key])
        except ValueError as exc:
            raise ConfigError(f"[run] {key}: {exc}") from None


def _floats(text):
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _complexes(text):
    return [complex(x.strip().replace(" ", "")) for x in text.split(",") if x.strip()]


def _names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config(path, command=None, seed=None) -> RunConfig:
    """Parse and validate a run configuration; raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    sections = {s: dict(cp[s]) for s in cp.sections()}
    run = dict(sections.get("run", {}))
    cfg_command = run.pop("command", None)
    if command and cfg_command and command != cfg_command:
        raise ConfigError(f"command {command!r} conflicts with config command {cfg_command!r}")
    command = command or cfg_command
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {command!r}")
    model_sec = sections.get("model", {})
    preset = model_sec.get("preset")
    if preset is None:
        raise ConfigError("[model] preset is required")
    classical = command in ("kalman", "ksgrid")
    if classical and preset not in CLASSICAL_PRESETS:
        raise ConfigError(f"{command} needs a classical preset {CLASSICAL_PRESETS}")
    if not classical and preset not in QUANTUM_PRESETS:
        raise ConfigError(f"{command} needs a quantum preset {QUANTUM_PRESETS}")
    try:
        params = {k: (_bool(v) if k == "process_noise" else float(v))
                  for k, v in sections.get("model.params", {}).items()}
        T = float(run.pop("T"))
        dt = float(run.pop("dt"))
        cfg_seed = int(run.pop("seed", 0))
    except KeyError as exc:
        raise ConfigError(f"[run] {exc.args[0]} is required") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if seed is not None:
        cfg_seed = seed
    if not 0 <= cfg_seed < U64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if not T >= dt:
        raise ConfigError("T must be at least dt")
    observables = _names(run.pop("observables", ""))
    cfg = RunConfig(
        command=command, model=preset, params=params,
        state=dict(sections.get("state", {})), T=T, dt=dt, seed=cfg_seed,
        observables=observables, output_dir=run.pop("output_dir", command),
        record_path=run.pop("record_path", None), options=run, sections=sections)
    cfg.sections.setdefault("run", {})["command"] = command
    cfg.sections["run"]["seed"] = str(cfg_seed)
    if command == "filter" and not cfg.record_path:
        raise ConfigError("filter needs [run] record_path")
    if not classical:
        model = build_model(cfg)
        if not cfg.observables:
            cfg.observables = ["n"] if "n" in model.catalog else sorted(model.catalog)
        unknown = [o for o in cfg.observables if o not in model.catalog]
        if unknown:
            raise ConfigError(f"unknown observables {unknown}; known: {sorted(model.catalog)}")
    return cfg


def _square(values, what):
    d = int(round(np.sqrt(len(values))))
    if d * d != len(values):
        raise ConfigError(f"{what}: {len(values)} entries do not form a square matrix")
    return np.array(values, dtype=complex).reshape(d, d)


def build_model(cfg: RunConfig) -> mdl.SystemModel:
    try:
        if cfg.model == "custom":
            return _custom_model(cfg)
        return mdl.preset(cfg.model, **cfg.params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model {cfg.model!r}: {exc}") from None


def _custom_model(cfg):
    space_sec = cfg.sections.get("model.space", {})
    if "signs" in space_sec:
        space = alg.GradedSpace.fermionic([int(s) for s in _floats(space_sec["signs"])], "custom")
    elif "dim" in space_sec:
        space = alg.GradedSpace.trivial(int(space_sec["dim"]), "custom")
    else:
        raise ConfigError("[model.space] needs signs or dim")
    mats = {k: _square(_complexes(v), k) for k, v in cfg.sections.get("model.matrices", {}).items()}
    bad = set(mats) - {"H", "S", "L", "S0", "L0", "L1"}
    if bad:
        raise ConfigError(f"unknown model matrices {sorted(bad)}")
    catalog = {k: alg.GradedOperator(_square(_complexes(v), k), (space,))
               for k, v in cfg.sections.get("model.observables", {}).items()}
    model = mdl.SystemModel.from_matrices((space,), name="custom", catalog=catalog, **mats)
    if not model.report.passed:
        raise ConfigError(f"custom model invalid:\n{model.report}")
    return model


def initial_state(cfg: RunConfig, model) -> np.ndarray:
    s = cfg.state
    kind = s.get("kind", "basis")
    d = model.dim
    try:
        if kind == "basis":
            rho = np.zeros((d, d), dtype=complex)
            rho[int(s.get("index", 0)), int(s.get("index", 0))] = 1.0
        elif kind == "diag":
            rho = np.diag(np.array(_floats(s["diag"]), dtype=complex))
        elif kind == "matrix":
            rho = _square(_complexes(s["matrix"]), "[state] matrix")
        elif kind == "mixed":
            rho = np.eye(d, dtype=complex) / d
        elif kind == "steady":
            rho = dyn.steady_state(model).rho
        else:
            raise ConfigError(f"unknown [state] kind {kind!r}")
        return dyn.ConditionalState(rho, model.space).rho
    except (KeyError, IndexError, ValueError) as exc:
        raise ConfigError(f"[state]: {exc}") from None


# ---------------------------------------------------------------------------
# output helpers

def _obs_columns(names, values):
    """Split complex series into ``name.re``/``name.im`` unless real."""
    header, cols = [], []
    for name, v in zip(names, values):
        v = np.asarray(v)
        scale = max(1.0, float(np.max(np.abs(v)))) if v.size else 1.0
        if np.iscomplexobj(v) and np.max(np.abs(v.imag), initial=0.0) > 1e-12 * scale:
            header += [f"{name}.re", f"{name}.im"]
            cols += [v.real, v.imag]
        else:
            header.append(name)
            cols.append(np.real(v))
    return header, cols


def _thin(n_steps, every):
    idx = np.arange(0, n_steps + 1, every)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def write_meta(out: Path, cfg: RunConfig, status, invariants=None, error=None, step=None,
               outputs=(), extra=None):
    meta = {
        "version": __version__,
        "command": cfg.command,
        "seed": cfg.seed,
        "config": cfg.sections,
        "status": status,
        "error": error,
        "failing_step": step,
        "invariants": invariants or {},
        "outputs": sorted(outputs),
    }
    if extra:
        meta.update(extra)
    (out / "meta.json").write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")


def _state_summary(rhos, space):
    v = dyn.state_violations(rhos, space)
    return {"max_hermiticity": float(v["hermiticity"].max()),
            "max_trace_error": float(v["trace"].max()),
            "min_eigenvalue": float(v["min_eig"].min()),
            "max_odd_part": float(v["evenness"].max())}


# ---------------------------------------------------------------------------
# commands

def cmd_master(cfg, out):
    model = build_model(cfg)
    rho0 = initial_state(cfg, model)
    every = cfg.opt("store_every", 1, int)
    run = dyn.evolve_master(model, rho0, cfg.T, cfg.dt, store_every=every)
    vals = [run.expect(model.observable(o)) for o in cfg.observables]
    header, cols = _obs_columns(cfg.observables, vals)
    write_table(out / "timeseries.csv", ["t"] + header, [run.times] + cols)
    return ["timeseries.csv"], _state_summary(run.rhos, model.space), {}


def _write_filter_outputs(cfg, out, run, model):
    every = cfg.opt("store_every", 1, int)
    idx = _thin(run.record.n_steps, every)
    vals = [run.expectations[o][idx] for o in cfg.observables]
    header, cols = _obs_columns(cfg.observables, vals)
    write_table(out / "timeseries.csv", ["t"] + header, [run.times[idx]] + cols)
    run.record.to_csv(out / "record.csv")
    run.to_csv(out / "trajectory.csv", names=cfg.observables)
    inv = dict(run.diagnostics)
    odd = [o for o in cfg.observables if model.observable(o).is_odd]
    inv["max_odd_expectation"] = max(
        (float(np.max(np.abs(run.expectations[o]))) for o in odd), default=0.0)
    return ["record.csv", "timeseries.csv", "trajectory.csv"], inv


def cmd_simulate(cfg, out):
    model = build_model(cfg)
    rho0 = initial_state(cfg, model)
    rec, run = st.simulate_record(
        model, rho0, cfg.T, cfg.dt, cfg.seed, cfg.opt("trajectory_id", 0, int),
        observables=cfg.observables, store_every=0, scheme=cfg.opt("scheme", "exponential"))
    files, inv = _write_filter_outputs(cfg, out, run, model)
    return files, inv, {"n_jumps": int(rec.increments.sum())}


def _load_record(cfg, counting):
    try:
        rec = MeasurementRecord.from_csv(cfg.record_path, seed=None)
    except OSError as exc:
        raise ConfigError(f"cannot read record: {exc}") from None
    rec.check_grid(dt=cfg.dt)
    if counting and not rec.counting:
        raise ConfigError("the fermion filter needs a counting (0/1) record")
    return rec


def cmd_filter(cfg, out):
    model = build_model(cfg)
    rho0 = initial_state(cfg, model)
    rec = _load_record(cfg, counting=True)
    run = st.run_filter(model, rho0, rec, observables=cfg.observables, store_every=0,
                        scheme=cfg.opt("scheme", "exponential"))
    files, inv = _write_filter_outputs(cfg, out, run, model)
    return files, inv, {"n_jumps": int(rec.increments.sum())}


def cmd_ensemble(cfg, out):
    model = build_model(cfg)
    rho0 = initial_state(cfg, model)
    every = cfg.opt("sample_every", 100, int)
    res = st.run_ensemble(
        model, rho0, cfg.T, cfg.dt, cfg.opt("n_traj", 2000, int), cfg.seed,
        observables=cfg.observables, sample_every=every,
        chunk_size=cfg.opt("chunk_size", 250, int), workers=cfg.opt("workers", 1, int),
        scheme=cfg.opt("scheme", "exponential"))
    n = dyn.n_steps_for(cfg.T, cfg.dt)
    master = dyn.evolve_master(model, rho0, cfg.T, cfg.dt, store_every=every)
    if len(master.times) != len(res.times):
        raise ConfigError("ensemble and master sampling grids differ")
    header, cols = ["t"], [res.times]
    for o in cfg.observables:
        h, c = _obs_columns([f"{o}_mean"], [res.mean(o)])
        header += h + [f"{o}_se"]
        cols += c + [res.stderr(o)]
        h, c = _obs_columns([f"{o}_master"], [master.expect(model.observable(o))])
        header += h
        cols += c
    write_table(out / "aggregate.csv", header, cols)
    write_table(out / "final.csv", ["trajectory_id", "W_T", "n_jumps"],
                [res.trajectory_ids, res.W_T, res.n_jumps.astype(np.int64)])
    N = len(res.W_T)
    w_mean, w_std = float(res.W_T.mean()), float(res.W_T.std(ddof=1))
    extra = {"n_traj": N, "n_steps": n,
             "innovations": {"mean_W_T": w_mean, "std_W_T": w_std,
                             "z": w_mean / (w_std / np.sqrt(N)) if w_std > 0 else 0.0}}
    return ["aggregate.csv", "final.csv"], res.diagnostics, extra


def _classical_model(cfg):
    try:
        if cfg.model == "linear":
            return cl.LinearGaussianModel(**cfg.params)
        return cl.DoubleWellModel(**cfg.params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model {cfg.model!r}: {exc}") from None


def _classical_record(cfg, model):
    if cfg.record_path:
        rec = _load_record(cfg, counting=False)
        return rec, None
    paths = cl.simulate_signal_batch(model, cfg.T, cfg.dt, cfg.seed,
                                     [cfg.opt("trajectory_id", 0, int)])
    return paths.record(0, seed=cfg.seed), paths.xi[0]


def cmd_kalman(cfg, out):
    model = _classical_model(cfg)
    if cfg.model != "linear":
        raise ConfigError("kalman needs the linear preset")
    rec, xi = _classical_record(cfg, model)
    kr = cl.kalman_run(model, rec)
    header, cols = ["t", "mean", "variance"], [kr.times, kr.values, kr.variance]
    if xi is not None:
        header.append("xi")
        cols.append(xi)
    write_table(out / "timeseries.csv", header, cols)
    rec.to_csv(out / "record.csv")
    try:
        limit = float(model.riccati_limit())
    except ValueError:
        limit = None
    inv = {"final_variance": float(kr.variance[-1]), "riccati_limit": limit}
    return ["record.csv", "timeseries.csv"], inv, {}


def cmd_ksgrid(cfg, out):
    model = _classical_model(cfg)
    rec, xi = _classical_record(cfg, model)
    grid_sec = cfg.sections.get("grid", {})
    try:
        nx = int(grid_sec.get("nx", 801))
        n_std = float(grid_sec.get("n_std", 10.0))
        scheme = grid_sec.get("scheme", "explicit")
        update = grid_sec.get("update", "likelihood")
        substeps = int(grid_sec["substeps"]) if "substeps" in grid_sec else None
        snaps = _floats(grid_sec.get("snapshot_times", ""))
    except ValueError as exc:
        raise ConfigError(f"[grid]: {exc}") from None
    p0 = cl.GridDensity.gaussian(model.xi0_mean, max(model.xi0_var, 1e-12), n_std=n_std, nx=nx)
    ks = cl.ks_grid_run(model.g, model.h, rec, p0, scheme=scheme, substeps=substeps,
                        snapshot_times=snaps, update=update)
    header, cols = ["t", "mean", "variance"], [ks.times, ks.mean, ks.variance]
    if cfg.model == "linear":
        kr = cl.kalman_run(model, rec)
        header += ["kalman_mean", "kalman_variance"]
        cols += [kr.values, kr.variance]
    if xi is not None:
        header.append("xi")
        cols.append(xi)
    write_table(out / "timeseries.csv", header, cols)
    rec.to_csv(out / "record.csv")
    files = ["record.csv", "timeseries.csv"]
    snapshot_files = {}
    for t, dens in sorted(ks.snapshots.items()):
        name = f"density_t{t:g}.csv"
        dens.to_csv(out / name)
        files.append(name)
        snapshot_files[name] = t
    inv = {"substeps": ks.substeps, "final_mass": ks.final.mass,
           "min_density": float(ks.final.values.min())}
    return files, inv, {"snapshots": snapshot_files}


HANDLERS = {"master": cmd_master, "simulate": cmd_simulate, "filter": cmd_filter,
            "ensemble": cmd_ensemble, "kalman": cmd_kalman, "ksgrid": cmd_ksgrid}


def output_dir(cfg: RunConfig, out_flag=None) -> Path:
    if out_flag:
        return Path(out_flag)
    base = Path(cfg.output_dir)
    if base.is_absolute():
        return base
    return Path(os.environ.get(ENV_OUT, ".")) / base


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < U64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser():
    p = argparse.ArgumentParser(
        prog="fermionfilter",
        description="Master-equation, quantum-trajectory and filtering runs from a config file.")
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="pipeline to run (defaults to [run] command)")
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--seed", type=_u64, help="override [run] seed")
    p.add_argument("--out", help=f"output directory (default: ${ENV_OUT}/<output_dir>)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, command=args.command, seed=args.seed)
        out = output_dir(cfg, args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (FermionFilterError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files, inv, extra = HANDLERS[cfg.command](cfg, out)
    except (InvariantViolation, DegenerateRatio, BoundaryMassLeak) as exc:
        step = getattr(exc, "step", None)
        write_meta(out, cfg, "failed", error=f"{type(exc).__name__}: {exc}", step=step)
        print(f"run failed at step {step}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FermionFilterError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_meta(out, cfg, "ok", invariants=inv, outputs=files, extra=extra)
    print(f"{cfg.command}: wrote {', '.join(sorted(files + ['meta.json']))} to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
