import json
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from fermionfilter import cli
from fermionfilter.classical import GridDensity
from fermionfilter.records import MeasurementRecord, read_table


def write_cfg(path, body):
    path.write_text(textwrap.dedent(body))
    return path


DOT_CFG = """
[run]
T = 1
dt = 1e-3
seed = 7
observables = n, c
{extra}

[model]
preset = dot

[model.params]
gamma_L = 1
gamma_R = 2

[state]
kind = basis
index = 0
"""


def dot_cfg(tmp_path, extra="", name="run.ini"):
    return write_cfg(tmp_path / name, DOT_CFG.format(extra=extra))


def test_master_command(tmp_path):
    cfg = dot_cfg(tmp_path, "store_every = 100")
    assert cli.main(["master", "--config", str(cfg), "--out", str(tmp_path / "m")]) == 0
    t = read_table(tmp_path / "m" / "timeseries.csv")
    assert list(t) == ["t", "n", "c"]
    exact = 1 / 3 * (1 - np.exp(-3 * t["t"]))
    assert np.max(np.abs(t["n"] - exact)) < 1e-12
    meta = json.loads((tmp_path / "m" / "meta.json").read_text())
    assert meta["status"] == "ok" and meta["seed"] == 7
    assert meta["invariants"]["min_eigenvalue"] > -1e-12


def test_simulate_then_filter_and_replay(tmp_path):
    cfg = dot_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
    for f in ("record.csv", "timeseries.csv", "trajectory.csv", "meta.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    rec = MeasurementRecord.from_csv(a / "record.csv")
    assert rec.n_steps == 1000
    fcfg = dot_cfg(tmp_path, f"record_path = {a / 'record.csv'}", "filter.ini")
    assert cli.main(["filter", "--config", str(fcfg), "--out", str(tmp_path / "f")]) == 0
    assert (tmp_path / "f" / "timeseries.csv").read_bytes() == (a / "timeseries.csv").read_bytes()
    traj = read_table(a / "trajectory.csv")
    assert list(traj) == ["step", "t", "intensity", "dW", "n", "c"]
    assert np.all(traj["c"] == 0)


def test_seed_override_changes_record(tmp_path):
    cfg = dot_cfg(tmp_path, "T = 5")
    cfg.write_text(cfg.read_text().replace("T = 1\n", ""))
    cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["simulate", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "record.csv").read_bytes() != (tmp_path / "b" / "record.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "meta.json").read_text())["seed"] == 8


def test_output_root_from_environment(tmp_path, monkeypatch):
    cfg = dot_cfg(tmp_path, "output_dir = nested/run")
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "root"))
    assert cli.main(["master", "--config", str(cfg)]) == 0
    assert (tmp_path / "root" / "nested" / "run" / "timeseries.csv").exists()


def test_command_from_config(tmp_path):
    cfg = dot_cfg(tmp_path, "command = master")
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_ensemble_command(tmp_path):
    cfg = dot_cfg(tmp_path, "n_traj = 40\nsample_every = 100\nchunk_size = 15")
    assert cli.main(["ensemble", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 0
    agg = read_table(tmp_path / "e" / "aggregate.csv")
    assert list(agg) == ["t", "n_mean", "n_se", "n_master", "c_mean", "c_se", "c_master"]
    assert len(agg["t"]) == 11
    fin = read_table(tmp_path / "e" / "final.csv")
    assert np.array_equal(fin["trajectory_id"], np.arange(40))
    meta = json.loads((tmp_path / "e" / "meta.json").read_text())
    assert meta["n_traj"] == 40 and "z" in meta["innovations"]


@pytest.mark.parametrize("body,needle", [
    ("T = 1\ndt = 0.5", "unsafe"),          # thinning bound
    ("T = 1\ndt = 1e-3\nobservables = nope", "observable"),
    ("dt = 1e-3", "T"),
    ("T = 1\ndt = 1e-3\nrecord_path = /does/not/exist.csv", "record"),
])
def test_config_errors_exit_2(tmp_path, capsys, body, needle):
    cmd = "filter" if "record_path" in body else "simulate"
    cfg = write_cfg(tmp_path / "bad.ini", f"""
        [run]
        {body.replace(chr(10), chr(10) + '        ')}

        [model]
        preset = dot
        """)
    assert cli.main([cmd, "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["master", "--config", str(tmp_path / "none.ini")]) == 2


def test_classical_model_required_for_kalman(tmp_path):
    cfg = dot_cfg(tmp_path)
    assert cli.main(["kalman", "--config", str(cfg), "--out", str(tmp_path / "k")]) == 2


def test_degenerate_record_exits_3(tmp_path, capsys):
    rec = MeasurementRecord(0.0, 1e-3, [0, 0, 1, 0])
    rec.to_csv(tmp_path / "rec.csv")
    cfg = write_cfg(tmp_path / "deg.ini", f"""
        [run]
        T = 4e-3
        dt = 1e-3
        record_path = {tmp_path / 'rec.csv'}

        [model]
        preset = dot

        [model.params]
        gamma_L = 0
        gamma_R = 1

        [state]
        kind = basis
        index = 0
        """)
    assert cli.main(["filter", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 3
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    assert meta["status"] == "failed" and meta["failing_step"] == 2
    assert "step 2" in capsys.readouterr().err


def test_photodetector_custom_state(tmp_path):
    cfg = write_cfg(tmp_path / "pd.ini", """
        [run]
        T = 0.5
        dt = 1e-3
        seed = 3
        observables = n, sigma_22, sigma_12p
        store_every = 50

        [model]
        preset = photodetector

        [model.params]
        kappa = 1
        gamma = 1
        gamma0 = 1
        gamma1 = 1

        [state]
        kind = diag
        diag = 0, 0, 0, 0.5, 0.5, 0
        """)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
    t = read_table(tmp_path / "p" / "timeseries.csv")
    assert len(t["t"]) == 11 and t["n"][0] == 1.0


def test_custom_model(tmp_path):
    cfg = write_cfg(tmp_path / "c.ini", """
        [run]
        T = 1
        dt = 1e-2
        observables = occ

        [model]
        preset = custom

        [model.space]
        signs = 1, -1

        [model.matrices]
        L0 = 0, 1, 0, 0

        [model.observables]
        occ = 0, 0, 0, 1

        [state]
        kind = basis
        index = 1
        """)
    assert cli.main(["master", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    t = read_table(tmp_path / "c" / "timeseries.csv")
    assert np.max(np.abs(t["occ"] - np.exp(-t["t"]))) < 1e-9


LINEAR_CFG = """
[run]
T = 2
dt = 1e-3
seed = 11

[model]
preset = linear

[model.params]
a = -1
c = 1

[grid]
nx = 401
snapshot_times = 1, 2
"""


def test_kalman_and_ksgrid(tmp_path):
    cfg = write_cfg(tmp_path / "lin.ini", LINEAR_CFG)
    assert cli.main(["kalman", "--config", str(cfg), "--out", str(tmp_path / "k")]) == 0
    k = read_table(tmp_path / "k" / "timeseries.csv")
    assert list(k) == ["t", "mean", "variance", "xi"]
    assert cli.main(["ksgrid", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    g = read_table(tmp_path / "g" / "timeseries.csv")
    assert np.array_equal(g["kalman_mean"], k["mean"])
    assert np.max(np.abs(g["mean"] - g["kalman_mean"])) < 1e-2
    dens = GridDensity.from_csv(tmp_path / "g" / "density_t2.csv")
    assert dens.mass == pytest.approx(1.0, abs=1e-8)
    meta = json.loads((tmp_path / "g" / "meta.json").read_text())
    assert meta["snapshots"] == {"density_t1.csv": 1.0, "density_t2.csv": 2.0}


def test_ksgrid_double_well_from_record(tmp_path):
    cfg = write_cfg(tmp_path / "lin.ini", LINEAR_CFG)
    cli.main(["kalman", "--config", str(cfg), "--out", str(tmp_path / "k")])
    dw = LINEAR_CFG.replace("preset = linear", "preset = double_well").replace(
        "a = -1\nc = 1", "alpha = 1\nbeta = 1\nc = 1").replace(
        "seed = 11", f"record_path = {tmp_path / 'k' / 'record.csv'}")
    cfg = write_cfg(tmp_path / "dw.ini", dw)
    assert cli.main(["ksgrid", "--config", str(cfg), "--out", str(tmp_path / "w")]) == 0
    g = read_table(tmp_path / "w" / "timeseries.csv")
    assert list(g) == ["t", "mean", "variance"]


def test_module_entry_point(tmp_path):
    cfg = dot_cfg(tmp_path, "store_every = 500")
    proc = subprocess.run([sys.executable, "-m", "fermionfilter", "master", "--config", str(cfg),
                           "--out", str(tmp_path / "s")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "timeseries.csv" in proc.stdout
