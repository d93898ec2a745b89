import json

import numpy as np
import pytest

from stacked_pinn import cli, experiment, godunov

TINY = {
    "scenario": {"grid": {"nx": 20, "time_T": 0.5}},
    "train": {"base_dims": [2, 8, 8, 1], "block_dims": [3, 8, 8, 1], "n_collocation": 64,
              "max_iters": 30, "patience_iters": 1000, "log_every": 7, "lr": 5e-3},
    "sweep": [0, 1],
    "seeds": [0, 1],
}


def write_config(tmp_path, doc=TINY, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(*argv):
    return cli.run([*argv, "--quiet"])


@pytest.fixture
def simulated(tmp_path):
    cfg = write_config(tmp_path)
    out = str(tmp_path / "out")
    assert run("simulate", "--config", cfg, "--out", out) == 0
    return cfg, out, tmp_path


def test_simulate_writes_files(simulated):
    _, out, tmp_path = simulated
    field = godunov.read_field(f"{out}/field.txt")
    assert field.values.shape == (field.nt + 1, 20)
    assert len(godunov.read_measurements(f"{out}/measurements.txt")) == 20 + 2 * (field.nt + 1)
    resolved = json.loads((tmp_path / "out" / "resolved_config.json").read_text())
    assert resolved["train"]["lam"] == 0.1 and resolved["scenario"]["grid"]["cfl"] == 0.9


def test_simulate_rerun_is_bit_identical(simulated):
    cfg, out, tmp_path = simulated
    out2 = str(tmp_path / "again")
    assert run("simulate", "--config", cfg, "--out", out2) == 0
    for name in ("field.txt", "measurements.txt"):
        assert (tmp_path / "out" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_constant_scenario_gives_constant_field(tmp_path):
    doc = {"scenario": {"breakpoints": [], "values": [0.35], "grid": {"nx": 30}}}
    out = tmp_path / "c"
    assert run("simulate", "--config", write_config(tmp_path, doc), "--out", str(out)) == 0
    assert np.all(godunov.read_field(out / "field.txt").values == 0.35)


def test_train_then_evaluate(simulated, capsys):
    cfg, out, tmp_path = simulated
    assert run("train", "--config", cfg, "--out", out, "--n", "1", "--seed", "3") == 0
    base = tmp_path / "out"
    report = (base / "report_n1_s3.txt").read_text()
    rel = float(next(l for l in report.splitlines() if l.startswith("relative_l2")).split("=")[1])
    assert np.isfinite(rel)

    history = (base / "history_n1_s3.csv").read_text().splitlines()
    assert history[0] == "iter,total,data0,data1,phy0,phy1,alpha1"
    assert [int(l.split(",")[0]) for l in history[1:]] == list(range(0, 30, 7))

    res = experiment.evaluate_checkpoint(experiment.config_from_dict({**TINY, "out_dir": out}), 1, 3)
    assert res.report.relative_l2 == rel
    capsys.readouterr()
    assert cli.run(["evaluate", "--config", cfg, "--out", out, "--n", "1", "--seed", "3"]) == 0
    assert f"relative_l2 = {rel!r}" in capsys.readouterr().out


def test_sweep_tables_and_grids(simulated):
    cfg, out, tmp_path = simulated
    assert run("sweep", "--config", cfg, "--out", out) == 0
    base = tmp_path / "out"
    rows = (base / "table.csv").read_text().splitlines()
    assert rows[0] == "n,seed,relative_l2,stop_iteration" and len(rows) == 1 + 4
    assert len((base / "boxplot.csv").read_text().splitlines()) == 1 + 4
    assert len((base / "stage_errors.csv").read_text().splitlines()) == 1 + 2 * 1 + 2 * 2
    field = godunov.read_field(base / "field.txt")
    for name in ("pred_n0_s0", "error_n1_s1", "block1_n1_s0"):
        grid = np.loadtxt(base / "heatmaps" / f"{name}.csv", delimiter=",")
        assert grid.shape == field.values.shape
    assert not (base / "heatmaps" / "block1_n0_s0.csv").exists()

    # A single train run of the same cell reproduces the sweep's number exactly.
    out2 = str(tmp_path / "single")
    assert run("simulate", "--config", cfg, "--out", out2) == 0
    assert run("train", "--config", cfg, "--out", out2, "--n", "1", "--seed", "1") == 0
    single = (tmp_path / "single" / "report_n1_s1.txt").read_text()
    sweep_rel = rows[-1].split(",")[2]
    assert float(sweep_rel) == float(next(l for l in single.splitlines()
                                          if l.startswith("relative_l2")).split("=")[1])


def test_sweep_single_cell_override(simulated):
    cfg, out, tmp_path = simulated
    assert run("sweep", "--config", cfg, "--out", out, "--n", "0", "--seed", "2") == 0
    rows = (tmp_path / "out" / "table.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("0,2,")


def test_exit_code_config_errors(tmp_path):
    assert run("simulate", "--config", str(tmp_path / "missing.json")) == 1
    bad = write_config(tmp_path, {"train": {"no_such_key": 1}}, "bad.json")
    assert run("simulate", "--config", bad) == 1
    bad = write_config(tmp_path, {"scenario": {"values": [1.5]}, "sweep": [0]}, "bad2.json")
    assert run("simulate", "--config", bad) == 1
    # train before simulate: inputs missing
    assert run("train", "--config", write_config(tmp_path), "--out", str(tmp_path / "empty")) == 1


def test_exit_code_divergence(tmp_path):
    doc = {**TINY, "train": {**TINY["train"], "lr": 1e200}}
    cfg = write_config(tmp_path, doc)
    out = str(tmp_path / "d")
    assert run("simulate", "--config", cfg, "--out", out) == 0
    assert run("train", "--config", cfg, "--out", out) == 2
