"""Command-line interface: flags, outputs, determinism, exit codes."""

import json
import os

import numpy as np
import pytest

from neotraj.cli import main


def run(args):
    return main([str(a) for a in args])


def test_scene_preset_and_determinism(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["scene", "--preset", 9, "--seed", 1, "--out", a]) == 0
    assert run(["scene", "--preset", 9, "--seed", 1, "--out", b]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert len(doc["obstacles"]) == 24
    widths = [o["width"] for o in doc["obstacles"]]
    assert min(widths) >= 0.5 and max(widths) <= 0.6


def test_scene_custom_zero_count(tmp_path):
    out = tmp_path / "empty.json"
    assert run(["scene", "--count", 0, "--seed", 3, "--out", out]) == 0
    assert json.loads(out.read_text())["obstacles"] == []


def test_scene_packing_failure(tmp_path):
    out = tmp_path / "never.json"
    assert run(["scene", "--count", 4000, "--width-min", 1.0, "--width-max", 1.0,
                "--seed", 0, "--out", out]) == 2


def test_scene_requires_args(tmp_path):
    assert run(["scene", "--out", tmp_path / "x.json"]) == 1


def test_fly_empty_scene_and_outputs(tmp_path):
    scene = tmp_path / "s.json"
    assert run(["scene", "--count", 0, "--seed", 0, "--out", scene]) == 0
    report = tmp_path / "rep.json"
    log = tmp_path / "log.csv"
    assert run(["fly", "--scene", scene, "--init", "baseline", "--seed", 2,
                "--report", report, "--log", log]) == 0
    doc = json.loads(report.read_text())
    assert doc["success"] is True
    assert doc["format"] == "neotraj-report-1"
    assert log.read_text().splitlines()[0].startswith("t,px,py")


def test_fly_neo_without_model_usage_error(tmp_path):
    assert run(["fly", "--scene", "4", "--init", "neo"]) == 1


def test_fly_deterministic(tmp_path):
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    for r in (r1, r2):
        assert run(["fly", "--scene", "6", "--init", "geo", "--seed", 7, "--report", r]) == 0
    assert r1.read_bytes() == r2.read_bytes()


def test_gradcheck_passes_and_vacuous(tmp_path, capsys):
    assert run(["gradcheck", "--trials", 5, "--seed", 11]) == 0
    assert run(["gradcheck", "--trials", 0]) == 0
    out = capsys.readouterr().out
    assert "vacuous" in out


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"v_max": 1.0, "not_a_key": 2}))
    assert run(["fly", "--scene", "4", "--config", cfg]) == 1


def test_config_roundtrip(tmp_path):
    from neotraj.config import RunConfig

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(RunConfig().to_dict()))
    loaded = RunConfig.load(cfg)
    assert loaded == RunConfig()


@pytest.mark.slow
def test_bench_grid_rows_and_determinism(tmp_path):
    out1, out2 = tmp_path / "b1", tmp_path / "b2"
    base = ["bench", "--scenes", "6", "--runs", 2, "--inits", "baseline,geo",
            "--seed", 5]
    env = os.environ
    env["NEOTRAJ_WORKERS"] = "1"
    assert run(base + ["--out-dir", out1]) == 0
    env["NEOTRAJ_WORKERS"] = "2"
    assert run(base + ["--out-dir", out2, "--svg"]) == 0
    env.pop("NEOTRAJ_WORKERS")
    agg1 = (out1 / "aggregate.csv").read_bytes()
    agg2 = (out2 / "aggregate.csv").read_bytes()
    assert agg1 == agg2  # worker-pool size cannot affect results
    assert (out1 / "episodes.jsonl").read_bytes() == (out2 / "episodes.jsonl").read_bytes()
    lines = agg1.decode().splitlines()
    assert lines[0] == "scene,init,success_rate,avg_cost,avg_plan_time,avg_iterations"
    assert len(lines) == 1 + 1 * 2  # |scenes| x |inits|
    assert (out2 / "bench_success_rate.svg").exists()


@pytest.mark.slow
def test_latency_table_shape(tmp_path):
    out = tmp_path / "latency.csv"
    assert run(["latency", "--scenes", "1", "--runs", 1, "--latency", 0.8,
                "--foresee", "0,1.0", "--seed", 3, "--out", out]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "scene,metric,foresee_0,foresee_1"
    assert len(lines) == 3  # position + velocity rows for one scene
    for line in lines[1:]:
        cells = line.split(",")
        assert cells[1] in ("position_rmse", "velocity_rmse")
        assert float(cells[3]) < float(cells[2])  # foreseeing horizon helps


@pytest.mark.slow
def test_collect_and_train_cycle(tmp_path):
    data = tmp_path / "mini.jsonl"
    assert run(["collect", "--scenes", "4", "--episodes", 2, "--seed", 77, "--out", data]) == 0
    with open(str(data) + ".summary.json") as fh:
        summary = json.load(fh)
    n_lines = len(data.read_text().splitlines())
    assert summary["records"] == n_lines
    assert n_lines > 20  # ~25-35 records per ~30 s episode
    model = tmp_path / "model.json"
    assert run(["train", "--data", data, "--epochs", 30, "--seed", 0, "--out", model]) == 0
    doc = json.loads(model.read_text())
    assert doc["format"] == "neotraj-model-1"
    assert (tmp_path / "model.json.loss.csv").exists()
    # the trained model can fly
    rep = tmp_path / "rep.json"
    assert run(["fly", "--scene", "4", "--init", "neo", "--model", model, "--seed", 1,
                "--report", rep]) == 0
    assert json.loads(rep.read_text())["replan_count"] > 0


def test_collect_deterministic(tmp_path):
    d1, d2 = tmp_path / "d1.jsonl", tmp_path / "d2.jsonl"
    for d in (d1, d2):
        assert run(["collect", "--scenes", "4", "--episodes", 1, "--seed", 9, "--out", d]) == 0
    assert d1.read_bytes() == d2.read_bytes()
