import json
import os
import subprocess
import sys

import numpy as np
import pytest

from multigrasp.cli import main
from multigrasp.cloud_io import SceneDescription, write_ply
from multigrasp.config import ExperimentConfig
from multigrasp.network import EvaluatorModel, desk_config, save_model
from multigrasp.pipeline import clutter_scene
from multigrasp.sim import capture_scene, default_catalog, instantiate, remove_table

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def tiny_config(tmp_path, **extra):
    doc = {
        "network": {"input_points": 64,
                    "sa_layers": [{"sample_count": 16, "radius": 0.03, "mlp": [8, 8]},
                                  {"sample_count": 4, "radius": 0.06, "mlp": [8, 8]}],
                    "fc_widths": [16, 16, 8, 8]},
        "train": {"learning_rate": 1e-3, "epochs": 1},
        "dataset": {"objects": ["cereal_box", "soup_can", "apple"], "views_per_object": 1,
                    "candidates_per_view": 6, "points": 64, "samples_per_view": 900},
        "eval": {"seeds": [0]},
        "trial": {"k": 20, "samples_per_view": 1600, "max_attempts": 1},
        "benchmark": {"trials": 1, "ablations": ["1type"]},
    }
    doc.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = tiny_config(tmp)
    out = str(tmp / "run")
    assert main(["gen-dataset", "--config", cfg, "--out", out, "--quiet"]) == 0
    scene = clutter_scene(seed=0)
    cap = capture_scene(SceneDescription((), scene.cameras, 0.0), instantiate(scene, default_catalog()),
                        10000, 0)
    cloud_path = tmp / "scene.ply"
    cloud_path.write_bytes(write_ply(remove_table(cap.cloud, 0.0)))
    return tmp, cfg, out, str(cloud_path)


def test_gen_dataset_writes_report(workspace):
    _, _, out, _ = workspace
    rep = json.load(open(os.path.join(out, "dataset_report.json")))
    assert rep["exemplars"] > 0 and set(rep["positive_rates"]) == {
        "wide_power", "wide_precision", "basic_power", "basic_precision", "pincher"}
    assert os.path.exists(os.path.join(out, "dataset", "index.jsonl"))


def test_train_combined_and_separate(workspace):
    tmp, cfg, out, _ = workspace
    ds = os.path.join(out, "dataset")
    assert main(["train", "--config", cfg, "--dataset", ds, "--out", str(tmp / "m"), "--quiet"]) == 0
    rep = json.load(open(tmp / "m" / "train_report.json"))
    assert rep["checkpoints"] == ["model.ckpt"]
    assert main(["train", "--config", cfg, "--dataset", ds, "--mode", "separate",
                 "--out", str(tmp / "s"), "--quiet"]) == 0
    assert len(json.load(open(tmp / "s" / "train_report.json"))["checkpoints"]) == 5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_eval_split_object_report(workspace, capsys):
    tmp, cfg, out, _ = workspace
    code = main(["eval-split", "--config", cfg, "--dataset", os.path.join(out, "dataset"),
                 "--mode", "combined", "--split", "object", "--out", str(tmp / "e")])
    assert code == 0
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    rep = json.load(open(line["report"]))
    assert rep["split"] == "object" and rep["mode"] == "combined" and rep["seeds"] == [0]
    assert rep["avg_accuracy"] == pytest.approx(np.mean(rep["accuracy"]))


def test_detect_and_viz(workspace, capsys):
    tmp, cfg, _, cloud = workspace
    model = tmp / "rand.ckpt"
    save_model(EvaluatorModel.initialize(desk_config(input_points=64), seed=0), str(model))
    assert main(["detect", "--cloud", cloud, "--model", str(model), "--k", "30",
                 "--out", str(tmp / "d")]) == 0
    doc = json.load(open(tmp / "d" / "decisions.json"))
    probs = [d["probability"] for d in doc["decisions"]]
    assert doc["count"] >= len(probs) > 0 and probs == sorted(probs, reverse=True)
    assert main(["detect", "--cloud", cloud, "--model", str(model), "--k", "30", "--types", "pincher",
                 "--out", str(tmp / "d1")]) == 0
    assert {d["type"] for d in json.load(open(tmp / "d1" / "decisions.json"))["decisions"]} == {"pincher"}
    capsys.readouterr()
    assert main(["viz", "--cloud", cloud, "--decisions", str(tmp / "d" / "decisions.json"),
                 "--out", str(tmp / "v")]) == 0
    res = json.loads(capsys.readouterr().out.strip())
    assert os.path.exists(res["ply"]) and res["highlighted"] > 0


def test_clutter_bench_smoke(workspace, capsys):
    tmp, cfg, _, _ = workspace
    model = tmp / "zero.ckpt"
    save_model(EvaluatorModel(desk_config(input_points=64)), str(model))
    assert main(["clutter-bench", "--config", cfg, "--model", str(model), "--out", str(tmp / "b")]) == 0
    summ = json.load(open(tmp / "b" / "clutter_bench.json"))["summary"]
    assert list(summ) == ["1type"] and summ["1type"]["trials"] == 1


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main([]) == 1
    assert main(["fly"]) == 1
    assert main(["detect", "--cloud", "x.ply"]) == 1  # missing --model
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"learning_rate": "fast"}}))
    assert main(["gen-dataset", "--config", str(bad), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "usage" in err and "config error" in err


def test_runtime_errors_exit_2(tmp_path, capsys):
    garbage = tmp_path / "junk.ply"
    garbage.write_bytes(b"ply\nformat nonsense\n")
    assert main(["detect", "--cloud", str(garbage), "--model", "nope.ckpt", "--out", str(tmp_path)]) == 2
    assert main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_canonical_experiment_config_loads():
    assert main(["gen-dataset", "--config", os.path.join(ROOT, "configs", "missing.json")]) == 1
    cfg = ExperimentConfig.load(os.path.join(ROOT, "configs", "experiment.json"))
    assert cfg.eval.seeds == (0, 1, 2)


def test_console_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "multigrasp.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "clutter-bench" in res.stdout
