import json

import pytest

from tornadoagg import model as mdl
from tornadoagg.cli import main

SMALL = ["--set", "data.num_nodes=6", "--set", "data.train_per_node=20", "--set", "data.test_per_node=5",
         "--set", "data.feature_dim=4", "--set", "data.num_classes=3", "--set", "engine.steps=20",
         "--set", "engine.eval_every=5", "--set", "engine.tau=5"]


def _run(tmp_path, name, *args):
    out = tmp_path / name
    return main([*args, "--out", str(out), *SMALL]), out


def test_run_writes_all_artifacts(tmp_path, capsys):
    code, out = _run(tmp_path, "a", "run", "--arch", "STAR")
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == ["config.txt", "curves.csv", "final.ckpt", "nodes.ckpt",
                                                      "summary.json"]
    assert capsys.readouterr().out.startswith("run STAR: 20 steps")
    assert "data.num_nodes = 6" in (out / "config.txt").read_text()
    k, d, steps, models = mdl.read_checkpoint((out / "nodes.ckpt").read_bytes())
    assert (steps, k, d, len(models)) == (20, 3, 4, 6)


def test_reruns_are_byte_identical(tmp_path):
    _, a = _run(tmp_path, "a", "run", "--arch", "STAR-rings", "--set", "grouping.scheme=cluster",
                "--set", "grouping.num_groups=2", "--set", "engine.tau1=2", "--set", "engine.tau2=2")
    _, b = _run(tmp_path, "b", "run", "--arch", "STAR-rings", "--set", "grouping.scheme=cluster",
                "--set", "grouping.num_groups=2", "--set", "engine.tau1=2", "--set", "engine.tau2=2")
    for name in ("curves.csv", "summary.json", "final.ckpt", "nodes.ckpt", "config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_single_node_star_checkpoint_equals_centralized(tmp_path):
    _, a = _run(tmp_path, "a", "run", "--arch", "STAR", "--nodes", "1")
    _, b = _run(tmp_path, "b", "run", "--arch", "centralized", "--nodes", "1")
    assert (a / "final.ckpt").read_bytes() == (b / "final.ckpt").read_bytes()


def test_gen_data_then_group_from_disk(tmp_path):
    code, data = _run(tmp_path, "data", "gen-data")
    assert code == 0 and (data / "train.npz").exists()
    code, out = _run(tmp_path, "g", "group", "--arch", "stars", "--data", str(data),
                     "--set", "grouping.scheme=iid", "--set", "grouping.num_groups=2")
    assert code == 0
    doc = json.loads((out / "grouping.json").read_text())
    assert doc["num_groups"] == 2 and len(doc["membership"]) == 6 and "cost_report" in doc


def test_diagnose_and_compare(tmp_path):
    code, out = _run(tmp_path, "d", "diagnose", "--arch", "STAR")
    assert code == 0
    assert json.loads((out / "diagnostics.json").read_text())["zero_at_sync"] is True
    code, out = _run(tmp_path, "c", "compare", "--seeds", "2", "--set", "experiment.presets=FedAvg,HierFAVG",
                     "--set", "experiment.sweep_presets=FedAvg", "--set", "engine.tau1=2", "--set", "engine.tau2=2")
    assert code == 0 and (out / "seed_1" / "comparison.csv").exists() and (out / "seeds_summary.json").exists()


def test_sweep(tmp_path):
    code, out = _run(tmp_path, "s", "sweep", "--set", "experiment.sweep_nodes=6,8",
                     "--set", "experiment.presets=FedAvg", "--set", "experiment.sweep_presets=FedAvg")
    assert code == 0 and (out / "sweep_sweep.csv").exists()


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.mark.parametrize("argv", [[], ["fly"], ["run", "--nodes", "many"], ["compare", "--seeds", "0"]])
def test_usage_errors_exit_1(tmp_path, capsys, argv):
    assert main(argv + (["--out", str(tmp_path)] if argv[:1] == ["compare"] else [])) == 1
    assert _error(capsys)["error"] == "usage"


def test_validation_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path), "--set", "data.skew=3"]) == 2
    assert _error(capsys) == {"error": "config", "exit_code": 2, "key": "data.skew",
                              "message": "data.skew: must lie in [0, 1]"}
    assert main(["diagnose", "--arch", "RING", "--out", str(tmp_path)]) == 2


def test_runtime_errors_exit_3(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path / "o"), "--data", str(tmp_path / "missing")]) == 3
    assert _error(capsys)["error"] == "runtime"


def test_module_entry_point():
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "tornadoagg", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gen-data" in proc.stdout
