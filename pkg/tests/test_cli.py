import json

import pytest

from netfield.cli import main


def write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def sample_cfg(tmp_path, **extra):
    cfg = {"domain": {"kind": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]},
           "n": 50, "seed": 3}
    cfg.update(extra)
    return write_cfg(tmp_path, "sample.json", cfg)


def test_missing_config_is_io_error(tmp_path):
    out = tmp_path / "out"
    code = main(["sample", "--config", str(tmp_path / "nope.json"),
                 "--out", str(out), "--quiet"])
    assert code == 4
    assert not out.exists()


def test_invalid_json_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["sample", "--config", str(path), "--quiet"]) == 2


def test_missing_required_key_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path, "c.json",
                    {"domain": {"kind": "box", "lo": [0.0], "hi": [1.0]}})
    assert main(["sample", "--config", cfg, "--quiet"]) == 2


def test_experiment_tag_mismatch(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", {
        "experiment": "sample",
        "domain": {"kind": "box", "lo": [0.0], "hi": [1.0]}, "n": 10})
    assert main(["build-graph", "--config", cfg, "--quiet"]) == 2


def test_bad_threads_rejected(tmp_path):
    cfg = sample_cfg(tmp_path)
    assert main(["sample", "--config", cfg, "--threads", "0", "--quiet"]) == 2


def test_sample_writes_outputs_and_manifest(tmp_path):
    cfg = sample_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["sample", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    points = (out / "points.csv").read_text().splitlines()
    assert points[0] == "x0, x1"
    assert len(points) == 51
    assert (out / "points.png").exists()
    assert (out / "run.log").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "sample"
    assert manifest["seeds"] == [3]
    assert manifest["config"]["n"] == 50
    assert manifest["version"]
    for p in manifest["outputs"]:
        assert (tmp_path / p).exists() or (out / p).exists() or \
            __import__("pathlib").Path(p).exists()


def test_seed_flag_overrides_config(tmp_path):
    cfg = sample_cfg(tmp_path)
    out = tmp_path / "o2"
    assert main(["sample", "--config", cfg, "--out", str(out),
                 "--seed", "11", "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 11
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [11]


def graph_cfg(tmp_path):
    return write_cfg(tmp_path, "graph.json", {
        "domain": {"kind": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]},
        "n": 60, "seed": 5, "eps": 0.3,
        "kernel": {"profile": "indicator"}})


def test_rerun_is_byte_identical(tmp_path):
    cfg = graph_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["build-graph", "--config", cfg, "--out", str(out1), "--quiet"]) == 0
    assert main(["build-graph", "--config", cfg, "--out", str(out2), "--quiet"]) == 0
    for name in ("edges.txt", "summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_pde_blowup_exits_numerical(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "pde.json", {
        "domain": {"kind": "box", "lo": [0.0], "hi": [1.0]},
        "D": {"kind": "constant", "value": 0.0},
        "u0": {"kind": "constant", "value": -50.0},
        "C": 1.0, "dt": 0.1, "T": 2.0, "resolution": 4})
    out = tmp_path / "out"
    code = main(["pde-run", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 3
    assert "numerical abort" in capsys.readouterr().err
    assert not (out / "manifest.json").exists()


def test_recover_empty_pair_set_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "rec.json", {
        "domain": {"kind": "ball", "center": [0.0, 0.0], "radius": 2.0},
        "g": {"kind": "sigmoid-radial", "a": 4.0, "b": 1.0, "c": 0.5},
        "n": 12, "n_test": 12, "seed": 0,
        "eps": {"rule": "per-d-plus-2", "C": 1e-6}})
    code = main(["recover", "--config", cfg, "--quiet",
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_recover_smoke_run(tmp_path):
    cfg = write_cfg(tmp_path, "rec.json", {
        "domain": {"kind": "ball", "center": [0.0, 0.0], "radius": 2.0},
        "g": {"kind": "sigmoid-radial", "a": 4.0, "b": 1.0, "c": 0.5},
        "n": 60, "n_test": 40, "seed": 1,
        "eps": {"rule": "per-d-plus-2", "C": 1.5},
        "quad": {"N": 4},
        "train": {"max_iters": 300},
        "cv": True})
    out = tmp_path / "out"
    assert main(["recover", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    for name in ("pairs.csv", "model.ckpt", "summary.json",
                 "loss.png", "profile.png", "manifest.json"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_pairs"] > 0
    assert summary["final_train_loss"] > 0
    assert len(summary["cv_folds"]) == 5
    assert summary["stop_reason"] == "max_iters"


def test_unknown_quad_key_rejected(tmp_path):
    cfg = write_cfg(tmp_path, "rec.json", {
        "domain": {"kind": "ball", "center": [0.0, 0.0], "radius": 2.0},
        "g": {"kind": "sigmoid-radial", "a": 4.0, "b": 1.0, "c": 0.5},
        "n": 40, "n_test": 20,
        "quad": {"points": 4}})
    assert main(["recover", "--config", cfg, "--quiet",
                 "--out", str(tmp_path / "out")]) == 2
