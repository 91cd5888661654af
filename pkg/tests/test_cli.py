"""End-to-end command-line tests: outputs, determinism, error exits."""

import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cohere.cli import main
from cohere.learn import init_encoder

FIXTURES = Path(__file__).parent / "fixtures"

SMALL_SCENE = {
    "scene": {
        "seed": 5,
        "frames": 4,
        "sweeps_per_frame": 4,
        "ego": {"velocity": [1.0, 0.0, 0.0]},
        "objects": [
            {"size": [1.8, 1.4, 1.2], "center": [6.0, 2.0, 1.0],
             "velocity": [0.5, 0.0, 0.0]},
            {"size": [1.5, 1.5, 1.3], "center": [10.0, -4.0, 1.1],
             "yaw": 0.4},
        ],
        "points_per_object": 40,
        "ground_points": 200,
    }
}


def write_config(path, obj=SMALL_SCENE):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def read_tree(root):
    return {p.name: p.read_bytes() for p in Path(root).iterdir() if p.is_file()}


def check_manifest(out):
    seen = {}
    for line in (Path(out) / "golden.sha256").read_text().splitlines():
        digest, name = line.split("  ")
        seen[name] = digest
    names = sorted(p.name for p in Path(out).iterdir()
                   if p.is_file() and p.name != "golden.sha256")
    assert sorted(seen) == names
    for name, digest in seen.items():
        assert hashlib.sha256((Path(out) / name).read_bytes()).hexdigest() == digest


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = write_config(root / "config.json")
    scene = root / "scene"
    assert main(["synth-gen", "--config", str(config), "--out", str(scene)]) == 0
    return root, config, scene


def test_synth_gen_rerun_is_byte_identical(tmp_path):
    config = write_config(tmp_path / "config.json")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["synth-gen", "--config", str(config), "--out", str(out),
                     "--golden"]) == 0
    ta, tb = read_tree(a), read_tree(b)
    assert sorted(ta) == sorted(tb)
    assert ta == tb
    check_manifest(a)


def test_track_outputs_and_thread_invariance(small, tmp_path):
    root, config, scene = small
    runs = {}
    for threads in ("1", "4"):
        out = tmp_path / f"run{threads}"
        assert main(["track", "--config", str(config), "--input", str(scene),
                     "--out", str(out), "--threads", threads,
                     "--golden"]) == 0
        runs[threads] = read_tree(out)
    assert runs["1"] == runs["4"]
    check_manifest(tmp_path / "run1")

    summary = json.loads(runs["1"]["summary.json"])
    assert summary["frames"] == 4
    assert summary["tracks"] == 2
    assert summary["instances_per_frame"] == [2, 2, 2, 2]
    assert summary["track_length_counts"] == {"4": 2}


def test_eval_own_tracks_is_perfect(small, tmp_path):
    root, config, scene = small
    run = tmp_path / "run"
    assert main(["track", "--config", str(config), "--input", str(scene),
                 "--out", str(run)]) == 0
    out = tmp_path / "eval"
    assert main(["eval", "--pred", str(run / "tracks.jsonl"),
                 "--gt", str(scene / "gt.json"), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["purity"] == 1.0
    assert metrics["recall"] == 1.0
    assert metrics["id_switches"] == 0
    assert (out / "overlay.svg").exists()
    assert (out / "lengths.svg").exists()


def test_track_missing_input_dir(tmp_path, capsys):
    code = main(["track", "--input", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    assert "no frames found" in capsys.readouterr().err


def test_eval_matches_committed_fixture_metrics(tmp_path):
    out = tmp_path / "eval"
    assert main(["eval", "--pred", str(FIXTURES / "corrupted_tracks.jsonl"),
                 "--gt", str(FIXTURES / "corrupted_gt.json"),
                 "--out", str(out)]) == 0
    got = json.loads((out / "metrics.json").read_text())
    expected = json.loads((FIXTURES / "corrupted_metrics.json").read_text())
    assert got == expected


def test_eval_invariant_to_track_id_relabeling(tmp_path):
    records = [json.loads(line) for line in
               (FIXTURES / "corrupted_tracks.jsonl").read_text().splitlines()]
    for rec, new_id in zip(records, (9, 4)):
        rec["track_id"] = new_id
    relabeled = tmp_path / "relabeled.jsonl"
    relabeled.write_text(
        "\n".join(json.dumps(r, separators=(",", ":")) for r in records) + "\n")

    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["eval", "--pred", str(FIXTURES / "corrupted_tracks.jsonl"),
                 "--gt", str(FIXTURES / "corrupted_gt.json"),
                 "--out", str(out_a)]) == 0
    assert main(["eval", "--pred", str(relabeled),
                 "--gt", str(FIXTURES / "corrupted_gt.json"),
                 "--out", str(out_b)]) == 0
    assert (out_a / "metrics.json").read_bytes() == \
        (out_b / "metrics.json").read_bytes()


def test_eval_frame_range_mismatch(tmp_path, capsys):
    pred = tmp_path / "pred.jsonl"
    pred.write_text('{"track_id":0,"entries":[[10,0,0.0,0.0,1.0]]}\n')
    code = main(["eval", "--pred", str(pred),
                 "--gt", str(FIXTURES / "corrupted_gt.json"),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    err = capsys.readouterr().err
    assert "frame range mismatch" in err
    assert "10..10" in err and "0..9" in err


def test_pretrain_sim_zero_steps_writes_initialization(tmp_path):
    config = write_config(tmp_path / "config.json")
    out = tmp_path / "out"
    assert main(["pretrain-sim", "--config", str(config), "--seed", "3",
                 "--steps", "0", "--out", str(out)]) == 0
    assert (out / "loss.csv").read_text() == "step,loss,grad_norm\n"
    params = json.loads((out / "params.json").read_text())
    init = init_encoder(3, params["channels"])
    for role in ("online", "target"):
        assert np.array_equal(params[role]["weight"], init.weight)
        assert np.array_equal(params[role]["bias"], init.bias)


def test_pretrain_sim_rerun_is_byte_identical(tmp_path):
    config = write_config(tmp_path / "config.json")
    trees = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["pretrain-sim", "--config", str(config), "--seed", "1",
                     "--steps", "3", "--out", str(out), "--golden"]) == 0
        trees.append(read_tree(out))
    assert trees[0] == trees[1]
    losses = [float(line.split(",")[1]) for line in
              trees[0]["loss.csv"].decode().splitlines()[1:]]
    assert len(losses) == 3
    assert np.isfinite(losses).all()


def test_pretrain_sim_gradcheck_flag(tmp_path):
    config = write_config(tmp_path / "config.json")
    out = tmp_path / "out"
    assert main(["pretrain-sim", "--config", str(config), "--steps", "1",
                 "--gradcheck", "--trials", "2", "--out", str(out)]) == 0
    report = json.loads((out / "gradcheck.json").read_text())
    assert report["trials"] == 2
    assert report["all_passed"] is True
    assert (out / "loss.csv").exists()


def test_gradcheck_command_report(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["gradcheck", "--trials", "3", "--seed", "11",
                 "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert stdout.count("PASS") == 3
    report = json.loads((out / "gradcheck.json").read_text())
    assert len(report["results"]) == 3
    assert all(r["passed"] for r in report["results"])


def test_bad_config_exits_cleanly(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"not_a_real_option": 1}')
    code = main(["synth-gen", "--config", str(bad),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    assert "error:" in capsys.readouterr().err

    code = main(["synth-gen", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_single_frame_scene(tmp_path):
    obj = json.loads(json.dumps(SMALL_SCENE))
    obj["scene"]["frames"] = 1
    config = write_config(tmp_path / "config.json", obj)
    scene, run = tmp_path / "scene", tmp_path / "run"
    assert main(["synth-gen", "--config", str(config), "--out", str(scene)]) == 0
    assert main(["track", "--config", str(config), "--input", str(scene),
                 "--out", str(run)]) == 0
    summary = json.loads((run / "summary.json").read_text())
    assert summary["frames"] == 1
    assert summary["track_length_counts"] == {"1": 2}


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "cohere.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("synth-gen", "track", "pretrain-sim", "eval", "gradcheck"):
        assert command in proc.stdout


def test_env_var_controls_log_level(small, tmp_path):
    root, config, scene = small
    env = dict(os.environ, COHERE_LOG="INFO")
    proc = subprocess.run(
        [sys.executable, "-m", "cohere.cli", "track", "--config", str(config),
         "--input", str(scene), "--out", str(tmp_path / "out")],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "INFO cohere" in proc.stderr

    env = dict(os.environ, COHERE_LOG="WARNING")
    proc = subprocess.run(
        [sys.executable, "-m", "cohere.cli", "track", "--config", str(config),
         "--input", str(scene), "--out", str(tmp_path / "out2")],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "INFO cohere" not in proc.stderr
