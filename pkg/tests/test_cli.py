import json
import subprocess
import sys

import pytest

from demohlm.cli import read_provenance, run

SMALL_NET = ["--set", "policy.hidden_layout=8", "--set", "policy.epochs=3", "--set", "policy.batch_size=16"]


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "ds"
    args = ["generate", "-q", "--task", "PushCube", "--region", "R1", "--episodes", "4", "--seed", "2", "--dataset", str(d)]
    assert run(args) == 0
    return d


def test_no_command_is_usage_error(capsys):
    assert run([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert run(["stats", "--bogus"]) == 2


def test_missing_option_prints_usage(capsys):
    assert run(["generate", "-q", "--region", "R1", "--episodes", "1", "--seed", "0"]) == 2
    err = capsys.readouterr().err
    assert "usage: demohlm generate" in err and "--task" in err


def test_missing_demo_path_is_usage_error(tmp_path, capsys):
    args = ["generate", "-q", "--task", "PushCube", "--region", "R1", "--episodes", "1", "--seed", "0"]
    assert run(args + ["--demo", str(tmp_path / "nope.demo"), "--dataset", str(tmp_path / "d")]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "demo not found" in err


def test_bad_override_is_usage_error(capsys):
    assert run(["stats", "--set", "gaze.k_yaw=fast", "--dataset", "x"]) == 2


def test_unknown_task_is_domain_error(tmp_path, capsys):
    args = ["generate", "-q", "--task", "Juggle", "--region", "R1", "--episodes", "1", "--seed", "0", "--dataset", str(tmp_path / "d")]
    assert run(args) == 1
    assert "Juggle" in capsys.readouterr().err


def test_generate_is_byte_reproducible(dataset, tmp_path, capsys):
    other = tmp_path / "again"
    args = ["generate", "-q", "--task", "PushCube", "--region", "R1", "--episodes", "4", "--seed", "2", "--dataset", str(other)]
    assert run(args) == 0
    assert files(other) == files(dataset)


def test_generate_from_artifact(dataset, tmp_path):
    other = tmp_path / "redo"
    assert run(["generate", "-q", "--from-artifact", str(dataset), "--dataset", str(other)]) == 0
    assert files(other) == files(dataset)
    prov = read_provenance(dataset)
    assert prov["command"] == "generate" and prov["args"]["seed"] == 2


def test_from_artifact_wrong_command(dataset, tmp_path):
    assert run(["train", "-q", "--from-artifact", str(dataset), "--checkpoint", str(tmp_path / "c")]) == 2


def test_generate_refuses_existing_dataset(dataset, capsys):
    args = ["generate", "-q", "--task", "PushCube", "--region", "R1", "--episodes", "1", "--seed", "2", "--dataset", str(dataset)]
    assert run(args) == 1


def test_train_eval_round(dataset, tmp_path, capsys):
    ckpt, loss = tmp_path / "p.ckpt", tmp_path / "loss.csv"
    assert run(["train", "-q", "--dataset", str(dataset), "--checkpoint", str(ckpt), "--loss-csv", str(loss), *SMALL_NET]) == 0
    lines = loss.read_text().splitlines()
    assert lines[0].startswith("# provenance ") and lines[1] == "epoch,loss" and len(lines) == 5
    capsys.readouterr()
    report = tmp_path / "eval.csv"
    args = ["eval", "-q", "--checkpoint", str(ckpt), "--task", "PushCube", "--region", "R1", "--seed", "0"]
    assert run(args + ["--episodes", "0"]) == 0
    assert capsys.readouterr().out.splitlines()[1] == "PushCube,R1,0,0,n/a"
    assert run(args + ["--episodes", "1", "--report", str(report)]) == 0
    assert report.read_text().startswith("# provenance ")
    # retraining from the checkpoint's provenance gives the same bytes
    again = tmp_path / "q.ckpt"
    assert run(["train", "-q", "--from-artifact", str(ckpt), "--checkpoint", str(again)]) == 0
    assert again.read_bytes() == ckpt.read_bytes()


def test_eval_baseline(dataset, capsys):
    args = ["eval", "-q", "--baseline-from", str(dataset), "--task", "PushCube", "--region", "R1", "--episodes", "1", "--seed", "0"]
    assert run(args) == 0
    assert capsys.readouterr().out.startswith("task,region,episodes,successes,success_rate\nPushCube,R1,1,")


def test_eval_missing_checkpoint_is_usage_error(tmp_path):
    args = ["eval", "-q", "--checkpoint", str(tmp_path / "none"), "--task", "PushCube", "--region", "R1", "--episodes", "1", "--seed", "0"]
    assert run(args) == 2


def test_corrupt_checkpoint_is_domain_error(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    args = ["eval", "-q", "--checkpoint", str(bad), "--task", "PushCube", "--region", "R1", "--episodes", "1", "--seed", "0"]
    assert run(args) == 1


def test_stats_and_corruption(dataset, tmp_path, capsys):
    copy = tmp_path / "copy"
    copy.mkdir()
    for name, blob in files(dataset).items():
        (copy / name).write_bytes(blob)
    out = tmp_path / "stats.csv"
    assert run(["stats", "-q", "--dataset", str(copy), "--csv", str(out)]) == 0
    assert "count,4\n" in capsys.readouterr().out
    traj = next(p for p in sorted(copy.iterdir()) if p.suffix == ".bin")
    blob = bytearray(traj.read_bytes())
    blob[len(blob) // 2] ^= 0x01
    traj.write_bytes(bytes(blob))
    assert run(["stats", "-q", "--dataset", str(copy)]) == 1
    assert "error:" in capsys.readouterr().err
    assert run(["train", "-q", "--dataset", str(copy), "--checkpoint", str(tmp_path / "c"), *SMALL_NET]) == 1


def test_make_demo_ingest_replay(tmp_path, capsys):
    demo, rel = tmp_path / "cube.demo", tmp_path / "cube.rel.json"
    assert run(["make-demo", "-q", "--task", "PushCube", "--out", str(demo)]) == 0
    assert run(["ingest", "-q", "--demo", str(demo), "--out", str(rel)]) == 0
    doc = json.loads(rel.read_text())
    assert doc["provenance"]["command"] == "ingest"
    assert run(["replay-check", "-q", "--task", "PushCube", "--demo", str(demo)]) == 0
    assert "PushCube: PASS" in capsys.readouterr().out
    args = ["generate", "-q", "--task", "PushCube", "--region", "R1", "--episodes", "1", "--seed", "0"]
    assert run(args + ["--rel", str(rel), "--dataset", str(tmp_path / "d")]) == 0


def test_ingest_malformed_demo(tmp_path, capsys):
    bad = tmp_path / "bad.demo"
    bad.write_text("not a demo\n")
    assert run(["ingest", "-q", "--demo", str(bad), "--out", str(tmp_path / "r.json")]) == 1


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "demohlm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "generate" in res.stdout
