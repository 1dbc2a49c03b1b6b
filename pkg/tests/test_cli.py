import hashlib
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from bpp import normconst as nc
from bpp.cli import main

SMALL_TRAIN = {
    "num_pairs": 5, "batch_episodes": 64, "epochs_per_batch": 2, "minibatch_size": 32,
}


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_gen_dataset(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["gen-norm-dataset", "--count", "10", "--seed", "1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "z1,z2,z3,logN" and len(lines) == 11
    assert (tmp_path / "resolved_config.json").exists()
    h = _sha(out)
    assert main(["gen-norm-dataset", "--count", "10", "--seed", "1", "--out", str(out)]) == 0
    assert _sha(out) == h


def test_gen_dataset_zero_count(tmp_path):
    assert main(["gen-norm-dataset", "--count", "0", "--out", str(tmp_path / "x.csv")]) == 2


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gen-norm-dataset", "--nope"])
    assert exc.value.code == 2


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"count": 5, "colour": "red"}))
    assert main(["gen-norm-dataset", "--config", str(cfg)]) == 2


def test_config_flags_override(tmp_path):
    cfg = tmp_path / "c.json"
    out = tmp_path / "t.csv"
    cfg.write_text(json.dumps({"count": 50, "seed": 2, "out": str(out)}))
    assert main(["gen-norm-dataset", "--config", str(cfg), "--count", "4"]) == 0
    assert len(out.read_text().splitlines()) == 5
    resolved = json.loads((tmp_path / "resolved_config.json").read_text())
    assert resolved["count"] == 4 and resolved["seed"] == 2


def test_fit_missing_dataset(tmp_path):
    assert main(["fit", "--dataset", str(tmp_path / "none.csv"), "--target", "fN"]) == 2


def test_fit_tolerance_miss_exits_3(tmp_path, capsys):
    data = tmp_path / "t.csv"
    nc.gen_norm_dataset(10_000, seed=0).save(data)
    out = tmp_path / "w" / "f_N.json"
    code = main(["fit", "--dataset", str(data), "--target", "fN", "--out-weights", str(out), "--steps", "20"])
    assert code == 3
    report = json.loads((tmp_path / "w" / "f_N.report.json").read_text())
    assert {"max_abs_error", "median_abs_error", "fN_at_zero"} <= set(report)
    assert "f_N(0,0,0)" in capsys.readouterr().out


def test_selfcheck_shipped_weights(capsys):
    assert main(["selfcheck", "--skip-slow"]) == 0
    out = capsys.readouterr().out
    assert "fN_vs_quadrature" in out and "bound_audit" not in out


def test_selfcheck_corrupted(tmp_path, capsys):
    wd = tmp_path / "w"
    shutil.copytree(nc.default_weights_dir(), wd)
    (wd / "f_N.json").write_text((wd / "f_N.json").read_text()[:500])
    assert main(["selfcheck", "--skip-slow", "--weights-dir", str(wd)]) == 4
    cap = capsys.readouterr()
    assert "load_f_N" in cap.err and "FAIL" in cap.out


def test_train_and_rerun_identical(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL_TRAIN))
    a = tmp_path / "a"
    assert main(["train", "--config", str(cfg), "--variant", "bpp", "--steps", "100", "--seed", "1", "--out-dir", str(a)]) == 0
    rows = (a / "training_log.csv").read_text().splitlines()
    assert rows[0] == "step,mean_reward,mean_geodesic_deg,entropy,accept_rate,wall_ms" and len(rows) >= 2
    for f in ("resolved_config.json", "policy.json", "value.json"):
        assert (a / f).exists()
    # replay from the resolved config into a second directory
    b = tmp_path / "b"
    assert main(["train", "--config", str(a / "resolved_config.json"), "--out-dir", str(b)]) == 0
    assert _sha(a / "training_log.csv") == _sha(b / "training_log.csv")


def test_train_bogus_variant(tmp_path):
    assert main(["train", "--variant", "bogus", "--steps", "10", "--out-dir", str(tmp_path)]) == 2


def test_eval(tmp_path, capsys):
    assert main(["eval", "--policy-weights", "oracle", "--episodes", "0"]) == 2
    assert main(["eval", "--policy-weights", "oracle", "--episodes", "50", "--noise-sigma", "0"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["mean_reward"] == pytest.approx(0.0, abs=1e-12)
    assert {"mean_reward", "mean_geodesic_deg", "std"} <= set(res)

    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL_TRAIN))
    main(["train", "--config", str(cfg), "--variant", "gpp", "--steps", "64", "--out-dir", str(tmp_path / "r")])
    capsys.readouterr()
    args = ["eval", "--policy-weights", str(tmp_path / "r" / "policy.json"), "--episodes", "20", "--num-pairs", "5", "--seed", "4"]
    main(args)
    first = capsys.readouterr().out
    main(args)
    assert capsys.readouterr().out == first


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "bpp", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "selfcheck" in r.stdout


def test_train_trunk_flags(tmp_path):
    out = tmp_path / "r"
    argv = ["train", "--variant", "gpp", "--steps", "64", "--num-pairs", "5", "--out-dir", str(out),
            "--pair-hidden", "8,8", "--no-pair-skip", "--lr-schedule", "linear"]
    assert main(argv) == 0
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["pair_hidden"] == [8, 8] and resolved["pair_skip"] is False
    assert resolved["lr_schedule"] == "linear"


def test_train_bad_config_value_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lr_schedule": "cosine", "steps": 10, "out_dir": str(tmp_path / "r")}))
    assert main(["train", "--config", str(cfg)]) == 2
