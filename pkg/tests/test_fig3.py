import json

import pytest

from bpp import cli, fig3


def _no_training(cfg):
    raise RuntimeError("retrained")


def test_runs_aggregate_and_reuse(tmp_path, monkeypatch):
    s = fig3.run_fig3(tmp_path, seeds=(0, 1), steps=512)
    assert set(s["variants"]) == {"bpp", "gpp"}
    for v in s["variants"].values():
        assert len(v["per_seed_reward"]) == 2
    rows = (tmp_path / "curves.csv").read_text().splitlines()
    assert rows[0] == "step,bpp_reward,bpp_geodesic_deg,gpp_reward,gpp_geodesic_deg"
    assert len(rows) == 1 + 2  # two batches of 256 episodes

    monkeypatch.setattr(cli, "cmd_train", _no_training)
    assert fig3.run_fig3(tmp_path, seeds=(0, 1), steps=512) == s
    monkeypatch.chdir(tmp_path.parent)
    assert fig3.run_fig3(tmp_path.name, seeds=(0, 1), steps=512) == s


def test_changed_config_is_not_reused(tmp_path, monkeypatch):
    fig3.run_fig3(tmp_path, seeds=(0,), steps=256)
    cfg = json.loads((tmp_path / "bpp_seed0" / "resolved_config.json").read_text())
    assert cfg["lr_schedule"] == "linear" and cfg["entropy_coef"] == 0.01
    monkeypatch.setattr(cli, "cmd_train", _no_training)
    with pytest.raises(RuntimeError, match="retrained"):
        fig3.run_fig3(tmp_path, seeds=(0,), steps=512)
