"""BPP vs GPP learning curves on the Wahba task, aggregated over seeds."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from . import cli

log = logging.getLogger(__name__)

# applied identically to both variants
OVERRIDES = {"lr_schedule": "linear", "entropy_coef": 0.01}
VARIANTS = ("bpp", "gpp")


def run_config(variant: str, seed: int, steps: int, out_dir: Path, **extra) -> dict:
    cfg = dict(cli.DEFAULTS["train"])
    cfg.update(OVERRIDES)
    cfg.update(variant=variant, seed=seed, steps=steps, out_dir=str(out_dir), **extra)
    return cfg


def _cached(run_dir: Path, cfg: dict) -> bool:
    resolved = run_dir / "resolved_config.json"
    if not (resolved.is_file() and (run_dir / "training_log.csv").is_file() and (run_dir / "summary.json").is_file()):
        return False
    # the same directory may be spelled differently (relative vs absolute)
    have = json.loads(resolved.read_text())
    want = json.loads(json.dumps({"command": "train", **cfg}))
    have.pop("out_dir", None)
    want.pop("out_dir", None)
    return have == want


def read_log(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    keys = ("step", "mean_reward", "mean_geodesic_deg", "entropy", "accept_rate")
    return {k: np.array([float(r[k]) for r in rows]) for k in keys}


def run_fig3(out_dir="results/fig3", seeds=(0, 1, 2), steps: int = 200_000, reuse: bool = True, **extra) -> dict:
    """Train every (variant, seed) pair, reusing runs whose resolved config matches.

    Writes ``curves.csv`` (seed-mean per logged step) and ``summary.json``.
    """
    out = Path(out_dir)
    runs = {}
    for variant in VARIANTS:
        for seed in seeds:
            run_dir = out / f"{variant}_seed{seed}"
            cfg = run_config(variant, seed, steps, run_dir, **extra)
            if reuse and _cached(run_dir, cfg):
                log.info("reusing %s", run_dir)
            else:
                log.info("training %s", run_dir)
                code = cli.cmd_train(cfg)
                if code != cli.EXIT_OK:
                    raise RuntimeError(f"training {run_dir} exited with {code}")
            runs[(variant, seed)] = {
                "summary": json.loads((run_dir / "summary.json").read_text()),
                "log": read_log(run_dir / "training_log.csv"),
            }

    summary = {"steps": steps, "seeds": list(seeds), "overrides": OVERRIDES, "variants": {}}
    for variant in VARIANTS:
        per_seed = [runs[(variant, s)]["summary"] for s in seeds]
        summary["variants"][variant] = {
            "final_mean_reward": float(np.mean([p["final_mean_reward"] for p in per_seed])),
            "final_mean_geodesic_deg": float(np.mean([p["final_mean_geodesic_deg"] for p in per_seed])),
            "per_seed_reward": [p["final_mean_reward"] for p in per_seed],
            "per_seed_geodesic_deg": [p["final_mean_geodesic_deg"] for p in per_seed],
            "wall_s": float(sum(p["wall_s"] for p in per_seed)),
        }
    summary["total_wall_s"] = sum(v["wall_s"] for v in summary["variants"].values())

    # seed-mean curves; all runs share the same step grid
    steps_grid = runs[(VARIANTS[0], seeds[0])]["log"]["step"]
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"{v}_{k}" for v in VARIANTS for k in ("reward", "geodesic_deg")])
        cols = []
        for v in VARIANTS:
            for k in ("mean_reward", "mean_geodesic_deg"):
                cols.append(np.mean([runs[(v, s)]["log"][k] for s in seeds], axis=0))
        for i, st in enumerate(steps_grid):
            w.writerow([int(st)] + [f"{c[i]:.6f}" for c in cols])
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
