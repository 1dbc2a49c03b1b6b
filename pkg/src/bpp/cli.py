"""Command-line entry point: ``bpp <subcommand> ...``.

Each subcommand has a flat parameter set. Values come from built-in defaults,
then an optional ``--config`` JSON file, then explicit flags (flags win). The
resolved parameters are written as ``resolved_config.json`` next to the
outputs; passing that file back via ``--config`` reproduces the run.

Exit codes: 0 ok, 1 other error, 2 usage, 3 fit tolerance miss, 4 selfcheck failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_FIT, EXIT_SELFCHECK = 0, 1, 2, 3, 4

DEFAULTS = {
    "gen-norm-dataset": {"count": 100_000, "seed": 0, "out": "norm_table.csv", "threads": 1},
    "fit": {
        "dataset": None, "target": "fN", "out_weights": None, "steps": None,
        "seed": 0, "b_seed": 1, "b_count": 100_000,
    },
    "selfcheck": {"weights_dir": None, "skip_slow": False, "seed": 0},
    "train": {
        "variant": "bpp", "seed": 0, "steps": 200_000, "out_dir": "runs/bpp",
        "num_pairs": 50, "noise_sigma": 0.01, "env_seed": 0,
        "clip_eps": 0.2, "lr": 3e-4, "lr_schedule": "constant", "epochs_per_batch": 10, "batch_episodes": 256,
        "minibatch_size": 64, "entropy_coef": 0.0, "value_coef": 0.5, "max_grad_norm": 0.5,
        "normalize_advantage": True, "b_source": "fitted", "weights_dir": None,
        "record_wall_time": False, "trunk": "pairpool", "pair_hidden": [], "pair_skip": True,
    },
    "eval": {
        "policy_weights": None, "episodes": 1000, "seed": 0, "num_pairs": 50,
        "noise_sigma": 0.01, "deterministic": True, "weights_dir": None, "out": None,
    },
}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bpp", description="Bingham policy parameterization toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON file of parameters (flags override)")
        return sp

    g = add("gen-norm-dataset", "tabulate log N(Z) by quadrature")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--threads", type=int)

    f = add("fit", "fit the f_N or f_b approximator")
    f.add_argument("--dataset")
    f.add_argument("--target", choices=["fN", "fb"])
    f.add_argument("--out-weights", dest="out_weights")
    f.add_argument("--steps", type=int)
    f.add_argument("--seed", type=int)

    s = add("selfcheck", "run the distribution invariant suite")
    s.add_argument("--weights-dir", dest="weights_dir")
    s.add_argument("--skip-slow", dest="skip_slow", action="store_true")
    s.add_argument("--seed", type=int)

    t = add("train", "PPO on the Wahba environment")
    t.add_argument("--variant")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--num-pairs", dest="num_pairs", type=int)
    t.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-schedule", dest="lr_schedule", choices=["constant", "linear"])
    t.add_argument("--trunk", choices=["pairpool", "mlp"])
    t.add_argument("--pair-hidden", dest="pair_hidden", type=_int_list, help="comma-separated widths; empty for none")
    t.add_argument("--pair-skip", dest="pair_skip", action=argparse.BooleanOptionalAction)
    t.add_argument("--entropy-coef", dest="entropy_coef", type=float)
    t.add_argument("--b-source", dest="b_source", choices=["fitted", "exact"])
    t.add_argument("--weights-dir", dest="weights_dir")
    t.add_argument("--record-wall-time", dest="record_wall_time", action="store_true")

    e = add("eval", "evaluate a saved policy (or 'oracle')")
    e.add_argument("--policy-weights", dest="policy_weights")
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--num-pairs", dest="num_pairs", type=int)
    e.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    e.add_argument("--stochastic", dest="deterministic", action="store_false")
    e.add_argument("--weights-dir", dest="weights_dir")
    e.add_argument("--out")
    return p


def resolve(command: str, args: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    path = args.pop("config", None)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        loaded.pop("command", None)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update(args)
    return cfg


def _write_resolved(directory: Path, command: str, cfg: dict):
    directory.mkdir(parents=True, exist_ok=True)
    out = {"command": command, **cfg}
    (directory / "resolved_config.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


# --- subcommands -------------------------------------------------------------


def cmd_gen_norm_dataset(cfg: dict) -> int:
    from .normconst import gen_norm_dataset

    if cfg["count"] < 1:
        raise UsageError("--count must be >= 1")
    out = Path(cfg["out"])
    table = gen_norm_dataset(cfg["count"], cfg["seed"], threads=max(1, cfg["threads"]))
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save(out)
    _write_resolved(out.parent, "gen-norm-dataset", cfg)
    print(f"wrote {len(table)} rows to {out}")
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    from . import normconst as nc

    if not cfg["dataset"] or not Path(cfg["dataset"]).is_file():
        raise UsageError(f"dataset not found: {cfg['dataset']}")
    if cfg["target"] not in ("fN", "fb"):
        raise UsageError("--target must be fN or fb")
    out = Path(cfg["out_weights"] or f"{'f_N' if cfg['target'] == 'fN' else 'f_b'}.json")
    table = nc.NormTable.load(cfg["dataset"])
    fit_cfg = nc.FitConfig(seed=cfg["seed"]) if cfg["target"] == "fN" else nc.default_fb_config(cfg["seed"])
    if cfg["steps"]:
        fit_cfg.steps = cfg["steps"]
    try:
        if cfg["target"] == "fN":
            fitted, report = nc.fit_f_N(table, fit_cfg)
        else:
            # b needs no quadrature; sample fresh dispersions like the table's
            z, b = nc.b_training_set(cfg["b_count"], cfg["b_seed"])
            fitted, report = nc.fit_f_b(z, b, fit_cfg)
        code = EXIT_OK
    except nc.FitFailedError as exc:
        report, fitted, code = exc.report, None, EXIT_FIT
    out.parent.mkdir(parents=True, exist_ok=True)
    if fitted is not None:
        fitted.save(out, extra={"report": report})
    report_path = out.with_name(out.stem + ".report.json")
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_resolved(out.parent, "fit", cfg)
    if cfg["target"] == "fN":
        print(f"f_N(0,0,0) = {report['fN_at_zero']:.5f}  (log 2pi^2 = {nc.LOG_SURFACE_S3:.5f})")
        print(f"held-out max |err| {report['max_abs_error']:.4g}, median {report['median_abs_error']:.4g}")
    else:
        print(f"f_b(0,0,0) = {report['fb_at_zero']:.5f}")
        print(f"held-out max rel err {report['max_rel_error']:.4g}")
    if code == EXIT_FIT:
        print("fit missed tolerance", file=sys.stderr)
    return code


def cmd_selfcheck(cfg: dict) -> int:
    from .selfcheck import run_checks

    results = run_checks(cfg["weights_dir"], skip_slow=cfg["skip_slow"], seed=cfg["seed"])
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.ok else 'FAIL'}  {r.detail}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SELFCHECK
    return EXIT_OK


def _providers(weights_dir):
    from .normconst import load_fitted_b, load_fitted_provider

    return load_fitted_provider(weights_dir), load_fitted_b(weights_dir)


def cmd_train(cfg: dict) -> int:
    from .rlkit import PPOConfig, train
    from .wahba import WahbaConfig

    if str(cfg["variant"]).lower() not in ("bpp", "gpp"):
        raise UsageError(f"unknown variant {cfg['variant']!r}; choose bpp or gpp")
    if cfg["steps"] < 0:
        raise UsageError("--steps must be >= 0")
    try:
        env_cfg = WahbaConfig(cfg["num_pairs"], cfg["noise_sigma"], cfg["env_seed"])
        ppo = PPOConfig(
            clip_eps=cfg["clip_eps"], lr=cfg["lr"], lr_schedule=cfg["lr_schedule"],
            epochs_per_batch=cfg["epochs_per_batch"],
            batch_episodes=cfg["batch_episodes"], minibatch_size=cfg["minibatch_size"],
            entropy_coef=cfg["entropy_coef"], value_coef=cfg["value_coef"],
            max_grad_norm=cfg["max_grad_norm"], normalize_advantage=cfg["normalize_advantage"],
            total_steps=cfg["steps"], seed=cfg["seed"], b_source=cfg["b_source"],
            record_wall_time=cfg["record_wall_time"], trunk=cfg["trunk"],
            pair_hidden=tuple(cfg["pair_hidden"]), pair_skip=cfg["pair_skip"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    provider = bprov = None
    if cfg["variant"].lower() == "bpp":
        provider, bprov = _providers(cfg["weights_dir"])
        if cfg["b_source"] == "exact":
            bprov = None
    tlog, state = train(env_cfg, ppo, cfg["variant"], provider=provider, bprov=bprov)
    out = Path(cfg["out_dir"])
    _write_resolved(out, "train", cfg)
    (out / "training_log.csv").write_text(tlog.to_csv())
    state.policy.save(out / "policy.json")
    state.value_net.save(out / "value.json")
    (out / "summary.json").write_text(json.dumps(tlog.summary, indent=2, sort_keys=True) + "\n")
    s = tlog.summary
    print(f"{s['variant']}: final mean reward {s['final_mean_reward']:.4f}, "
          f"geodesic {s['final_mean_geodesic_deg']:.2f} deg over {s['steps']} steps")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    from .rlkit import Policy, evaluate
    from .wahba import WahbaConfig

    if cfg["episodes"] < 1:
        raise UsageError("--episodes must be >= 1")
    src = cfg["policy_weights"]
    if src is None:
        raise UsageError("--policy-weights is required (path or 'oracle')")
    if src == "oracle":
        policy = "oracle"
    else:
        if not Path(src).is_file():
            raise UsageError(f"policy weights not found: {src}")
        variant = json.loads(Path(src).read_text())["variant"]
        provider = bprov = None
        if variant == "bpp":
            provider, bprov = _providers(cfg["weights_dir"])
        policy = Policy.load(src, provider, bprov)
    env_cfg = WahbaConfig(cfg["num_pairs"], cfg["noise_sigma"], 0)
    res = evaluate(policy, env_cfg, cfg["episodes"], seed=cfg["seed"], deterministic=cfg["deterministic"])
    text = json.dumps(res, indent=2, sort_keys=True)
    print(text)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
        _write_resolved(out.parent, "eval", cfg)
    return EXIT_OK


COMMANDS = {
    "gen-norm-dataset": cmd_gen_norm_dataset,
    "fit": cmd_fit,
    "selfcheck": cmd_selfcheck,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)  # exits 2 on malformed flags
    args = vars(ns)
    command = args.pop("command")
    logging.basicConfig(level=logging.INFO if args.pop("verbose") else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(command, args)
        return COMMANDS[command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"bpp {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).debug("failure", exc_info=True)
        print(f"bpp {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
