"""Command-line experiments.

Every subcommand reads optional ``--config file.json``, applies explicit flags on
top, validates, writes ``resolved_config.json`` into ``--out-dir`` and then its
outputs. Exit codes: 0 success, 1 runtime failure, 2 config/validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .action_core import CONT_DIM
from .executor import MODES, RolloutConfig, evaluate, paired_sign_test, run_episode
from .policy_sim import (
    TOY_BIAS_MAGNITUDE,
    DemoFormatError,
    EnvConfig,
    ToyEnv,
    generate_demos,
    load_demos,
    noisy_policy,
    save_demos,
    toy_bias,
)
from .preference import generate_preference_dataset
from .sampling import SOURCES, make_sampler
from .scaling_law import dataset_tuples, fit_power_law, oracle_best_of_k, relative_reduction, write_fit
from .serving_model import STRATEGIES, CostProfile, default_profile, error_vs_budget, latency
from .verifier import OBJECTIVES, TrainConfig, VerifierModel, evaluate_pairs, train, write_train_log

log = logging.getLogger("actionscaling")

POLICY_DEFAULTS = {
    "demos": None,
    "episodes": 800,
    "noise": 0.25,
    "bias": TOY_BIAS_MAGNITUDE,
    "flip_prob": 0.05,
    "temperature": 1.0,
}

DEFAULTS = {
    "gen-demos": {"episodes": 800},
    "scaling-sweep": {**POLICY_DEFAULTS, "tuples": 1000, "k_max": 1024,
                      "samplers": list(SOURCES), "n_hat": 4},
    "gen-prefs": {**POLICY_DEFAULTS, "n": 32, "k": 6, "buffer_size": 5000, "uniform_buffer": True},
    "train-verifier": {"prefs": None, "eval_prefs": None, "alpha": [0.1], "objective": "bt_margin",
                       "lr": 0.01, "epochs": 1, "batch_size": 1, "hidden": 64, "n_tasks": 4},
    "eval-verifier": {"checkpoint": None, "prefs": None, "objective": None},
    "eval-closed-loop": {**POLICY_DEFAULTS, "checkpoint": None, "modes": ["greedy", "verifier"],
                         "episodes_eval": 100, "n_hat": 5, "k_hat": 16, "horizon": 60},
    "latency-model": {**POLICY_DEFAULTS, "profile": None, "policy_table": "served", "n_hat": 5,
                      "k_max": 128, "tuples": 200, "sweep_n_hat": 4},
}


class ConfigError(Exception):
    pass


# -- config handling -------------------------------------------------------

def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = {"command": command, "seed": 0, **DEFAULTS[command]}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for key, value in file_cfg.items():
            if key not in cfg or key == "command":
                raise ConfigError(f"config.{key}: unknown field for {command}")
            cfg[key] = value
    for key in list(cfg):
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    _validate(cfg)
    return cfg


def _check(cond: bool, field: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"config.{field}: {msg}")


def _validate(cfg: dict) -> None:
    _check(isinstance(cfg["seed"], int), "seed", "must be an integer")
    for key in ("episodes", "tuples", "k_max", "n", "k", "buffer_size", "epochs", "batch_size",
                "hidden", "n_tasks", "episodes_eval", "n_hat", "k_hat", "horizon", "sweep_n_hat"):
        if key in cfg:
            _check(isinstance(cfg[key], int) and cfg[key] >= 0, key, "must be a nonnegative integer")
    for key in ("episodes", "tuples", "k_max", "buffer_size", "episodes_eval", "k_hat", "horizon"):
        if key in cfg:
            _check(cfg[key] >= 1, key, "must be >= 1")
    if "noise" in cfg:
        _check(isinstance(cfg["noise"], (int, float)) and cfg["noise"] >= 0, "noise", "must be >= 0")
        _check(isinstance(cfg["temperature"], (int, float)) and cfg["temperature"] > 0, "temperature", "must be > 0")
        b = cfg["bias"]
        _check(isinstance(b, (int, float)) or (isinstance(b, list) and len(b) == CONT_DIM),
               "bias", "must be a number or a list of 6 numbers")
    if "samplers" in cfg:
        _check(isinstance(cfg["samplers"], list) and cfg["samplers"], "samplers", "must be a nonempty list")
        for i, s in enumerate(cfg["samplers"]):
            _check(s in SOURCES, f"samplers[{i}]", f"must be one of {list(SOURCES)}")
    if cfg["command"] == "scaling-sweep":
        _check(cfg["n_hat"] >= 2, "n_hat", "must be >= 2")
    if cfg["command"] == "gen-prefs":
        _check(cfg["n"] >= cfg["k"] >= 2, "k", "need n >= k >= 2")
    if "alpha" in cfg:
        alphas = cfg["alpha"] if isinstance(cfg["alpha"], list) else [cfg["alpha"]]
        _check(len(alphas) > 0, "alpha", "must not be empty")
        for i, a in enumerate(alphas):
            _check(isinstance(a, (int, float)) and a >= 0, f"alpha[{i}]", "must be >= 0")
        cfg["alpha"] = [float(a) for a in alphas]
        _check(cfg["lr"] > 0, "lr", "must be > 0")
    if cfg.get("objective") is not None:
        _check(cfg["objective"] in OBJECTIVES, "objective", f"must be one of {list(OBJECTIVES)}")
    if "modes" in cfg:
        _check(isinstance(cfg["modes"], list) and cfg["modes"], "modes", "must be a nonempty list")
        for i, m in enumerate(cfg["modes"]):
            _check(m in MODES, f"modes[{i}]", f"must be one of {list(MODES)}")
    if "policy_table" in cfg:
        _check(cfg["policy_table"] in ("served", "naive"), "policy_table", "must be 'served' or 'naive'")
    if cfg["command"] in ("train-verifier", "eval-verifier"):
        _check(cfg["prefs"] is not None, "prefs", "is required")
    if cfg["command"] == "eval-verifier":
        _check(cfg["checkpoint"] is not None, "checkpoint", "is required")
    if cfg["command"] == "eval-closed-loop" and "verifier" in cfg["modes"]:
        _check(cfg["checkpoint"] is not None, "checkpoint", "is required for verifier mode")


def _require_file(path, field: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config.{field}: file not found: {p}")
    return p


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- shared pieces ---------------------------------------------------------

def _demos(cfg: dict, out: Path):
    if cfg.get("demos"):
        return load_demos(_require_file(cfg["demos"], "demos"))
    ds = generate_demos(ToyEnv(EnvConfig()), cfg["episodes"], [cfg["seed"], 0])
    save_demos(ds, out / "demos.jsonl")
    return ds


def _policy(cfg: dict, dataset):
    bias = cfg["bias"]
    bias = toy_bias(bias) if isinstance(bias, (int, float)) else np.asarray(bias, dtype=np.float64)
    return noisy_policy(dataset, cfg["noise"], bias, cfg["flip_prob"])


# -- subcommands -----------------------------------------------------------

def cmd_gen_demos(cfg: dict, out: Path) -> None:
    ds = generate_demos(ToyEnv(EnvConfig()), cfg["episodes"], [cfg["seed"], 0])
    save_demos(ds, out / "demos.jsonl")
    ds.stats.save(out / "stats.json")
    write_json(out / "summary.json", {"records": len(ds), "episodes": cfg["episodes"]})


def cmd_scaling_sweep(cfg: dict, out: Path) -> None:
    ds = _demos(cfg, out)
    policy = _policy(cfg, ds)
    buf = ds.sample_buffer(cfg["tuples"], [cfg["seed"], 1])
    tuples = dataset_tuples(buf)
    fits, refused = {}, []
    for name in cfg["samplers"]:
        sampler = make_sampler(name, policy, cfg["temperature"], cfg["n_hat"])
        curve = oracle_best_of_k(tuples, sampler, cfg["k_max"], [cfg["seed"], 2], tag=name)
        curve.to_csv(out / f"curve_{name}.csv")
        try:
            fit = fit_power_law(curve, drop_zeros=True)
        except ValueError as e:
            refused.append(f"{name}: {e}")
            continue
        extra = {"sampler": name}
        if curve.mean_error[0] > 0:
            extra["relative_reduction"] = relative_reduction(curve)
        write_fit(fit, out / f"fit_{name}.json", extra)
        fits[name] = fit.to_dict()
    if refused:
        raise ConfigError("power-law fit refused (raise k_max): " + "; ".join(refused))


def cmd_gen_prefs(cfg: dict, out: Path) -> None:
    ds = _demos(cfg, out)
    policy = _policy(cfg, ds)
    buf = ds.sample_buffer(cfg["buffer_size"], [cfg["seed"], 1], uniform=cfg["uniform_buffer"])
    summary = generate_preference_dataset(
        buf, policy, cfg["n"], cfg["k"], cfg["temperature"], [cfg["seed"], 2], out / "prefs.jsonl"
    )
    write_json(out / "summary.json", summary)


def cmd_train_verifier(cfg: dict, out: Path) -> None:
    prefs = _require_file(cfg["prefs"], "prefs")
    eval_prefs = _require_file(cfg["eval_prefs"], "eval_prefs") if cfg["eval_prefs"] else None
    rows = []
    sweep = len(cfg["alpha"]) > 1
    for alpha in cfg["alpha"]:
        tc = TrainConfig(alpha=alpha, lr=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                         objective=cfg["objective"], seed=cfg["seed"], hidden=cfg["hidden"],
                         n_tasks=cfg["n_tasks"])
        model, history = train(str(prefs), tc, eval_pref=str(eval_prefs) if eval_prefs else None)
        suffix = f"_alpha{alpha:g}" if sweep else ""
        model.save(out / f"checkpoint{suffix}.json")
        write_train_log(history, out / f"train_log{suffix}.csv")
        m = evaluate_pairs(model, str(eval_prefs or prefs), seed=cfg["seed"])
        rows.append((alpha, m))
    lines = ["alpha,precision,recall,f1,accuracy,n_pairs"]
    for alpha, m in rows:
        lines.append(f"{alpha:g},{m['precision']:.6f},{m['recall']:.6f},{m['f1']:.6f},{m['accuracy']:.6f},{m['n_pairs']}")
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")


def cmd_eval_verifier(cfg: dict, out: Path) -> None:
    model = VerifierModel.load(_require_file(cfg["checkpoint"], "checkpoint"))
    prefs = _require_file(cfg["prefs"], "prefs")
    metrics = evaluate_pairs(model, str(prefs), cfg["objective"], seed=cfg["seed"])
    write_json(out / "metrics.json", metrics)


def cmd_eval_closed_loop(cfg: dict, out: Path) -> None:
    ds = _demos(cfg, out)
    policy = _policy(cfg, ds)
    model = VerifierModel.load(_require_file(cfg["checkpoint"], "checkpoint")) if cfg["checkpoint"] else None
    env = ToyEnv(ds.env)
    report = {}
    for mode in cfg["modes"]:
        rc = RolloutConfig(cfg["n_hat"], cfg["k_hat"], cfg["temperature"], cfg["horizon"], mode)
        res = evaluate(env, policy, model, rc, cfg["episodes_eval"], [cfg["seed"], 3])
        report[mode] = res
        lines = []
        for e in range(min(cfg["episodes_eval"], 5)):
            r = run_episode(env, policy, model, rc, [cfg["seed"], 3, e], task=e % env.config.n_tasks)
            lines.extend(r.log_lines(episode=e))
        (out / f"rollouts_{mode}.jsonl").write_text("".join(l + "\n" for l in lines))
    if "verifier" in report and "greedy" in report:
        report["verifier_vs_greedy"] = paired_sign_test(report["verifier"]["outcomes"], report["greedy"]["outcomes"])
    write_json(out / "summary.json", report)


def cmd_latency_model(cfg: dict, out: Path) -> None:
    if cfg["profile"]:
        profile = CostProfile.load(_require_file(cfg["profile"], "profile"))
    else:
        profile = default_profile(cfg["policy_table"])
    _check(cfg["k_max"] <= profile.max_batch, "k_max", f"must be <= {profile.max_batch} (profile range)")
    profile.save(out / "profile.json")
    lines = ["k_hat," + ",".join(f"{s}_s" for s in STRATEGIES)]
    for k in range(1, cfg["k_max"] + 1):
        lines.append(f"{k}," + ",".join(format(latency(profile, s, cfg["n_hat"], k), ".17g") for s in STRATEGIES))
    (out / "latency_table.csv").write_text("\n".join(lines) + "\n")
    ds = _demos(cfg, out)
    policy = _policy(cfg, ds)
    tuples = dataset_tuples(ds.sample_buffer(cfg["tuples"], [cfg["seed"], 1]))
    samplers = {"policy_sampling": "policy", "gaussian": "gaussian"}
    for strategy, sampler_name in samplers.items():
        sampler = make_sampler(sampler_name, policy, cfg["temperature"], cfg["sweep_n_hat"])
        curve = oracle_best_of_k(tuples, sampler, cfg["k_max"], [cfg["seed"], 2], tag=sampler_name)
        error_vs_budget(profile, curve, strategy, cfg["n_hat"]).to_csv(out / f"budget_{strategy}.csv")


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "scaling-sweep": cmd_scaling_sweep,
    "gen-prefs": cmd_gen_prefs,
    "train-verifier": cmd_train_verifier,
    "eval-verifier": cmd_eval_verifier,
    "eval-closed-loop": cmd_eval_closed_loop,
    "latency-model": cmd_latency_model,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default="out")
    common.add_argument("-v", "--verbose", action="store_true")

    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument("--demos", help="demo dataset (JSONL); generated when omitted")
    policy.add_argument("--episodes", type=int, help="expert episodes when generating demos")
    policy.add_argument("--noise", type=float, help="policy noise scale")
    policy.add_argument("--bias", type=float, help="magnitude of the alternating-sign policy bias")
    policy.add_argument("--flip-prob", type=float)
    policy.add_argument("--temperature", type=float)

    parser = argparse.ArgumentParser(prog="actionscaling", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", parents=[common], help="roll out the scripted expert")
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("scaling-sweep", parents=[common, policy], help="oracle best-of-k curves + power-law fits")
    p.add_argument("--tuples", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--samplers", nargs="+")
    p.add_argument("--n-hat", type=int)

    p = sub.add_parser("gen-prefs", parents=[common, policy], help="synthetic preference pairs")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--buffer-size", type=int)

    p = sub.add_parser("train-verifier", parents=[common], help="train verifier(s); several --alpha values sweep")
    p.add_argument("--prefs")
    p.add_argument("--eval-prefs")
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--objective", choices=OBJECTIVES)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--n-tasks", type=int)

    p = sub.add_parser("eval-verifier", parents=[common], help="pairwise precision/recall/F1")
    p.add_argument("--checkpoint")
    p.add_argument("--prefs")
    p.add_argument("--objective", choices=OBJECTIVES)

    p = sub.add_parser("eval-closed-loop", parents=[common, policy], help="success rate per selection mode")
    p.add_argument("--checkpoint")
    p.add_argument("--modes", nargs="+")
    p.add_argument("--episodes-eval", type=int)
    p.add_argument("--n-hat", type=int)
    p.add_argument("--k-hat", type=int)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("latency-model", parents=[common, policy], help="latency vs error budget curves")
    p.add_argument("--profile")
    p.add_argument("--policy-table", choices=("served", "naive"))
    p.add_argument("--n-hat", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--tuples", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out_dir)
    try:
        cfg = resolve_config(args.command, args)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "resolved_config.json", cfg)
        COMMANDS[args.command](cfg, out)
    except (ConfigError, DemoFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
