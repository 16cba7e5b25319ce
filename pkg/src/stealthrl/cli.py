"""Command-line entry point: ``stealthrl <subcommand> ...``.

Exit status is 0 only when every requested cell completed.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import harness
from .agent import BcConfig, ReinforceConfig, evaluate, load_policy, train_bc, train_reinforce
from .antagonist import AntTrainConfig, train_antagonist, write_curve
from .env import make_env
from .nn import save_model
from .perturb import PerturbConfig, craft
from .predictor import PmConfig, collect_transitions, train_pm

log = logging.getLogger("stealthrl")


def _global(p: argparse.ArgumentParser, suppress: bool):
    # subcommand copies use SUPPRESS so they do not clobber values given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="flat key=value experiment config")
    p.add_argument("--seed", type=int, default=d(None), help="training seed, or a single evaluation seed")
    p.add_argument("--out", default=d(None), help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _floats(text: str) -> list:
    return [harness.parse_value(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(add_help=False)
    _global(top, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global(common, suppress=True)
    ap = argparse.ArgumentParser(prog="stealthrl", description=__doc__, parents=[top])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("train-agent", parents=[common], help="train a victim policy")
    p.add_argument("--env", required=True)
    p.add_argument("--algo", choices=("bc", "reinforce"), default="bc")
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("train-pm", parents=[common], help="train a prediction model")
    p.add_argument("--env", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--epochs", type=int, default=PmConfig.epochs)
    p.add_argument("--dataset", help="also write the transition CSV here")

    p = sub.add_parser("train-ant", parents=[common], help="train an antagonist")
    p.add_argument("--env", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--budget", type=int, default=3)
    p.add_argument("--episodes", type=int, default=AntTrainConfig.episodes)
    p.add_argument("--craft", choices=("oracle", "full"), default="oracle")

    p = sub.add_parser("attack", parents=[common], help="run one attack method over seeds")
    p.add_argument("method", choices=harness.METHODS)
    p.add_argument("--env")
    p.add_argument("--policy")
    p.add_argument("--pm", default=None, help="'oracle' or a prediction-model file")
    p.add_argument("--n", type=int, default=None, help="CP plan length N, or the every_n period")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--selection", choices=("first_exceed", "max_dam"), default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--antagonist", default=None)
    p.add_argument("--seeds", default=None, help="e.g. 1..20 or 1,2,3")

    p = sub.add_parser("sweep", parents=[common], help="sweep one axis over seeds")
    p.add_argument("--axis", choices=sorted(harness.AXES), required=True)
    p.add_argument("--values", required=True, help="comma list, e.g. 0,0.03,inf")

    p = sub.add_parser("eval", parents=[common], help="clean evaluation of a policy")
    p.add_argument("--env", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=20)

    p = sub.add_parser("craft", parents=[common], help="craft one perturbation and print it as JSON")
    p.add_argument("--victim", required=True)
    p.add_argument("--env", required=True, help="env id, for the state ranges")
    p.add_argument("--state", required=True, help="comma-separated observation")
    p.add_argument("--target", required=True, help="action index, or comma-separated continuous action")
    p.add_argument("--method", choices=("cw", "fgsm"), default="cw")
    p.add_argument("--eps", type=float, default=None)
    return ap


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    raise TypeError(type(x))


def _dump(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_train_agent(a) -> int:
    env = make_env(a.env)
    seed = a.seed or 0
    if a.algo == "bc":
        cfg = BcConfig(seed=seed, **({"episodes": a.episodes} if a.episodes else {}))
        pol = train_bc(env, cfg=cfg)
    else:
        cfg = ReinforceConfig(seed=seed, **({"episodes": a.episodes} if a.episodes else {}))
        pol = train_reinforce(env, cfg)
    out = a.out or f"{a.env}_{a.algo}_{seed}.srlm"
    save_model(pol.net, out)
    stats = evaluate(pol, env)
    print(json.dumps({"model": out, **asdict(stats)}, default=_jsonable))
    return 0


def cmd_train_pm(a) -> int:
    env = make_env(a.env)
    seed = a.seed or 0
    ds = collect_transitions(env, load_policy(a.victim), a.steps, a.noise, seed)
    if a.dataset:
        ds.write_csv(a.dataset)
    res = train_pm(ds, PmConfig(epochs=a.epochs, seed=seed), env)
    out = a.out or f"{a.env}_pm_{seed}.srlm"
    res.model.save(out)
    print(json.dumps({"model": out, "heldout_mse": res.heldout_mse, "train_mse": res.train_mse}))
    return 0


def cmd_train_ant(a) -> int:
    env = make_env(a.env)
    victim = load_policy(a.victim)
    cfg = AntTrainConfig(budget=a.budget, episodes=a.episodes, craft_mode=a.craft, seed=a.seed or 0)
    res = train_antagonist(env, victim, cfg, PerturbConfig(restarts=0))
    out = Path(a.out or f"{a.env}_ant_N{a.budget}.srlm")
    res.antagonist.save(out)
    write_curve(res.curve, out.with_suffix(".curve.csv"))
    print(json.dumps({"model": str(out), "final_mean_return": res.curve[-1][1]}))
    return 0


def _config_from_args(a) -> harness.ExperimentConfig:
    if a.config:
        cfg = harness.load_config(a.config)
    else:
        if not a.env:
            raise harness.ConfigError("either --config or --env is required")
        cfg = harness.ExperimentConfig(a.env, method="clean")
    over = {}
    if getattr(a, "env", None):
        over["env_id"] = a.env
    if getattr(a, "policy", None):
        over["victim"] = a.policy
    params = dict(cfg.params)
    if getattr(a, "method", None) in harness.METHODS:
        over["method"] = a.method
        if a.method != cfg.method:
            params = {}
    for key, attr in (("delta", "delta"), ("M", "m"), ("selection", "selection"), ("c", "c"),
                      ("budget", "budget"), ("predictor", "pm"), ("antagonist", "antagonist")):
        v = getattr(a, attr, None)
        if v is not None:
            params[key] = v
    if getattr(a, "n", None) is not None:
        params["n" if over.get("method", cfg.method) == "every_n" else "N"] = a.n
    if getattr(a, "seeds", None):
        over["seeds"] = harness.parse_seeds(a.seeds)
    elif a.seed is not None and a.cmd == "attack":
        over["seeds"] = (a.seed,)
    return replace(cfg, params=params, **over)


def cmd_attack(a) -> int:
    cfg = _config_from_args(a)
    comp = harness.load_components(cfg)
    reports = harness.run_method(cfg, comp)
    mean, std, attacks = harness.summarize(reports)
    payload = {"method": cfg.method, "params": cfg.params, "mean_return": mean, "std_return": std,
               "mean_attack_count": attacks, "episodes": [r.to_dict() for r in reports]}
    _dump(payload, a.out)
    return 0


def cmd_sweep(a) -> int:
    if not a.config:
        raise harness.ConfigError("sweep needs --config")
    cfg = harness.load_config(a.config)
    res = harness.sweep(cfg, a.axis, _floats(a.values))
    out = a.out or "sweep_out"
    harness.write_report(res.reports, res, out)
    for v, m, s, k in zip(res.values, res.means, res.stds, res.mean_attack_counts):
        print(f"{a.axis}={v}: return {m:.3f} +/- {s:.3f}, attacks {k:.2f}")
    if not res.complete:
        print(f"{len(res.failures)} cell(s) failed: {res.failures}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(a) -> int:
    env = make_env(a.env)
    pol = load_policy(a.policy)
    seeds = [a.seed] if a.seed is not None else range(1, a.episodes + 1)
    _dump(asdict(evaluate(pol, env, seeds=seeds)), a.out)
    return 0


def cmd_craft(a) -> int:
    env = make_env(a.env)
    victim = load_policy(a.victim)
    obs = np.array([float(v) for v in a.state.split(",")])
    target = int(a.target) if victim.discrete else np.array([float(v) for v in a.target.split(",")])
    cfg = harness.load_config(a.config).perturb if a.config else PerturbConfig()
    cfg = replace(cfg, method=a.method, **({"eps_inf": a.eps} if a.eps is not None else {}))
    res = craft(victim, obs, target, cfg, env.spec)
    _dump(asdict(res), a.out)
    return 0 if res.success else 2


COMMANDS = {
    "train-agent": cmd_train_agent,
    "train-pm": cmd_train_pm,
    "train-ant": cmd_train_ant,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "craft": cmd_craft,
}


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.cmd](a)
    except (harness.ConfigError, harness.UnsupportedMethodError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
