"""Run several attack methods side by side on the same victim, seeds and perturbation budget.

Each method is given as ``name`` or ``name:param=value[:param=value]``, e.g.
``cp:delta=0.03:N=1:M=3 st:c=0.99 every_n:n=10 uniform clean``.
"""
import argparse

from stealthrl.agent import load_policy
from stealthrl.harness import (
    ExperimentConfig,
    load_components,
    parse_seeds,
    parse_value,
    run_method,
    summarize,
    validate_fairness,
    write_report,
)


def parse_method(text):
    name, *rest = text.split(":")
    return name, {k: parse_value(v) for k, v in (p.split("=", 1) for p in rest)}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--env", required=True)
    ap.add_argument("--victim", required=True)
    ap.add_argument("--seeds", default="1..20")
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("methods", nargs="+")
    a = ap.parse_args()
    seeds = parse_seeds(a.seeds)
    configs = [ExperimentConfig(a.env, a.victim, name, params, seeds=seeds) for name, params in
               map(parse_method, a.methods)]
    validate_fairness(configs)
    victim = load_policy(a.victim)
    reports = []
    for cfg in configs:
        reps = run_method(cfg, load_components(cfg, victim))
        m, s, k = summarize(reps)
        print(f"{cfg.method} {cfg.params}: return {m:.2f} +/- {s:.2f}, attacked steps {k:.2f}")
        reports += reps
    write_report(reports, None, a.out)


if __name__ == "__main__":
    main()
