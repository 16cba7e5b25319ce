"""Critical-point threshold sweep: tune Delta on held-out seeds, then sweep it on the evaluation seeds.

Writes episodes.csv, sweep.json and plotdata.json to --out.
"""
import argparse
import math

from stealthrl.agent import load_policy
from stealthrl.cp_attack import CpConfig, DamCache
from stealthrl.harness import Components, ExperimentConfig, parse_seeds, sweep, tune_threshold, write_report
from stealthrl.perturb import PerturbConfig
from stealthrl.predictor import load_predictor


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--env", default="lanekeep")
    ap.add_argument("--victim", required=True)
    ap.add_argument("--pm", default="oracle")
    ap.add_argument("--N", type=int, default=1)
    ap.add_argument("--M", type=int, default=3)
    ap.add_argument("--grid", default="0,0.01,0.02,0.025,0.03,0.035,0.04,0.05,inf")
    ap.add_argument("--tune-seeds", default="101..120")
    ap.add_argument("--seeds", default="1..20")
    ap.add_argument("--out", default="runs/cp_sweep")
    a = ap.parse_args()
    values = [float(v) for v in a.grid.split(",")]
    cfg = ExperimentConfig(a.env, a.victim, "cp", {"delta": 0.0, "N": a.N, "M": a.M, "predictor": a.pm},
                           seeds=parse_seeds(a.seeds))
    env = cfg.make_env()
    comp = Components(env, load_policy(a.victim), load_predictor(a.pm, env), dam_cache=DamCache())
    finite = [v for v in values if math.isfinite(v)]
    best, table = tune_threshold(env, comp.victim, CpConfig(N=a.N, M=a.M), finite, PerturbConfig(),
                                 parse_seeds(a.tune_seeds), comp.predictor, cache=comp.dam_cache)
    print(f"tuning (mean return): {table}; best Delta = {best}")
    res = sweep(cfg, "delta", values, comp)
    write_report(res.reports, res, a.out)
    for v, m, k in zip(res.values, res.means, res.mean_attack_counts):
        print(f"Delta={v}: mean return {m:.2f}, attacked steps {k:.2f}")
    raise SystemExit(0 if res.complete else 1)


if __name__ == "__main__":
    main()
