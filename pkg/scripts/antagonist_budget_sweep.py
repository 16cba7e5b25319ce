"""Train one antagonist per budget N and report the victim's mean return against each."""
import argparse

from stealthrl.agent import load_policy
from stealthrl.harness import Components, ExperimentConfig, parse_seeds, run_clean, summarize, sweep, write_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--env", default="catch")
    ap.add_argument("--victim", required=True)
    ap.add_argument("--budgets", default="1,2,3,4,5")
    ap.add_argument("--episodes", type=int, default=8000)
    ap.add_argument("--craft-mode", choices=("oracle", "full"), default="full")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", default="1..20")
    ap.add_argument("--out", default="runs/antagonist_sweep")
    a = ap.parse_args()
    params = {"budget": 1, "episodes": a.episodes, "craft_mode": a.craft_mode, "seed": a.seed}
    cfg = ExperimentConfig(a.env, a.victim, "antagonist", params, seeds=parse_seeds(a.seeds))
    env = cfg.make_env()
    comp = Components(env, load_policy(a.victim))
    print(f"clean mean return {summarize(run_clean(env, comp.victim, cfg.seeds))[0]:.2f}")
    res = sweep(cfg, "budget", [int(b) for b in a.budgets.split(",")], comp)
    write_report(res.reports, res, a.out)
    for v, m, k in zip(res.values, res.means, res.mean_attack_counts):
        print(f"N={v}: mean return {m:.2f}, attacked steps {k:.2f}")
    raise SystemExit(0 if res.complete else 1)


if __name__ == "__main__":
    main()
