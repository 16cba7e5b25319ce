"""Train the behaviour-cloned victims used by the experiments and save them under runs/."""
import argparse
import json
from dataclasses import asdict
from pathlib import Path

from stealthrl.agent import BcConfig, evaluate, train_bc
from stealthrl.env import make_env
from stealthrl.nn import save_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--envs", default="catch,lanekeep,lanekeep7")
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for env_id in a.envs.split(","):
        env = make_env(env_id)
        pol = train_bc(env, cfg=BcConfig(seed=a.seed))
        path = out / f"{env_id}_victim.srlm"
        save_model(pol.net, path)
        print(json.dumps({"env": env_id, "model": str(path), **asdict(evaluate(pol, env))}))


if __name__ == "__main__":
    main()
