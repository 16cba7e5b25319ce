"""Experiment orchestration: baselines, sweeps, reports and config files.

Config files are flat ``key = value`` text.  Recognized keys::

    env.id = lanekeep            # required
    env.victim = runs/victim.srlm
    env.<field> = value          # overrides of the env config dataclass
    method.name = cp             # clean | cp | antagonist | uniform | every_n | st
    method.<param> = value       # delta, N, M, selection, predictor, n, c, budget, ...
    perturb.<field> = value      # PerturbConfig fields
    seeds = 1..20                # or a comma list

Blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .agent import load_policy, to_env_action
from .antagonist import AntagonistPolicy, AntTrainConfig, run_antagonist_episode, train_antagonist
from .cp_attack import CpConfig, DamCache, run_cp_episode, scan
from .env import Env, make_env
from .perturb import PerturbConfig, craft
from .predictor import load_predictor
from .reports import EpisodeReport

log = logging.getLogger(__name__)

METHODS = ("clean", "cp", "antagonist", "uniform", "every_n", "st")
REQUIRED_PARAMS = {"cp": ("delta",), "every_n": ("n",), "st": ("c",), "antagonist": ("budget",)}
AXES = {"delta": "cp", "c": "st", "budget": "antagonist", "n": "every_n"}
DEFAULT_SEEDS = tuple(range(1, 21))
CSV_HEADER = ("seed", "method", "param", "return", "length", "attack_count", "done_cause", "max_linf")


class ConfigError(ValueError):
    pass


class UnsupportedMethodError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


@dataclass
class ExperimentConfig:
    env_id: str
    victim: str = ""
    method: str = "clean"
    params: dict = field(default_factory=dict)
    env_overrides: dict = field(default_factory=dict)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    seeds: tuple = DEFAULT_SEEDS

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        missing = [k for k in REQUIRED_PARAMS.get(self.method, ()) if k not in self.params]
        if missing:
            raise ConfigError(f"method {self.method} is missing parameters {missing}")

    def make_env(self) -> Env:
        return make_env(self.env_id, self.env_overrides)


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def parse_seeds(text: str) -> tuple:
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        seeds = tuple(range(int(a), int(b) + 1))
    else:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    if not seeds:
        raise ConfigError(f"empty seed specification {text!r}")
    return seeds


def parse_config(text: str) -> ExperimentConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    if "env.id" not in raw:
        raise ConfigError("config needs env.id")
    env_over, params, pert = {}, {}, {}
    victim, method, seeds = "", "clean", DEFAULT_SEEDS
    perturb_fields = {f.name for f in fields(PerturbConfig)}
    for key, value in raw.items():
        if key == "env.id":
            continue
        if key == "env.victim":
            victim = value
        elif key.startswith("env."):
            env_over[key[4:]] = parse_value(value)
        elif key == "method.name":
            method = value
        elif key.startswith("method."):
            params[key[7:]] = parse_value(value)
        elif key.startswith("perturb."):
            name = key[8:]
            if name not in perturb_fields:
                raise ConfigError(f"unknown perturb key {key!r}")
            pert[name] = parse_value(value)
        elif key == "seeds":
            seeds = parse_seeds(value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ExperimentConfig(raw["env.id"], victim, method, params, env_over, PerturbConfig(**pert), seeds)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: ExperimentConfig) -> str:
    lines = [f"env.id = {cfg.env_id}"]
    if cfg.victim:
        lines.append(f"env.victim = {cfg.victim}")
    lines += [f"env.{k} = {v}" for k, v in sorted(cfg.env_overrides.items())]
    lines.append(f"method.name = {cfg.method}")
    lines += [f"method.{k} = {v}" for k, v in sorted(cfg.params.items())]
    lines += [f"perturb.{f.name} = {getattr(cfg.perturb, f.name)}" for f in fields(PerturbConfig)]
    lines.append("seeds = " + ",".join(str(s) for s in cfg.seeds))
    return "\n".join(lines) + "\n"


def validate_fairness(configs) -> None:
    """Configs compared side by side must share victim, env constants, seeds and perturbation settings."""
    configs = list(configs)
    if not configs:
        return
    ref = configs[0]
    for c in configs[1:]:
        for name in ("env_id", "victim", "env_overrides", "seeds", "perturb"):
            if getattr(c, name) != getattr(ref, name):
                raise ConfigError(f"unfair comparison: {c.method} differs from {ref.method} in {name}")


# ---------------------------------------------------------------------------
# scheduled baselines


def _scheduled_episode(env: Env, victim, perturb_cfg: PerturbConfig, seed: int, method: str, param,
                       decide) -> EpisodeReport:
    """Shared loop: ``decide(t, obs) -> (target | None, diagnostic)``."""
    rep = EpisodeReport(seed, method, param)
    s = env.reset(seed)
    t = 0
    while True:
        obs = env.observe(s)
        target, diag = decide(t, obs)
        if target is not None:
            cr = craft(victim, obs, target, perturb_cfg, env.spec)
            rep.attacked_steps.append(t)
            rep.craft_success.append(cr.success)
            rep.linf.append(cr.linf)
            rep.l2.append(cr.l2)
            rep.diagnostics.append(diag)
            a = victim.act(cr.perturbed if cr.success else obs)
        else:
            a = victim.act(obs)
        r = env.step(s, to_env_action(env, a))
        rep.rewards.append(r.reward)
        t += 1
        if r.done:
            rep.done_cause = r.done_cause
            break
        s = r.next_state
    rep.ret = float(sum(rep.rewards))
    rep.length = t
    return rep


def worst_target(victim, obs):
    """Least-preferred action (discrete) or the action bound farthest from the policy output."""
    if victim.discrete:
        return int(np.argmin(victim.net.logits(obs)))
    a = victim.act(obs)
    return np.where(a >= 0, -1.0, 1.0)


def run_clean(env: Env, victim, seeds=DEFAULT_SEEDS) -> list:
    return [_scheduled_episode(env, victim, PerturbConfig(), s, "clean", "", lambda t, o: (None, None))
            for s in seeds]


def run_every_n(env: Env, victim, n: int, perturb_cfg: PerturbConfig, seeds=DEFAULT_SEEDS,
                method: str = "every_n") -> list:
    """Attack at every step ``t`` with ``t % n == 0``, targeting the worst action."""
    if n < 1:
        raise ValueError("n must be >= 1")
    param = "" if method == "uniform" else n

    def decide(t, obs):
        return (worst_target(victim, obs), None) if t % n == 0 else (None, None)

    return [_scheduled_episode(env, victim, perturb_cfg, s, method, param, decide) for s in seeds]


def run_uniform(env: Env, victim, perturb_cfg: PerturbConfig, seeds=DEFAULT_SEEDS) -> list:
    return run_every_n(env, victim, 1, perturb_cfg, seeds, method="uniform")


def preference_gap(victim, obs) -> float:
    p = victim.distribution(obs)
    return float(p.max() - p.min())


def run_st(env: Env, victim, c_threshold: float, perturb_cfg: PerturbConfig, seeds=DEFAULT_SEEDS) -> list:
    """Strategically-timed baseline: attack when the preference gap exceeds ``c_threshold``."""
    if not getattr(victim, "discrete", False):
        raise UnsupportedMethodError("strategically-timed attack needs a discrete (softmax) victim")

    def decide(t, obs):
        p = victim.distribution(obs)
        c = float(p.max() - p.min())
        return (int(np.argmin(p)), c) if c > c_threshold else (None, c)

    return [_scheduled_episode(env, victim, perturb_cfg, s, "st", c_threshold, decide) for s in seeds]


# ---------------------------------------------------------------------------
# dispatch and sweeps


@dataclass
class Components:
    """Loaded models shared across the cells of one experiment."""

    env: Env
    victim: object
    predictor: object = None
    antagonist: AntagonistPolicy | None = None
    dam_cache: DamCache = field(default_factory=DamCache)
    trained_antagonists: dict = field(default_factory=dict)


def load_components(cfg: ExperimentConfig, victim=None) -> Components:
    env = cfg.make_env()
    if victim is None:
        if not cfg.victim:
            raise ConfigError("env.victim is required")
        victim = load_policy(cfg.victim)
    comp = Components(env, victim)
    if cfg.method == "cp":
        comp.predictor = load_predictor(str(cfg.params.get("predictor", "oracle")), env)
    if cfg.method == "antagonist" and "antagonist" in cfg.params:
        comp.antagonist = AntagonistPolicy.load(cfg.params["antagonist"])
    return comp


def cp_config(params: dict) -> CpConfig:
    names = {f.name for f in fields(CpConfig)}
    kw = {k: v for k, v in params.items() if k in names}
    return CpConfig(**kw)


def ant_train_config(params: dict, budget: int) -> AntTrainConfig:
    names = {f.name for f in fields(AntTrainConfig)} - {"budget"}
    kw = {k: v for k, v in params.items() if k in names}
    if "hidden" in kw and not isinstance(kw["hidden"], tuple):
        kw["hidden"] = tuple(int(h) for h in str(kw["hidden"]).split("x"))
    return AntTrainConfig(budget=int(budget), **kw)


def run_method(cfg: ExperimentConfig, comp: Components) -> list:
    env, victim, p = comp.env, comp.victim, cfg.params
    if cfg.method == "clean":
        return run_clean(env, victim, cfg.seeds)
    if cfg.method == "uniform":
        return run_uniform(env, victim, cfg.perturb, cfg.seeds)
    if cfg.method == "every_n":
        return run_every_n(env, victim, int(p["n"]), cfg.perturb, cfg.seeds)
    if cfg.method == "st":
        return run_st(env, victim, float(p["c"]), cfg.perturb, cfg.seeds)
    if cfg.method == "cp":
        cp = cp_config(p)
        mode = str(p.get("craft_mode", "full"))
        if comp.predictor is None:
            comp.predictor = load_predictor(str(p.get("predictor", "oracle")), env)
        return [run_cp_episode(env, victim, comp.predictor, cp, cfg.perturb, s, mode, comp.dam_cache)
                for s in cfg.seeds]
    if cfg.method == "antagonist":
        budget = int(p["budget"])
        ant = comp.antagonist
        if ant is None:
            if budget not in comp.trained_antagonists:
                res = train_antagonist(env, victim, ant_train_config(p, budget),
                                       replace(cfg.perturb, restarts=0))
                comp.trained_antagonists[budget] = res.antagonist
            ant = comp.trained_antagonists[budget]
        mode = str(p.get("eval_craft_mode", "full"))
        return [run_antagonist_episode(env, victim, ant, budget, cfg.perturb, s, mode)[1] for s in cfg.seeds]
    raise ConfigError(f"unknown method {cfg.method!r}")


@dataclass
class SweepResult:
    axis: str
    values: list
    means: list = field(default_factory=list)
    stds: list = field(default_factory=list)
    mean_attack_counts: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return _json_safe({"axis": self.axis, "values": self.values, "means": self.means, "stds": self.stds,
                           "mean_attack_count": self.mean_attack_counts,
                           "failures": {str(k): v for k, v in self.failures.items()}})


def _json_safe(obj):
    """Strict JSON has no inf/nan: infinities become strings, nan becomes null."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else str(obj)
    return obj


def summarize(reports) -> tuple:
    rets = [r.ret for r in reports]
    return float(np.mean(rets)), float(np.std(rets)), float(np.mean([r.attack_count for r in reports]))


def sweep(cfg: ExperimentConfig, axis: str, values, comp: Components | None = None) -> SweepResult:
    """Run ``cfg`` once per axis value over all seeds; failed cells are recorded, not raised."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(AXES)}")
    if AXES[axis] != cfg.method:
        raise ConfigError(f"axis {axis} sweeps method {AXES[axis]}, config has {cfg.method}")
    comp = comp or load_components(cfg)
    res = SweepResult(axis, values)
    for v in values:
        cell = replace(cfg, params={**cfg.params, axis: v})
        try:
            reports = run_method(cell, comp)
        except Exception as exc:  # keep sweeping; the failure is reported per cell
            log.error("sweep cell %s=%s failed: %s", axis, v, exc)
            res.failures[v] = f"{type(exc).__name__}: {exc}"
            res.means.append(float("nan"))
            res.stds.append(float("nan"))
            res.mean_attack_counts.append(float("nan"))
            continue
        m, s, a = summarize(reports)
        res.means.append(m)
        res.stds.append(s)
        res.mean_attack_counts.append(a)
        res.reports.extend(reports)
    return res


# ---------------------------------------------------------------------------
# focused studies


def tune_threshold(env: Env, victim, cp: CpConfig, candidates, perturb_cfg: PerturbConfig, seeds,
                   predictor=None, score=None, cache: DamCache | None = None):
    """Pick the CP threshold with the lowest ``score(reports)`` (default: mean return) on tuning seeds.

    Ties go to the earlier candidate.  Returns ``(best_delta, {delta: score})``.
    """
    from .predictor import OraclePredictor

    predictor = predictor or OraclePredictor(env)
    cache = cache if cache is not None else DamCache()
    score = score or (lambda reps: float(np.mean([r.ret for r in reps])))
    table = {}
    for d in candidates:
        cfg = replace(cp, delta=d)
        table[d] = score([run_cp_episode(env, victim, predictor, cfg, perturb_cfg, s, "full", cache) for s in seeds])
    best = min(table, key=lambda d: table[d])
    return best, table


def conversion_study(env: Env, victim, cfg: CpConfig, perturb_cfg: PerturbConfig, seeds, max_instances=50,
                     predictor=None):
    """Scan clean victim trajectories; at each trigger whose clean continuation earns a positive
    reward event, execute the plan (with real crafting) and check whether that event turns negative.

    Returns ``(instances, conversions)``.
    """
    from .predictor import OraclePredictor

    predictor = predictor or OraclePredictor(env)

    def next_event(s, forced):
        forced = list(forced)
        while True:
            a = forced.pop(0) if forced else victim.act(env.observe(s))
            r = env.step(s, to_env_action(env, a))
            if r.reward != 0 or r.done:
                return r.reward
            s = r.next_state

    instances = conversions = 0
    for seed in seeds:
        s = env.reset(seed)
        while instances < max_instances:
            plan, _ = scan(s, cfg, predictor, victim, env)
            if plan is not None and next_event(s, []) > 0:
                ss, acts = s, []
                for target in plan.targets:
                    cr = craft(victim, env.observe(ss), target, perturb_cfg, env.spec)
                    a = victim.act(cr.perturbed if cr.success else env.observe(ss))
                    acts.append(a)
                    ss = env.step(ss, to_env_action(env, a)).next_state
                instances += 1
                conversions += next_event(s, acts) < 0
            r = env.step(s, to_env_action(env, victim.act(env.observe(s))))
            if r.done:
                break
            s = r.next_state
        if instances >= max_instances:
            break
    return instances, conversions


# ---------------------------------------------------------------------------
# reports


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def sort_reports(reports) -> list:
    return sorted(reports, key=lambda r: (r.method, _fmt(r.param), r.seed))


def episodes_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sort_reports(reports):
        w.writerow([r.seed, r.method, _fmt(r.param), repr(float(r.ret)), r.length, r.attack_count,
                    r.done_cause, repr(float(r.max_linf))])
    return buf.getvalue()


def read_episodes_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["seed"] = int(row["seed"])
        row["return"] = float(row["return"])
        row["length"] = int(row["length"])
        row["attack_count"] = int(row["attack_count"])
        row["max_linf"] = float(row["max_linf"])
    return rows


def plot_data(sweep_result: SweepResult | None, reports) -> dict:
    figs = {}
    if sweep_result is not None:
        figs["sweep_return"] = {"x": sweep_result.values, "y": sweep_result.means, "err": sweep_result.stds,
                                "xlabel": sweep_result.axis, "ylabel": "mean return"}
        figs["sweep_attacks"] = {"x": sweep_result.values, "y": sweep_result.mean_attack_counts, "err": None,
                                 "xlabel": sweep_result.axis, "ylabel": "mean attacked steps"}
    by_method = {}
    for r in sort_reports(reports):
        by_method.setdefault(r.method, []).append(r)
    figs["per_method"] = {m: {"x": [r.seed for r in rs], "y": [r.ret for r in rs]} for m, rs in by_method.items()}
    return figs


def write_report(reports, sweep_result: SweepResult | None, out_dir) -> dict:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"episodes": out / "episodes.csv", "sweep": out / "sweep.json", "plotdata": out / "plotdata.json"}
        paths["episodes"].write_text(episodes_csv(reports))
        payload = sweep_result.to_dict() if sweep_result is not None else None
        paths["sweep"].write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")
        paths["plotdata"].write_text(json.dumps(_json_safe(plot_data(sweep_result, reports)), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"could not write report under {out}: {exc}") from exc
    return paths
