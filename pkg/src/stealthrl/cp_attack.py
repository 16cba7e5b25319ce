"""Critical-point attack.

At each step the attacker enumerates candidate N-step target-action plans,
rolls each one out for M steps through a predictor (forced plan first, then
the victim's own greedy actions), and compares the divergence ``T`` of the
final predicted state with that of the unattacked rollout.  A plan whose
damage ``|T(s'_{t+M}) - T(s_{t+M})|`` exceeds ``delta`` is executed over the
next N steps by crafting observation perturbations.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .agent import to_env_action
from .env import Env, EnvSpec
from .perturb import PerturbConfig, craft
from .predictor import rollout
from .reports import EpisodeReport

log = logging.getLogger(__name__)

EXHAUSTIVE = "exhaustive"
GRID = "grid"
FIRST_EXCEED = "first_exceed"
MAX_DAM = "max_dam"


class PlannerError(ValueError):
    pass


@dataclass
class CpConfig:
    N: int = 1
    M: int = 3
    delta: float = 0.0
    planner: str = "auto"  # auto picks exhaustive for discrete, grid for continuous
    grid_size: int = 200
    granularity: float = 0.01
    grid_lo: float = -1.0
    cartesian: bool = False
    selection: str = FIRST_EXCEED
    episode_budget: int | None = None
    max_plans: int = 10 ** 6

    def __post_init__(self):
        if self.N < 1 or self.M < self.N:
            raise ValueError(f"need 1 <= N <= M, got N={self.N}, M={self.M}")
        if self.delta < 0 or math.isnan(self.delta):
            raise ValueError("delta must be >= 0")
        if self.granularity <= 0 or self.grid_size < 1:
            raise ValueError("grid needs granularity > 0 and at least one value")
        if self.selection not in (FIRST_EXCEED, MAX_DAM):
            raise ValueError(f"unknown selection {self.selection!r}")
        if self.planner not in ("auto", EXHAUSTIVE, GRID):
            raise ValueError(f"unknown planner {self.planner!r}")
        if self.episode_budget is None:
            self.episode_budget = self.N
        if self.episode_budget < self.N:
            raise ValueError("episode_budget must be >= N")


@dataclass(frozen=True)
class AttackPlan:
    targets: tuple

    def __len__(self):
        return len(self.targets)


@dataclass
class DamReport:
    baseline_T: float
    rows: list = field(default_factory=list)  # (plan, predicted_T, dam)
    chosen: AttackPlan | None = None

    @property
    def dams(self) -> list:
        return [r[2] for r in self.rows]

    @property
    def max_dam(self) -> float:
        return max(self.dams, default=0.0)


def grid_values(cfg: CpConfig) -> list:
    return [cfg.grid_lo + i * cfg.granularity for i in range(cfg.grid_size)]


def enumerate_strategies(spec: EnvSpec, cfg: CpConfig) -> list:
    """All candidate plans, in the order ``scan`` visits them."""
    planner = cfg.planner
    if planner == "auto":
        planner = EXHAUSTIVE if spec.discrete else GRID
    if spec.discrete != (planner == EXHAUSTIVE):
        raise PlannerError(f"{planner} planner does not fit a {'discrete' if spec.discrete else 'continuous'} action space")
    if spec.discrete:
        count = spec.n_actions ** cfg.N
        if count > cfg.max_plans:
            raise PlannerError(f"{count} plans exceed the cap of {cfg.max_plans}; lower N")
        return [AttackPlan(p) for p in itertools.product(range(spec.n_actions), repeat=cfg.N)]
    vals = grid_values(cfg)
    bad = [v for v in vals if not spec.action_lo - 1e-9 <= v <= spec.action_hi + 1e-9]
    if bad:
        raise PlannerError(f"grid value {bad[0]} outside the action range")
    if not cfg.cartesian:
        return [AttackPlan((v,) * cfg.N) for v in vals]
    count = len(vals) ** cfg.N
    if count > cfg.max_plans:
        raise PlannerError(f"{count} plans exceed the cap of {cfg.max_plans}; use a coarser grid or repeated-value plans")
    return [AttackPlan(p) for p in itertools.product(vals, repeat=cfg.N)]


def _plan_actions(env: Env, plan: AttackPlan) -> list:
    if env.spec.discrete:
        return [int(a) for a in plan.targets]
    return [np.array([float(a)]) for a in plan.targets]


def assess_plan(predictor, policy, env: Env, state, plan: AttackPlan, M: int, baseline_T: float | None = None):
    """Return ``(dam, predicted_T, baseline_T)`` for one plan."""
    if len(plan) > M:
        raise ValueError(f"plan of length {len(plan)} exceeds horizon M={M}")
    if baseline_T is None:
        baseline_T = env.divergence(rollout(predictor, policy, state, (), M, env.observe)[-1])
    predicted_T = env.divergence(rollout(predictor, policy, state, _plan_actions(env, plan), M, env.observe)[-1])
    return abs(predicted_T - baseline_T), predicted_T, baseline_T


class DamCache:
    """Memo of full DAM tables keyed by state bytes; valid for fixed models and (N, M, planner)."""

    def __init__(self):
        self.tables = {}

    def key(self, state) -> bytes:
        return np.asarray(state, dtype=np.float64).tobytes()


def dam_table(state, cfg: CpConfig, predictor, policy, env: Env, plans=None, cache: DamCache | None = None):
    """Baseline T and the (predicted_T, dam) of every plan, in enumeration order."""
    if cache is not None:
        hit = cache.tables.get(cache.key(state))
        if hit is not None:
            return hit
    plans = plans if plans is not None else enumerate_strategies(env.spec, cfg)
    base = env.divergence(rollout(predictor, policy, state, (), cfg.M, env.observe)[-1])
    rows = []
    for plan in plans:
        dam, pred_T, _ = assess_plan(predictor, policy, env, state, plan, cfg.M, base)
        rows.append((plan, pred_T, dam))
    out = (base, rows)
    if cache is not None:
        cache.tables[cache.key(state)] = out
    return out


def scan(state, cfg: CpConfig, predictor, policy, env: Env, plans=None, cache: DamCache | None = None,
         full_report: bool = False):
    """Pick an attack plan at ``state`` or return ``None``.

    ``first_exceed`` returns the first plan (enumeration order) whose DAM is
    strictly above ``delta``; ``max_dam`` returns the highest-DAM plan, ties to
    the earliest, if it is above ``delta``.  Returns ``(plan | None, DamReport)``.
    """
    plans = plans if plans is not None else enumerate_strategies(env.spec, cfg)
    if cache is not None or full_report or cfg.selection == MAX_DAM:
        base, rows = dam_table(state, cfg, predictor, policy, env, plans, cache)
        report = DamReport(base, list(rows))
        if cfg.selection == FIRST_EXCEED:
            report.chosen = next((p for p, _, d in rows if d > cfg.delta), None)
        else:
            best = max(range(len(rows)), key=lambda i: (rows[i][2], -i), default=None)
            if best is not None and rows[best][2] > cfg.delta:
                report.chosen = rows[best][0]
        return report.chosen, report
    # literal early-exit scan
    base = env.divergence(rollout(predictor, policy, state, (), cfg.M, env.observe)[-1])
    report = DamReport(base)
    for plan in plans:
        dam, pred_T, _ = assess_plan(predictor, policy, env, state, plan, cfg.M, base)
        report.rows.append((plan, pred_T, dam))
        if dam > cfg.delta:
            report.chosen = plan
            break
    return report.chosen, report


def run_cp_episode(env: Env, policy, predictor, cfg: CpConfig, perturb_cfg: PerturbConfig, seed: int,
                   craft_mode: str = "full", cache: DamCache | None = None) -> EpisodeReport:
    """One seeded episode under the critical-point attack.

    ``craft_mode="oracle"`` forces the target action instead of crafting.  A
    failed craft is recorded and the victim sees the clean observation; the
    attempt still counts against ``episode_budget``.
    """
    if craft_mode not in ("full", "oracle"):
        raise ValueError(f"unknown craft mode {craft_mode!r}")
    plans = enumerate_strategies(env.spec, cfg)
    rep = EpisodeReport(seed, "cp", cfg.delta)
    s = env.reset(seed)
    pending: list = []
    used = 0
    t = 0
    while True:
        obs = env.observe(s)
        if not pending and math.isfinite(cfg.delta) and used + cfg.N <= cfg.episode_budget:
            plan, dr = scan(s, cfg, predictor, policy, env, plans, cache)
            if plan is not None:
                pending = _plan_actions(env, plan)
                rep.diagnostics.append(max(d for p, _, d in dr.rows if p == plan))
        if pending:
            target = pending.pop(0)
            used += 1
            rep.attacked_steps.append(t)
            if craft_mode == "oracle":
                a = target
                rep.craft_success.append(True)
                rep.linf.append(0.0)
                rep.l2.append(0.0)
            else:
                cr = craft(policy, obs, target, perturb_cfg, env.spec)
                rep.craft_success.append(cr.success)
                rep.linf.append(cr.linf)
                rep.l2.append(cr.l2)
                a = policy.act(cr.perturbed if cr.success else obs)
                if not cr.success:
                    log.debug("seed %d step %d: crafting toward %s failed", seed, t, target)
        else:
            a = policy.act(obs)
        assert used <= cfg.episode_budget, "attack budget exceeded"
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
