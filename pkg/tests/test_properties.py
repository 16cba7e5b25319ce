"""Randomized invariants; each property runs at least 1000 examples."""
from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from stealthrl.agent import DiscretePolicy, new_policy
from stealthrl.antagonist import AntagonistPolicy, run_antagonist_episode
from stealthrl.cp_attack import CpConfig, run_cp_episode, scan
from stealthrl.env import EnvSpec, make_env
from stealthrl.nn import Mlp
from stealthrl.perturb import PerturbConfig, craft
from stealthrl.predictor import OraclePredictor

PROPS = settings(max_examples=1000, deadline=None)
LINEWORLD = make_env("lineworld")
ORACLE = OraclePredictor(LINEWORLD)
PERTURB = PerturbConfig()
_victims = {}
CALLS = Counter()  # examples actually executed, per property


def victim(seed):
    if seed not in _victims:
        pol = new_policy(LINEWORLD, hidden=(8,), seed=seed)
        pol.net.params *= 4.0  # sharpen so greedy actions vary with x
        _victims[seed] = pol
    return _victims[seed]


def antagonist(seed, gate_bias):
    return AntagonistPolicy.create(LINEWORLD, hidden=(4,), seed=seed, gate_bias=gate_bias)


@PROPS
@given(st.integers(0, 7), st.integers(0, 7), st.floats(-3, 3), st.integers(1, 25), st.integers(0, 10_000))
def test_antagonist_budget_and_reward_negation(vseed, aseed, bias, budget, seed):
    CALLS["antagonist_budget_and_reward_negation"] += 1
    exp, rep = run_antagonist_episode(LINEWORLD, victim(vseed), antagonist(aseed, bias), budget, PERTURB, seed,
                                      "oracle")
    assert rep.attack_count <= budget
    assert sum(e.attacked for e in exp) == rep.attack_count
    assert all(e.r_adv == -r for e, r in zip(exp, rep.rewards))
    used = 0
    for e in exp:
        assert e.attacked == (e.p > 0.5 and used < budget)
        used += e.attacked


@PROPS
@given(st.integers(0, 7), st.integers(1, 2), st.integers(0, 2), st.integers(0, 4),
       st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.5]), st.sampled_from(["first_exceed", "max_dam"]),
       st.integers(0, 10_000))
def test_cp_budget_cap(vseed, n, extra_m, extra_budget, delta, selection, seed):
    CALLS["cp_budget_cap"] += 1
    cfg = CpConfig(N=n, M=n + extra_m, delta=delta, selection=selection, episode_budget=n + extra_budget)
    rep = run_cp_episode(LINEWORLD, victim(vseed), ORACLE, cfg, PERTURB, seed, "oracle")
    assert rep.attack_count <= cfg.episode_budget
    assert len(rep.diagnostics) * n == rep.attack_count
    assert all(d >= delta for d in rep.diagnostics)


@PROPS
@given(st.integers(0, 7), st.integers(-8, 8), st.integers(1, 2), st.floats(0, 4), st.floats(0, 4),
       st.sampled_from(["first_exceed", "max_dam"]))
def test_threshold_monotonicity(vseed, x, n, d1, d2, selection):
    CALLS["threshold_monotonicity"] += 1
    lo, hi = sorted((d1, d2))
    s = LINEWORLD.make_state(float(x))
    fired_hi, rep_hi = scan(s, CpConfig(N=n, M=2, delta=hi, selection=selection), ORACLE, victim(vseed), LINEWORLD,
                            full_report=True)
    fired_lo, rep_lo = scan(s, CpConfig(N=n, M=2, delta=lo, selection=selection), ORACLE, victim(vseed), LINEWORLD,
                            full_report=True)
    assert rep_lo.rows == rep_hi.rows
    if fired_hi is not None:
        assert fired_lo is not None
    if selection == "max_dam" and fired_hi is not None:
        assert fired_lo == fired_hi


BOX = EnvSpec("box", 3, 3, np.array([-1.0, 0.0, -5.0]), np.array([1.0, 2.0, 5.0]), 10, 3)
_box_victims = [DiscretePolicy(Mlp.init([3, 6, 3], "tanh", "softmax", seed=k)) for k in range(5)]
FAST = dict(iters=25, restarts=1)


@PROPS
@given(st.integers(0, 4), st.lists(st.floats(0, 1), min_size=3, max_size=3), st.integers(0, 2),
       st.floats(0, 0.5), st.sampled_from(["cw", "fgsm"]))
def test_perturbation_clamping(k, frac, target, eps, method):
    CALLS["perturbation_clamping"] += 1
    obs = BOX.obs_lo + np.array(frac) * BOX.obs_width
    res = craft(_box_victims[k], obs, target, PerturbConfig(eps_inf=eps, method=method, **FAST), BOX)
    assert np.all(res.perturbed >= BOX.obs_lo) and np.all(res.perturbed <= BOX.obs_hi)
    assert np.max(np.abs(res.delta / BOX.obs_width)) <= eps + 1e-12
    assert res.linf <= eps + 1e-12
    assert np.array_equal(res.perturbed, obs + res.delta)
