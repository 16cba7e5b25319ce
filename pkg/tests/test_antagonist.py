import numpy as np
import pytest

from stealthrl.antagonist import (
    AntagonistPolicy,
    AntTrainConfig,
    ant_decide,
    params_digest,
    run_antagonist_episode,
    train_antagonist,
    write_curve,
)
from stealthrl.harness import run_clean
from stealthrl.nn import Mlp
from stealthrl.perturb import PerturbConfig


def zero_antagonist(env, gate_bias=0.0):
    ant = AntagonistPolicy.create(env, hidden=(4,), seed=0, gate_bias=gate_bias)
    ant.net.params[:] = 0.0
    ant.net.layers()[-1][1][0] = gate_bias
    return ant


def test_zero_net_gate_is_half_and_closed(catch_env, catch_victim):
    ant = zero_antagonist(catch_env)
    p, a = ant_decide(ant, catch_env.observe(catch_env.reset(1)))
    assert p == 0.5 and a == 0
    _, rep = run_antagonist_episode(catch_env, catch_victim, ant, 3, PerturbConfig(), 1, "oracle")
    assert rep.attack_count == 0


def test_decide_is_deterministic_and_normalized(catch_env):
    ant = AntagonistPolicy.create(catch_env, seed=4)
    obs = catch_env.observe(catch_env.reset(5))
    assert ant_decide(ant, obs) == ant_decide(ant, obs)
    p, probs = ant.heads(obs)
    assert 0 <= p <= 1 and abs(probs.sum() - 1) < 1e-12


def test_closed_gate_matches_clean_return(catch_env, catch_victim):
    ant = zero_antagonist(catch_env, gate_bias=-50.0)
    clean = run_clean(catch_env, catch_victim, [1, 2, 3])
    for rep_clean in clean:
        _, rep = run_antagonist_episode(catch_env, catch_victim, ant, 3, PerturbConfig(), rep_clean.seed, "full")
        assert rep.attack_count == 0 and rep.ret == rep_clean.ret


def test_open_gate_stops_at_budget(catch_env, catch_victim):
    ant = zero_antagonist(catch_env, gate_bias=50.0)
    exp, rep = run_antagonist_episode(catch_env, catch_victim, ant, 3, PerturbConfig(), 1, "oracle")
    assert rep.attacked_steps == [0, 1, 2]
    assert [e.attacked for e in exp[:4]] == [True, True, True, False]
    assert sum(e.r_adv for e in exp) == -rep.ret


def test_continuous_antagonist_runs(lanekeep_env, lanekeep_victim):
    ant = AntagonistPolicy.create(lanekeep_env, hidden=(8,), gate_bias=50.0)
    exp, rep = run_antagonist_episode(lanekeep_env, lanekeep_victim, ant, 2, PerturbConfig(), 1, "full")
    assert rep.attack_count == 2 and all(0 <= x <= 0.1 + 1e-12 for x in rep.linf)
    assert np.all(np.abs(exp[0].target) <= 1)


def test_training_needs_rng(catch_env, catch_victim):
    with pytest.raises(ValueError):
        run_antagonist_episode(catch_env, catch_victim, zero_antagonist(catch_env), 1, PerturbConfig(), 1,
                               training=True)


def test_config_validation():
    with pytest.raises(ValueError):
        AntTrainConfig(budget=0)
    with pytest.raises(ValueError):
        AntTrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        AntTrainConfig(craft_mode="pgd")
    with pytest.raises(ValueError):
        AntagonistPolicy(Mlp.init([2, 3], head="softmax"), True)


def test_short_training_leaves_victim_untouched(catch_env, catch_victim, tmp_path):
    before = params_digest(catch_victim.net)
    res = train_antagonist(catch_env, catch_victim, AntTrainConfig(episodes=40, batch_episodes=10, seed=3))
    assert params_digest(catch_victim.net) == before
    assert len(res.curve) == 4 and all(row[2] <= 3 for row in res.curve)
    path = tmp_path / "curve.csv"
    write_curve(res.curve, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,mean_return,mean_attacks_per_episode" and len(lines) == 5
    again = train_antagonist(catch_env, catch_victim, AntTrainConfig(episodes=40, batch_episodes=10, seed=3))
    assert np.array_equal(again.antagonist.net.params, res.antagonist.net.params)


def test_gamma_zero_credits_immediate_reward_only():
    from stealthrl.antagonist import _returns_to_go

    r = [0.0, -1.0, 1.0]
    assert list(_returns_to_go(r, 0.0)) == r
    assert _returns_to_go(r, 0.5)[0] == pytest.approx(-0.5 + 0.25)


def test_save_load(tmp_path, catch_env):
    ant = AntagonistPolicy.create(catch_env, seed=2)
    ant.save(tmp_path / "a.srlm")
    back = AntagonistPolicy.load(tmp_path / "a.srlm")
    obs = catch_env.observe(catch_env.reset(0))
    assert ant_decide(back, obs) == ant_decide(ant, obs) and back.discrete


def test_continuous_training_smoke(lanekeep_env, lanekeep_victim):
    cfg = AntTrainConfig(budget=1, episodes=4, batch_episodes=2, hidden=(8,))
    res = train_antagonist(lanekeep_env, lanekeep_victim, cfg)
    assert len(res.curve) == 2 and not res.antagonist.discrete
