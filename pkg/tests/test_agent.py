import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stealthrl.agent import (
    BcConfig,
    ContinuousPolicy,
    DiscretePolicy,
    ReinforceConfig,
    discounted_returns,
    evaluate,
    new_policy,
    train_bc,
    train_reinforce,
)
from stealthrl.env import make_env
from stealthrl.nn import Mlp


def fixed_logits_policy(logits):
    """Softmax policy whose logits ignore the input: zero weights, bias = logits."""
    logits = np.asarray(logits, dtype=float)
    net = Mlp([1, len(logits)], "tanh", "softmax")
    net.layers()[0][1][...] = logits
    return DiscretePolicy(net)


def test_uniform_greedy_ties_to_lowest_index():
    assert fixed_logits_policy([0.0, 0.0, 0.0]).act(np.zeros(1)) == 0


def test_greedy_picks_mode():
    pol = fixed_logits_policy(np.log([0.1, 0.8, 0.1]))
    assert np.allclose(pol.distribution(np.zeros(1)), [0.1, 0.8, 0.1])
    assert pol.act(np.zeros(1)) == 1


def test_sampling_frequencies():
    pol = fixed_logits_policy(np.log([0.25, 0.75]))
    rng = np.random.default_rng(0)
    draws = [pol.act(np.zeros(1), "sample", rng) for _ in range(10_000)]
    assert abs(np.mean(draws) - 0.75) < 0.02


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=7), st.floats(-50, 50))
def test_greedy_invariant_to_logit_shift(logits, c):
    a = fixed_logits_policy(logits)
    b = fixed_logits_policy(np.array(logits) + c)
    p = a.distribution(np.zeros(1))
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)
    # equal logits stay equal after a shift only up to rounding; compare on distinct maxima
    top = np.sort(logits)[-2:]
    if top[1] - top[0] > 1e-6:
        assert a.act(np.zeros(1)) == b.act(np.zeros(1))


def test_continuous_policy_bounded():
    env = make_env("lanekeep")
    pol = new_policy(env, seed=3)
    pol.net.params *= 50
    out = pol.act(np.array([1.0, 0.7, 1.0, 10.0]))
    assert isinstance(pol, ContinuousPolicy) and np.all(np.abs(out) <= 1)


def test_clone_constant_expert():
    env = make_env("catch")
    pol = train_bc(env, expert=lambda s: 2, cfg=BcConfig(episodes=5, dagger_rounds=0, epochs=20))
    # a clone is only accountable on the states its own rollouts visit
    for seed in range(1, 6):
        s = env.reset(seed)
        while True:
            a = pol.act(env.observe(s))
            assert a == 2
            r = env.step(s, a)
            if r.done:
                break
            s = r.next_state


def test_catch_bc_victim_competent(catch_victim, catch_env):
    stats = evaluate(catch_victim, catch_env, seeds=range(1, 21))
    assert stats.catch_rate >= 0.9


def test_random_policy_crashes_early():
    env = make_env("lanekeep")
    pol = new_policy(env, seed=11)
    pol.net.params *= 20
    assert evaluate(pol, env, 20).mean_length < 200


def test_evaluate_is_deterministic(catch_victim, catch_env):
    assert evaluate(catch_victim, catch_env, 5) == evaluate(catch_victim, catch_env, 5)
    with pytest.raises(ValueError):
        evaluate(catch_victim, catch_env, seeds=[])


def test_discounted_returns():
    assert np.allclose(discounted_returns([1.0, 2.0, 3.0], 0.0), [1.0, 2.0, 3.0])
    assert np.allclose(discounted_returns([1.0, 2.0, 3.0], 0.5), [1 + 1 + 0.75, 2 + 1.5, 3])


def test_reinforce_reproducible_and_learns_lineworld():
    env = make_env("lineworld")
    cfg = ReinforceConfig(episodes=320, batch_episodes=16, lr=0.01, hidden=(16,), seed=4)
    a = train_reinforce(env, cfg)
    b = train_reinforce(env, cfg)
    assert a.curve == b.curve
    assert np.mean(a.curve[-3:]) > np.mean(a.curve[:3])


def test_reinforce_large_entropy_stays_uniform():
    env = make_env("lineworld")
    pol = train_reinforce(env, ReinforceConfig(episodes=160, entropy_coef=50.0, lr=0.01, hidden=(8,), seed=1))
    obs = np.array([[x] for x in range(-5, 6)], float)
    p = pol.distribution(obs)
    ent = -(p * np.log(p)).sum(axis=1)
    assert ent.mean() > 0.95 * np.log(3)


def test_reinforce_needs_discrete():
    with pytest.raises(ValueError):
        train_reinforce(make_env("lanekeep"), ReinforceConfig(episodes=1))
