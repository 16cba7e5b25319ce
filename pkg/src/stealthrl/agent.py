"""Victim policies and their trainers.

Victims are cloned from each environment's scripted expert by default
(``train_bc``); ``train_reinforce`` gives a policy-gradient-trained variant for
discrete environments.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .env import CRASH, MISS, Env
from .nn import Mlp, OptConfig, load_model, optimizer_step, softmax

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


class DiscretePolicy:
    discrete = True

    def __init__(self, net: Mlp):
        if net.head != "softmax":
            raise ValueError("discrete policy needs a softmax head")
        self.net = net

    @property
    def n_actions(self) -> int:
        return self.net.out_dim

    def distribution(self, obs) -> np.ndarray:
        return self.net.forward(obs)

    def greedy(self, obs) -> int:
        # np.argmax breaks ties toward the lowest index
        return int(np.argmax(self.net.logits(obs)))

    def act(self, obs, mode="greedy", rng=None):
        if mode == "greedy":
            return self.greedy(obs)
        p = self.distribution(obs)
        return int(rng.choice(len(p), p=p))


class ContinuousPolicy:
    discrete = False

    def __init__(self, net: Mlp):
        if net.head != "tanh":
            raise ValueError("continuous policy needs a tanh head")
        self.net = net

    def act(self, obs, mode="greedy", rng=None) -> np.ndarray:
        return self.net.forward(obs)


def act(policy, obs, mode="greedy", rng=None):
    return policy.act(obs, mode, rng)


def policy_from_net(net: Mlp):
    return DiscretePolicy(net) if net.head == "softmax" else ContinuousPolicy(net)


def load_policy(path):
    return policy_from_net(load_model(path))


def new_policy(env: Env, hidden=(64, 64), seed=0):
    s = env.spec
    if s.discrete:
        return DiscretePolicy(Mlp.init([s.obs_dim, *hidden, s.n_actions], "tanh", "softmax", seed))
    return ContinuousPolicy(Mlp.init([s.obs_dim, *hidden, s.action_dim], "tanh", "tanh", seed))


def to_env_action(env: Env, action):
    """Clip a policy output into something ``env.step`` accepts."""
    if env.spec.discrete:
        return int(action)
    return np.clip(np.atleast_1d(action), env.spec.action_lo, env.spec.action_hi)


# ---------------------------------------------------------------------------
# behavior cloning


@dataclass
class BcConfig:
    hidden: tuple = (64, 64)
    episodes: int = 40
    dagger_rounds: int = 3
    action_noise: float = 0.3
    epochs: int = 150
    batch: int = 256
    lr: float = 3e-3
    seed: int = 0


def _collect_states(env: Env, actor, episodes, seed, noise, rng):
    """Roll ``actor`` with occasional random actions; return visited full states."""
    out = []
    for ep in range(episodes):
        s = env.reset(seed * 100_003 + ep)
        while True:
            out.append(s)
            a = actor(s)
            if rng.random() < noise:
                if env.spec.discrete:
                    a = int(rng.integers(env.spec.n_actions))
                else:
                    a = np.clip(np.atleast_1d(a) + rng.normal(0, 0.5, env.spec.action_dim), -1, 1)
            r = env.step(s, to_env_action(env, a))
            if r.done:
                break
            s = r.next_state
    return np.array(out)


def _fit(policy, X, Y, cfg: BcConfig, rng, trace):
    net = policy.net
    opt = OptConfig(lr=cfg.lr)
    state = None
    n = len(X)
    for epoch in range(cfg.epochs):
        idx = rng.permutation(n)
        total = 0.0
        lr = cfg.lr * (0.5 * (1 + np.cos(np.pi * epoch / cfg.epochs)) * 0.95 + 0.05)
        opt.lr = lr
        for i in range(0, n, cfg.batch):
            b = idx[i: i + cfg.batch]
            x = X[b]
            if policy.discrete:
                p = softmax(net.logits(x))
                onehot = np.eye(net.out_dim)[Y[b]]
                loss = -np.log(p[np.arange(len(b)), Y[b]] + 1e-300).sum()
                g = net.backward(x, (p - onehot) / len(b), through_head=False)
            else:
                y = net.forward(x)
                diff = y - Y[b]
                loss = (diff ** 2).sum()
                g = net.backward(x, 2 * diff / len(b))
            total += loss
            net.params, state = optimizer_step(net.params, g.d_params, state, opt)
        trace.append(total / n)
        if not np.isfinite(trace[-1]):
            raise TrainingError("behavior cloning diverged", trace)
    return trace


def train_bc(env: Env, expert=None, episodes=None, cfg: BcConfig | None = None):
    """Clone ``expert`` (default: the env's scripted expert) with a few DAgger rounds."""
    cfg = cfg or BcConfig()
    expert = expert or env.expert
    episodes = episodes or cfg.episodes
    rng = np.random.default_rng(cfg.seed)
    policy = new_policy(env, cfg.hidden, cfg.seed)
    states = _collect_states(env, expert, episodes, cfg.seed, cfg.action_noise, rng)
    obs = np.array([env.observe(s) for s in states])
    policy.net.set_input_normalizer(obs)
    trace = []
    for rnd in range(cfg.dagger_rounds + 1):
        obs = np.array([env.observe(s) for s in states])
        if policy.discrete:
            Y = np.array([int(expert(s)) for s in states])
        else:
            Y = np.array([np.atleast_1d(expert(s)) for s in states], dtype=np.float64)
        _fit(policy, obs, Y, cfg, rng, trace)
        log.info("bc round %d: %d states, loss %.5f", rnd, len(states), trace[-1])
        if rnd < cfg.dagger_rounds:
            more = _collect_states(env, lambda s: policy.act(env.observe(s)),
                                   episodes, cfg.seed + rnd + 1, cfg.action_noise / 2, rng)
            states = np.concatenate([states, more])
    policy.net.meta.update(env=env.spec.name, algo="bc", seed=cfg.seed)
    policy.trace = trace
    return policy


# ---------------------------------------------------------------------------
# REINFORCE


@dataclass
class ReinforceConfig:
    episodes: int = 2000
    batch_episodes: int = 16
    gamma: float = 0.99
    lr: float = 3e-3
    entropy_coef: float = 0.01
    hidden: tuple = (64, 64)
    seed: int = 0


def discounted_returns(rewards, gamma) -> np.ndarray:
    out = np.zeros(len(rewards))
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def train_reinforce(env: Env, cfg: ReinforceConfig | None = None) -> DiscretePolicy:
    """Return-baselined REINFORCE with an entropy bonus; records ``policy.curve``."""
    cfg = cfg or ReinforceConfig()
    if not env.spec.discrete:
        raise ValueError("train_reinforce needs a discrete environment")
    rng = np.random.default_rng(cfg.seed)
    policy = new_policy(env, cfg.hidden, cfg.seed)
    net = policy.net
    probe = np.array([env.observe(env.reset(cfg.seed * 7919 + i)) for i in range(64)])
    net.set_input_normalizer(probe)
    opt, state = OptConfig(lr=cfg.lr), None
    curve = []
    ep = 0
    while ep < cfg.episodes:
        X, A, G, R = [], [], [], []
        for _ in range(cfg.batch_episodes):
            s = env.reset(cfg.seed * 1_000_003 + ep)
            ep += 1
            rewards = []
            while True:
                o = env.observe(s)
                a = policy.act(o, "sample", rng)
                X.append(o)
                A.append(a)
                r = env.step(s, a)
                rewards.append(r.reward)
                if r.done:
                    break
                s = r.next_state
            G.extend(discounted_returns(rewards, cfg.gamma))
            R.append(sum(rewards))
        X, A, G = np.array(X), np.array(A), np.array(G)
        adv = G - G.mean()
        p = softmax(net.logits(X))
        onehot = np.eye(net.out_dim)[A]
        logp = np.log(p + 1e-12)
        ent = -(p * logp).sum(axis=1, keepdims=True)
        d_ent = -p * (logp + ent)
        g_logits = -(adv[:, None] * (onehot - p) + cfg.entropy_coef * d_ent) / cfg.batch_episodes
        loss = -(adv * logp[np.arange(len(A)), A]).sum() / cfg.batch_episodes
        if not np.isfinite(loss):
            raise TrainingError("REINFORCE loss is not finite", curve)
        grads = net.backward(X, g_logits, through_head=False)
        net.params, state = optimizer_step(net.params, grads.d_params, state, opt)
        curve.append(float(np.mean(R)))
    net.meta.update(env=env.spec.name, algo="reinforce", seed=cfg.seed)
    policy.curve = curve
    return policy


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalStats:
    mean_return: float
    std_return: float
    mean_length: float
    crash_rate: float
    catch_rate: float = float("nan")


def rollout(env: Env, policy, seed: int, mode="greedy", rng=None):
    s = env.reset(seed)
    rewards = []
    while True:
        a = policy.act(env.observe(s), mode, rng)
        r = env.step(s, to_env_action(env, a))
        rewards.append(r.reward)
        if r.done:
            return rewards, r.done_cause
        s = r.next_state


def evaluate(policy, env: Env, n_episodes: int | None = None, seeds=None) -> EvalStats:
    """Greedy evaluation; ``catch_rate`` counts positive landing rewards (Catch)."""
    if seeds is None:
        seeds = range(1, (n_episodes or 20) + 1)
    seeds = list(seeds)
    if n_episodes is not None:
        seeds = seeds[:n_episodes]
    if not seeds:
        raise ValueError("need at least one episode")
    rets, lens, fails, catches, drops = [], [], 0, 0, 0
    for seed in seeds:
        rewards, cause = rollout(env, policy, seed)
        rets.append(sum(rewards))
        lens.append(len(rewards))
        fails += cause in (CRASH, MISS)
        if env.spec.name == "catch":
            catches += sum(r > 0 for r in rewards)
            drops += sum(r < 0 for r in rewards)
    catch_rate = catches / (catches + drops) if catches + drops else float("nan")
    return EvalStats(float(np.mean(rets)), float(np.std(rets)), float(np.mean(lens)),
                     fails / len(seeds), catch_rate)
