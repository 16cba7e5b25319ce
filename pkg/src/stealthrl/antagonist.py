"""Learned adversary that decides when to attack and which action to force.

The antagonist maps an observation to ``(p, a')``: a gate probability and a
target action for the victim.  An attack fires when the gate opens and fewer
than ``budget`` attacks have been spent this episode.  It is trained with
REINFORCE on the negated victim reward; the victim never changes.
"""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .agent import to_env_action
from .env import Env
from .nn import Mlp, OptConfig, load_model, optimizer_step, save_model, softmax
from .perturb import PerturbConfig, craft
from .reports import EpisodeReport

log = logging.getLogger(__name__)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


class AntagonistPolicy:
    """Linear-output net ``[gate_logit, action head...]``.

    For discrete victims the action head holds k logits (softmax); for
    continuous victims it holds pre-tanh means of the target action.
    """

    def __init__(self, net: Mlp, discrete: bool, action_std: float = 0.3):
        if net.head != "linear":
            raise ValueError("antagonist net must have a linear head")
        self.net = net
        self.discrete = discrete
        self.action_std = action_std

    @classmethod
    def create(cls, env: Env, hidden=(32, 32), seed=0, gate_bias=-2.0, action_std=0.3) -> "AntagonistPolicy":
        s = env.spec
        out = 1 + (s.n_actions if s.discrete else s.action_dim)
        net = Mlp.init([s.obs_dim, *hidden, out], "tanh", "linear", seed)
        net.layers()[-1][1][0] = gate_bias
        net.meta.update(kind="antagonist", discrete=s.discrete, action_std=action_std)
        return cls(net, s.discrete, action_std)

    @classmethod
    def load(cls, path) -> "AntagonistPolicy":
        net = load_model(path)
        return cls(net, bool(net.meta.get("discrete", True)), float(net.meta.get("action_std", 0.3)))

    def save(self, path):
        save_model(self.net, path)

    def heads(self, obs):
        """``(p, action_probs)`` for discrete victims or ``(p, action_mean)`` for continuous."""
        z = self.net.forward(obs)
        p = sigmoid(z[..., 0])
        rest = z[..., 1:]
        return p, (softmax(rest) if self.discrete else np.tanh(rest))


def ant_decide(ant: AntagonistPolicy, obs):
    """Deterministic ``(p, a')``: greedy target for discrete, tanh mean for continuous."""
    p, head = ant.heads(obs)
    a = int(np.argmax(head)) if ant.discrete else np.asarray(head, dtype=np.float64)
    return float(p), a


@dataclass
class AntTrainConfig:
    budget: int = 3
    episodes: int = 8000
    batch_episodes: int = 40
    gamma: float = 0.9
    lr: float = 5e-3
    entropy_gate: float = 0.0
    entropy_action: float = 0.01
    hidden: tuple = (32, 32)
    gate_bias: float = -2.0
    action_std: float = 0.3
    craft_mode: str = "oracle"
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.craft_mode not in ("oracle", "full"):
            raise ValueError(f"unknown craft mode {self.craft_mode!r}")


@dataclass
class AntExperience:
    obs: np.ndarray
    p: float
    target: object
    r_adv: float
    next_obs: np.ndarray
    attacked: bool
    gate_open: bool = False  # the sampled (or thresholded) gate decision
    decided: bool = True     # budget was left, so the gate decision mattered


def run_antagonist_episode(env: Env, victim, ant: AntagonistPolicy, budget: int, perturb_cfg: PerturbConfig,
                           seed: int, craft_mode: str = "full", training: bool = False, rng=None):
    """Play one episode; returns ``(experience, EpisodeReport)``.

    In training the gate is sampled as Bernoulli(p) and the target drawn from
    the action head; otherwise the gate opens only when ``p > 0.5`` and the
    target is the head's mode.
    """
    if training and rng is None:
        raise ValueError("training rollouts need an rng")
    rep = EpisodeReport(seed, "antagonist", budget)
    exp = []
    s = env.reset(seed)
    used = 0
    t = 0
    while True:
        obs = env.observe(s)
        p, head = ant.heads(obs)
        p = float(p)
        decided = used < budget
        if training:
            gate = bool(rng.random() < p)
            if ant.discrete:
                target = int(rng.choice(len(head), p=head))
            else:
                target = np.clip(head + rng.normal(0.0, ant.action_std, head.shape), -1.0, 1.0)
        else:
            gate = p > 0.5
            target = int(np.argmax(head)) if ant.discrete else np.asarray(head)
        attacked = gate and decided
        if attacked:
            used += 1
            rep.attacked_steps.append(t)
            rep.diagnostics.append(p)
            if craft_mode == "oracle":
                a = target
                rep.craft_success.append(True)
                rep.linf.append(0.0)
                rep.l2.append(0.0)
            else:
                cr = craft(victim, obs, target, perturb_cfg, env.spec)
                rep.craft_success.append(cr.success)
                rep.linf.append(cr.linf)
                rep.l2.append(cr.l2)
                a = victim.act(cr.perturbed if cr.success else obs)
        else:
            a = victim.act(obs)
        assert used <= budget, "attack budget exceeded"
        r = env.step(s, to_env_action(env, a))
        exp.append(AntExperience(obs, p, target, -r.reward, env.observe(r.next_state), attacked, gate, decided))
        rep.rewards.append(r.reward)
        t += 1
        if r.done:
            rep.done_cause = r.done_cause
            break
        s = r.next_state
    rep.ret = float(sum(rep.rewards))
    rep.length = t
    return exp, rep


def params_digest(net: Mlp) -> str:
    return hashlib.sha256(net.params.tobytes()).hexdigest()


@dataclass
class AntTrainResult:
    antagonist: AntagonistPolicy
    curve: list = field(default_factory=list)  # (iteration, mean_return, mean_attacks_per_episode)


def _returns_to_go(r, gamma):
    out = np.zeros(len(r))
    g = 0.0
    for t in range(len(r) - 1, -1, -1):
        g = r[t] + gamma * g
        out[t] = g
    return out


def _visited_obs(env: Env, victim, episodes: int) -> np.ndarray:
    out = []
    for i in range(episodes):
        s = env.reset(10_000_000 + i)
        for _ in range(env.spec.horizon):
            out.append(env.observe(s))
            r = env.step(s, to_env_action(env, victim.act(env.observe(s))))
            if r.done:
                break
            s = r.next_state
    return np.array(out)


def train_antagonist(env: Env, victim, cfg: AntTrainConfig | None = None,
                     perturb_cfg: PerturbConfig | None = None) -> AntTrainResult:
    """REINFORCE over both heads with a per-timestep mean baseline.

    The gate contributes ``log Bernoulli(gate | p)`` on every step where budget
    remained; the action head contributes ``log pi(a')`` on attacked steps.
    """
    cfg = cfg or AntTrainConfig()
    perturb_cfg = perturb_cfg or PerturbConfig()
    digest = params_digest(victim.net)
    rng = np.random.default_rng([cfg.seed, 23])
    ant = AntagonistPolicy.create(env, cfg.hidden, cfg.seed, cfg.gate_bias, cfg.action_std)
    net = ant.net
    net.set_input_normalizer(_visited_obs(env, victim, 10))
    opt, state = OptConfig(lr=cfg.lr), None
    curve = []
    ep = 0
    it = 0
    while ep < cfg.episodes:
        batch = []
        for _ in range(cfg.batch_episodes):
            exp, rep = run_antagonist_episode(env, victim, ant, cfg.budget, perturb_cfg,
                                              cfg.seed * 1_000_003 + ep, cfg.craft_mode, True, rng)
            ep += 1
            assert rep.attack_count <= cfg.budget
            batch.append((exp, rep, _returns_to_go([e.r_adv for e in exp], cfg.gamma)))
        T = max(len(e) for e, _, _ in batch)
        sums, counts = np.zeros(T), np.zeros(T)
        for exp, _, G in batch:
            sums[: len(G)] += G
            counts[: len(G)] += 1
        base = sums / np.maximum(counts, 1)
        scale = np.std(np.concatenate([G - base[: len(G)] for _, _, G in batch])) + 1e-8
        X, U = [], []
        for exp, _, G in batch:
            adv = (G - base[: len(G)]) / scale
            for e, A in zip(exp, adv):
                X.append(e.obs)
                U.append((e, A))
        X = np.array(X)
        z = net.forward(X)
        p = sigmoid(z[:, 0])
        up = np.zeros_like(z)
        for i, (e, A) in enumerate(U):
            if e.decided:
                # d/dlogit log Bernoulli(gate | p) = gate - p
                up[i, 0] = -A * (float(e.gate_open) - p[i])
                if cfg.entropy_gate:
                    ent_grad = -p[i] * (1 - p[i]) * np.log(p[i] / (1 - p[i]) + 1e-12)
                    up[i, 0] -= cfg.entropy_gate * ent_grad
            if e.attacked:
                if ant.discrete:
                    pa = softmax(z[i, 1:])
                    onehot = np.zeros_like(pa)
                    onehot[e.target] = 1.0
                    logp = np.log(pa + 1e-12)
                    ent = -(pa * logp).sum()
                    d_ent = -pa * (logp + ent)
                    up[i, 1:] = -A * (onehot - pa) - cfg.entropy_action * d_ent
                else:
                    m = np.tanh(z[i, 1:])
                    up[i, 1:] = -A * (np.asarray(e.target) - m) / cfg.action_std ** 2 * (1 - m * m)
        up /= cfg.batch_episodes
        if not np.all(np.isfinite(up)):
            raise FloatingPointError("antagonist loss is not finite")
        g = net.backward(X, up)
        net.params, state = optimizer_step(net.params, g.d_params, state, opt)
        it += 1
        curve.append((it, float(np.mean([r.ret for _, r, _ in batch])),
                      float(np.mean([r.attack_count for _, r, _ in batch]))))
        if it % 20 == 0:
            log.info("ant iter %d: victim return %.3f, attacks %.2f", *curve[-1])
    if params_digest(victim.net) != digest:
        raise RuntimeError("victim parameters changed during antagonist training")
    net.meta.update(env=env.spec.name, budget=cfg.budget, seed=cfg.seed)
    return AntTrainResult(ant, curve)


def write_curve(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_return", "mean_attacks_per_episode"])
        for row in curve:
            w.writerow([row[0], repr(row[1]), repr(row[2])])
