"""Next-state predictors: a learned MLP model and an exact-dynamics oracle.

Both implement ``predict(state, action) -> full state``.  The learned model
only predicts the observation part of the state; any hidden tail (step
counters, lives, serve seeds) is carried through by the environment's own
bookkeeping, see :meth:`PredModel.predict`.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import to_env_action
from .env import Env
from .nn import DimensionError, Mlp, OptConfig, load_model, optimizer_step, save_model

log = logging.getLogger(__name__)


class PredictorError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


# ---------------------------------------------------------------------------
# datasets


@dataclass
class TransitionDataset:
    states: np.ndarray       # (n, obs_dim)
    actions: np.ndarray      # (n,) int for discrete, (n, action_dim) for continuous
    next_states: np.ndarray  # (n, obs_dim)
    split: np.ndarray        # (n,) bool, True = train
    discrete: bool = True
    n_actions: int = 0

    def __len__(self):
        return len(self.states)

    def part(self, train: bool):
        m = self.split if train else ~self.split
        return self.states[m], self.actions[m], self.next_states[m]

    def write_csv(self, path) -> None:
        d = self.states.shape[1]
        acts = self.actions.reshape(len(self), -1)
        header = ([f"s_{i}" for i in range(d)] + [f"a_{j}" for j in range(acts.shape[1])]
                  + [f"sn_{i}" for i in range(d)] + ["split"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for s, a, sn, tr in zip(self.states, acts, self.next_states, self.split):
                w.writerow([repr(float(v)) for v in (*s, *a, *sn)] + ["train" if tr else "test"])

    @classmethod
    def read_csv(cls, path, discrete: bool, n_actions: int = 0) -> "TransitionDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = sum(h.startswith("s_") for h in header)
        k = sum(h.startswith("a_") for h in header)
        arr = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), 2 * d + k)
        acts = arr[:, d: d + k]
        acts = acts[:, 0].astype(int) if discrete else acts
        split = np.array([r[-1] == "train" for r in body], dtype=bool)
        return cls(arr[:, :d], acts, arr[:, d + k:], split, discrete, n_actions)


def collect_transitions(env: Env, policy, n_steps: int, exploration_noise: float, seed: int,
                        train_frac: float = 0.8) -> TransitionDataset:
    """Roll ``policy`` with exploration and record observation transitions.

    Continuous victims get Gaussian action noise of scale ``exploration_noise``;
    discrete victims act uniformly at random with probability
    ``exploration_noise``.  Rows are split train/test by a seeded shuffle.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    spec = env.spec
    rng = np.random.default_rng([seed, 17])
    S, A, SN = [], [], []
    ep = 0
    s = env.reset(seed * 1_000_003 + ep)
    while len(S) < n_steps:
        o = env.observe(s)
        a = policy.act(o)
        if spec.discrete:
            if rng.random() < exploration_noise:
                a = int(rng.integers(spec.n_actions))
        else:
            a = np.atleast_1d(a) + rng.normal(0.0, exploration_noise, spec.action_dim) * (exploration_noise > 0)
        a = to_env_action(env, a)
        r = env.step(s, a)
        S.append(o)
        A.append(a)
        SN.append(env.observe(r.next_state))
        if r.done:
            ep += 1
            s = env.reset(seed * 1_000_003 + ep)
        else:
            s = r.next_state
    n = len(S)
    split = np.zeros(n, dtype=bool)
    split[rng.permutation(n)[: max(1, int(round(train_frac * n)))]] = True
    acts = np.array(A, dtype=int) if spec.discrete else np.array(A, dtype=np.float64)
    return TransitionDataset(np.array(S), acts, np.array(SN), split, spec.discrete, spec.n_actions)


# ---------------------------------------------------------------------------
# models


def encode_inputs(states, actions, discrete: bool, n_actions: int) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if discrete:
        a = np.atleast_1d(np.asarray(actions)).astype(int)
        enc = np.eye(n_actions)[a]
    else:
        enc = np.asarray(actions, dtype=np.float64).reshape(len(states), -1)
    return np.concatenate([states, enc], axis=1)


class OraclePredictor:
    """Exact environment dynamics behind the predictor interface."""

    def __init__(self, env: Env):
        self.env = env

    def predict(self, state, action) -> np.ndarray:
        return self.env.step(state, to_env_action(self.env, action)).next_state


@dataclass
class PmConfig:
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    epochs: int = 200
    batch: int = 256
    lr: float = 3e-3
    seed: int = 0


class PredModel:
    """Learned one-step model over ``concat(obs, encoded action)``.

    Targets are z-scored per dimension with statistics from the training
    split (stored as the net's output normalizer).
    """

    def __init__(self, net: Mlp, env: Env | None = None):
        self.net = net
        self.env = env
        self.discrete = bool(net.meta.get("discrete", True))
        self.n_actions = int(net.meta.get("n_actions", 0))

    @property
    def obs_dim(self) -> int:
        return self.net.out_dim

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.net.out_mean) / self.net.out_std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.net.out_std + self.net.out_mean

    def predict_obs(self, obs, action) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise DimensionError(f"state has {obs.shape[-1]} components, model expects {self.obs_dim}")
        x = encode_inputs(obs, action, self.discrete, self.n_actions)
        y = self.denormalize(self.net.forward(x))
        return y[0] if obs.ndim == 1 else y

    def predict(self, state, action) -> np.ndarray:
        if self.env is None:
            raise PredictorError("PredModel needs an env to map full states")
        spec = self.env.spec
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (spec.state_dim,):
            raise DimensionError(f"state has shape {state.shape}, expected ({spec.state_dim},)")
        obs = self.env.clamp_obs(self.predict_obs(self.env.observe(state), action))
        # the hidden tail advances exactly as the real env would; the model owns the observation
        true_next = self.env.step(state, to_env_action(self.env, action)).next_state
        return self.env.with_obs(true_next, obs)

    def mse(self, ds: TransitionDataset, train: bool = False) -> float | None:
        S, A, SN = ds.part(train)
        if len(S) == 0:
            return None
        pred = self.net.forward(encode_inputs(S, A, self.discrete, self.n_actions))
        return float(np.mean((pred - self.normalize(SN)) ** 2))

    def save(self, path) -> None:
        save_model(self.net, path)

    @classmethod
    def load(cls, path, env: Env | None = None) -> "PredModel":
        return cls(load_model(path), env)


@dataclass
class PmResult:
    model: PredModel
    heldout_mse: float | None
    train_mse: float
    trace: list = field(default_factory=list)


def train_pm(ds: TransitionDataset, cfg: PmConfig | None = None, env: Env | None = None) -> PmResult:
    """Fit a one-step model by minibatch Adam on normalized squared error."""
    cfg = cfg or PmConfig()
    S, A, SN = ds.part(True)
    if len(S) == 0:
        raise ValueError("dataset has no training rows")
    X = encode_inputs(S, A, ds.discrete, ds.n_actions)
    net = Mlp.init([X.shape[1], *cfg.hidden, SN.shape[1]], cfg.activation, "linear", cfg.seed)
    net.set_input_normalizer(X)
    net.out_mean = SN.mean(axis=0)
    std = SN.std(axis=0)
    net.out_std = np.where(std > 1e-6, std, 1.0)
    net.meta.update(kind="pm", discrete=ds.discrete, n_actions=ds.n_actions)
    model = PredModel(net, env)
    Y = model.normalize(SN)
    rng = np.random.default_rng(cfg.seed)
    opt, state = OptConfig(lr=cfg.lr), None
    trace = []
    n = len(X)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * (0.5 * (1 + np.cos(np.pi * epoch / cfg.epochs)) * 0.99 + 0.01)
        idx = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch):
            b = idx[i: i + cfg.batch]
            diff = net.forward(X[b]) - Y[b]
            total += float((diff ** 2).sum())
            g = net.backward(X[b], 2 * diff / len(b))
            net.params, state = optimizer_step(net.params, g.d_params, state, opt)
        trace.append(total / (n * Y.shape[1]))
        if not np.isfinite(trace[-1]):
            raise PredictorError("prediction model training diverged", trace)
    heldout = model.mse(ds, train=False)
    log.info("pm trained: train mse %.3g, held-out mse %s", trace[-1], heldout)
    return PmResult(model, heldout, float(model.mse(ds, train=True)), trace)


# ---------------------------------------------------------------------------
# rollouts


def predict_next(predictor, state, action) -> np.ndarray:
    return predictor.predict(state, action)


def rollout(predictor, policy, state, prefix=(), M: int = 1, observe=None) -> list:
    """States ``s_{t+1} .. s_{t+M}``: actions come from ``prefix`` first, then greedy ``policy``.

    ``observe`` maps a full state to what the policy sees (default: the
    predictor's env, or the identity).
    """
    prefix = list(prefix)
    if M < 1:
        raise ValueError("M must be >= 1")
    if len(prefix) > M:
        raise ValueError(f"plan of length {len(prefix)} exceeds horizon M={M}")
    if observe is None:
        env = getattr(predictor, "env", None)
        observe = env.observe if env is not None else (lambda s: s)
    out = []
    s = np.asarray(state, dtype=np.float64)
    for i in range(M):
        a = prefix[i] if i < len(prefix) else policy.act(observe(s))
        s = predictor.predict(s, a)
        out.append(s)
    return out


def load_predictor(spec: str, env: Env):
    """``"oracle"`` or a path to a saved prediction model."""
    if spec == "oracle":
        return OraclePredictor(env)
    if not Path(spec).exists():
        raise FileNotFoundError(f"prediction model {spec} not found")
    return PredModel.load(spec, env)
