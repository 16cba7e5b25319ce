"""Deterministic desk-scale environments.

Every environment is a pure value transformer: ``step(state, action)`` returns a
new :class:`StepResult` and never mutates its input.  The full state vector may
carry a hidden tail (step counter, lives, serve seed) after the first
``obs_dim`` components; policies and perturbations only ever see the
observation part.

Environments:

* ``lanekeep``  -- lateral car model on a fixed curved track, continuous steering.
* ``lanekeep7`` -- same dynamics, steering discretized into 7 levels.
* ``catch``     -- falling-ball/paddle game on an 11x11 grid (Pong/Breakout analog).
* ``lineworld`` -- 1-D integrator ``x' = x + a``, used for exact algorithm tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

CRASH = "crash"
MISS = "miss"
HORIZON = "horizon"
RUNNING = "running"


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    obs_dim: int
    obs_lo: np.ndarray
    obs_hi: np.ndarray
    horizon: int
    n_actions: int = 0  # 0 means continuous
    action_dim: int = 1
    action_lo: float = -1.0
    action_hi: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise EnvError("horizon must be >= 1")
        if np.any(self.obs_hi <= self.obs_lo):
            raise EnvError("state ranges must satisfy lo < hi")

    @property
    def discrete(self) -> bool:
        return self.n_actions > 0

    @property
    def obs_width(self) -> np.ndarray:
        return self.obs_hi - self.obs_lo


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    done_cause: str = RUNNING


class Env:
    """Common surface; subclasses implement the dynamics."""

    spec: EnvSpec

    def reset(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, state: np.ndarray, action: Any) -> StepResult:
        raise NotImplementedError

    def divergence(self, state: np.ndarray) -> float:
        raise NotImplementedError

    def expert(self, state: np.ndarray) -> Any:
        raise NotImplementedError

    def observe(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state[: self.spec.obs_dim], dtype=np.float64)

    def with_obs(self, state: np.ndarray, obs: np.ndarray) -> np.ndarray:
        """Full state with its observation part replaced (used by learned predictors)."""
        out = np.array(state, dtype=np.float64)
        out[: self.spec.obs_dim] = obs
        return out

    def clamp_obs(self, obs: np.ndarray) -> np.ndarray:
        return np.clip(obs, self.spec.obs_lo, self.spec.obs_hi)

    def check_action(self, action):
        s = self.spec
        if s.discrete:
            a = int(action)
            if a != action or not 0 <= a < s.n_actions:
                raise EnvError(f"{s.name}: action index {action!r} outside [0, {s.n_actions})")
            return a
        a = np.atleast_1d(np.asarray(action, dtype=np.float64))
        if a.shape != (s.action_dim,) or not np.all(np.isfinite(a)):
            raise EnvError(f"{s.name}: malformed continuous action {action!r}")
        if np.any(a < s.action_lo) or np.any(a > s.action_hi):
            raise EnvError(f"{s.name}: action {a} outside [{s.action_lo}, {s.action_hi}]")
        return a


# ---------------------------------------------------------------------------
# LaneKeep


@dataclass(frozen=True)
class LaneKeepConfig:
    dt: float = 0.1
    k_steer: float = 1.0
    v: float = 1.0
    alpha_max: float = math.pi / 4
    horizon: int = 400
    # (center, peak curvature) of flat-topped bumps; the peak slightly exceeds
    # k_steer / v, so a corner is survivable only when entered well aligned
    corners: tuple = (
        (6.0, 1.17), (14.0, -1.17), (22.0, 1.17), (30.0, -1.17),
        (38.0, 1.17), (46.0, -1.17), (54.0, 1.17),
    )
    corner_halfwidth: float = 1.6
    start_max: float = 20.0
    track_len: float = 62.0
    init_trackpos: float = 0.1
    init_alpha: float = 0.05
    k_p: float = 2.5
    k_d: float = 6.0


class LaneKeep(Env):
    """Car on a curved track.

    state = [trackpos, alpha, speed, progress | step]
    """

    name = "lanekeep"

    def __init__(self, cfg: LaneKeepConfig | None = None):
        self.cfg = cfg or LaneKeepConfig()
        c = self.cfg
        self.spec = EnvSpec(
            name=self.name,
            state_dim=5,
            obs_dim=4,
            obs_lo=np.array([-1.2, -c.alpha_max, 0.0, 0.0]),
            obs_hi=np.array([1.2, c.alpha_max, 2.0 * c.v, c.track_len]),
            horizon=c.horizon,
        )

    def curvature(self, progress: float) -> float:
        c = self.cfg
        k = 0.0
        for center, amp in c.corners:
            u = (progress - center) / c.corner_halfwidth
            k += amp * math.exp(-(u ** 4))
        return k

    @staticmethod
    def make_state(trackpos=0.0, alpha=0.0, speed=1.0, progress=0.0, step=0) -> np.ndarray:
        return np.array([trackpos, alpha, speed, progress, step], dtype=np.float64)

    def reset(self, seed: int) -> np.ndarray:
        c = self.cfg
        rng = np.random.default_rng([int(seed), 7])
        tp = rng.uniform(-c.init_trackpos, c.init_trackpos)
        al = rng.uniform(-c.init_alpha, c.init_alpha)
        prog = rng.uniform(0.0, c.start_max)
        return self.make_state(tp, al, c.v, prog, 0)

    def steering(self, action) -> float:
        return float(self.check_action(action)[0])

    def step(self, state, action) -> StepResult:
        a = self.steering(action)
        return self._advance(state, a)

    def _advance(self, state, a: float) -> StepResult:
        c = self.cfg
        tp, al, speed, prog, t = (float(x) for x in state[:5])
        kappa = self.curvature(prog)
        al2 = min(max(al + c.k_steer * a * c.dt - speed * kappa * c.dt, -c.alpha_max), c.alpha_max)
        tp2 = tp + speed * math.sin(al2) * c.dt
        reward = speed * math.cos(al2) - speed * abs(tp2)
        t2 = t + 1
        nxt = np.array([min(max(tp2, -1.2), 1.2), al2, speed, prog + speed * c.dt, t2])
        if abs(tp2) >= 1.0:
            return StepResult(nxt, reward, True, CRASH)
        if t2 >= c.horizon:
            return StepResult(nxt, reward, True, HORIZON)
        return StepResult(nxt, reward, False, RUNNING)

    def divergence(self, state) -> float:
        return abs(float(state[0]))

    def expert_steer(self, state) -> float:
        c = self.cfg
        return min(max(-c.k_p * float(state[0]) - c.k_d * float(state[1]), -1.0), 1.0)

    def expert(self, state):
        return np.array([self.expert_steer(state)])


class LaneKeep7(LaneKeep):
    """LaneKeep with steering discretized to ``-1 + i * 2/6`` for i in 0..6."""

    name = "lanekeep7"
    levels = np.linspace(-1.0, 1.0, 7)

    def __init__(self, cfg: LaneKeepConfig | None = None):
        super().__init__(cfg)
        self.spec = replace(self.spec, name=self.name, n_actions=7)

    def steering(self, action) -> float:
        return -1.0 + self.check_action(action) * (2.0 / 6)

    def expert(self, state):
        return int(np.argmin(np.abs(self.levels - self.expert_steer(state))))


# ---------------------------------------------------------------------------
# Catch


@dataclass(frozen=True)
class CatchConfig:
    width: int = 11
    height: int = 11
    paddle_halfwidth: int = 1
    lives: int = 5
    balls: int = 3
    serve_spread: int = 3

    @property
    def horizon(self) -> int:
        return self.balls * self.height


class Catch(Env):
    """Ball falls one row per step and bounces off the side walls.

    state = [ball_x, ball_y, ball_vx, paddle_x | step, lives, serves, seed]
    actions: 0 = left, 1 = stay, 2 = right.

    The ball lands on row ``height - 1``; that frame is shown once, then the
    next step re-serves a new ball at row 0.  A serve is placed so that its
    landing column lies within ``serve_spread`` columns of the paddle.
    """

    name = "catch"
    LEFT, STAY, RIGHT = 0, 1, 2

    def __init__(self, cfg: CatchConfig | None = None):
        self.cfg = cfg or CatchConfig()
        c = self.cfg
        self.spec = EnvSpec(
            name=self.name,
            state_dim=8,
            obs_dim=4,
            obs_lo=np.array([0.0, 0.0, -1.0, 0.0]),
            obs_hi=np.array([c.width - 1.0, c.height - 1.0, 1.0, c.width - 1.0]),
            horizon=c.horizon,
            n_actions=3,
        )

    @staticmethod
    def make_state(ball_x, ball_y, ball_vx, paddle_x, step=0, lives=5, serves=0, seed=0):
        return np.array([ball_x, ball_y, ball_vx, paddle_x, step, lives, serves, seed], dtype=np.float64)

    def move_ball(self, x: int, vx: int) -> tuple[int, int]:
        x2 = x + vx
        hi = self.cfg.width - 1
        if x2 > hi:
            x2, vx = 2 * hi - x2, -vx
        elif x2 < 0:
            x2, vx = -x2, -vx
        return x2, vx

    def landing_column(self, x: int, y: int, vx: int) -> int:
        for _ in range(self.cfg.height - 1 - y):
            x, vx = self.move_ball(x, vx)
        return x

    def _serve(self, paddle_x: int, seed: int, serves: int) -> tuple[int, int]:
        c = self.cfg
        rng = np.random.default_rng([seed, serves, 11])
        vx = int(rng.integers(-1, 2))
        land = int(np.clip(paddle_x + rng.integers(-c.serve_spread, c.serve_spread + 1), 0, c.width - 1))
        # walk backwards from the landing column with reversed velocity
        x, v = land, -vx
        for _ in range(c.height - 1):
            x, v = self.move_ball(x, v)
        return x, -v

    def reset(self, seed: int) -> np.ndarray:
        c = self.cfg
        rng = np.random.default_rng([int(seed), 5])
        paddle = int(rng.integers(0, c.width))
        bx, vx = self._serve(paddle, int(seed), 0)
        return self.make_state(bx, 0, vx, paddle, 0, c.lives, 1, int(seed))

    def step(self, state, action) -> StepResult:
        a = self.check_action(action)
        c = self.cfg
        bx, by, vx, px, t, lives, serves, seed = (int(round(float(v))) for v in state[:8])
        px2 = min(max(px + (a - 1), 0), c.width - 1)
        reward = 0.0
        if by >= c.height - 1:
            bx2, vx2 = self._serve(px2, seed, serves)
            by2, serves = 0, serves + 1
        else:
            bx2, vx2 = self.move_ball(bx, vx)
            by2 = by + 1
            if by2 == c.height - 1:
                if abs(bx2 - px2) <= c.paddle_halfwidth:
                    reward = 1.0
                else:
                    reward = -1.0
                    lives -= 1
        t2 = t + 1
        nxt = self.make_state(bx2, by2, vx2, px2, t2, lives, serves, seed)
        if lives <= 0:
            return StepResult(nxt, reward, True, MISS)
        if t2 >= c.horizon:
            return StepResult(nxt, reward, True, HORIZON)
        return StepResult(nxt, reward, False, RUNNING)

    def divergence(self, state) -> float:
        # p(s) = ball_y / H is an imminence proxy for the ball falling
        bx, by, _, px = (float(v) for v in state[:4])
        return (by / self.cfg.height) * abs(bx - px)

    def expert(self, state) -> int:
        bx, by, vx, px = (int(round(float(v))) for v in state[:4])
        if by >= self.cfg.height - 1:
            return self.STAY
        land = self.landing_column(bx, by, vx)
        if land < px:
            return self.LEFT
        if land > px:
            return self.RIGHT
        return self.STAY


# ---------------------------------------------------------------------------
# LineWorld


@dataclass(frozen=True)
class LineWorldConfig:
    horizon: int = 20
    bound: float = 25.0  # unreachable from |x0| <= 3 within the horizon, so dynamics stay linear


class LineWorld(Env):
    """``x' = x + a`` with actions index 0 -> 0, 1 -> +1, 2 -> -1.

    state = [x | step].  Divergence is ``|x|``; reward is ``-|x'|``.
    """

    name = "lineworld"
    deltas = (0.0, 1.0, -1.0)

    def __init__(self, cfg: LineWorldConfig | None = None):
        self.cfg = cfg or LineWorldConfig()
        b = self.cfg.bound
        self.spec = EnvSpec(
            name=self.name,
            state_dim=2,
            obs_dim=1,
            obs_lo=np.array([-b]),
            obs_hi=np.array([b]),
            horizon=self.cfg.horizon,
            n_actions=3,
        )

    @staticmethod
    def make_state(x, step=0):
        return np.array([x, step], dtype=np.float64)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng([int(seed), 3])
        return self.make_state(float(rng.integers(-3, 4)))

    def step(self, state, action) -> StepResult:
        a = self.check_action(action)
        b = self.cfg.bound
        x2 = min(max(float(state[0]) + self.deltas[a], -b), b)
        t2 = float(state[1]) + 1
        done = t2 >= self.cfg.horizon
        return StepResult(self.make_state(x2, t2), -abs(x2), done, HORIZON if done else RUNNING)

    def divergence(self, state) -> float:
        return abs(float(state[0]))

    def expert(self, state) -> int:
        x = float(state[0])
        return 2 if x > 0 else (1 if x < 0 else 0)


ENV_IDS = ("lanekeep", "lanekeep7", "catch", "lineworld")

_CONFIGS = {
    "lanekeep": LaneKeepConfig,
    "lanekeep7": LaneKeepConfig,
    "catch": CatchConfig,
    "lineworld": LineWorldConfig,
}
_CLASSES = {"lanekeep": LaneKeep, "lanekeep7": LaneKeep7, "catch": Catch, "lineworld": LineWorld}


def make_env(env_id: str, overrides: dict | None = None) -> Env:
    """Build an environment by id; ``overrides`` maps config field names to values."""
    if env_id not in _CLASSES:
        raise EnvError(f"unknown env id {env_id!r}; expected one of {ENV_IDS}")
    cfg_cls = _CONFIGS[env_id]
    cfg = cfg_cls()
    if overrides:
        names = {f for f in cfg_cls.__dataclass_fields__}
        bad = set(overrides) - names
        if bad:
            raise EnvError(f"unknown {env_id} config keys: {sorted(bad)}")
        cfg = replace(cfg, **overrides)
    return _CLASSES[env_id](cfg)


def divergence(env_id: str, state, overrides: dict | None = None) -> float:
    return make_env(env_id, overrides).divergence(state)
