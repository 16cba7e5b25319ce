"""Targeted observation perturbations.

Perturbations are optimized in range-normalized coordinates: a component
``u_i = delta_i / (hi_i - lo_i)``.  ``eps_inf`` bounds ``max |u_i|`` and both
reported norms (``linf``, ``l2``) are measured in these units.  Every iterate is
projected onto the intersection of the L-inf ball and the observation box, so
no returned state ever leaves the declared ranges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import softmax


@dataclass
class PerturbConfig:
    eps_inf: float = 0.1
    lam: float = 0.01
    iters: int = 200
    lr: float = 0.01
    kappa: float = 0.0
    tol_cont: float = 0.1
    method: str = "cw"
    # extra descents from seeded random points in the box, tried only after the zero start fails
    restarts: int = 8
    restart_seed: int = 0

    def __post_init__(self):
        if self.eps_inf < 0 or self.iters < 1 or self.tol_cont <= 0 or self.restarts < 0:
            raise ValueError("need eps_inf >= 0, iters >= 1, tol_cont > 0, restarts >= 0")


@dataclass
class CraftResult:
    delta: np.ndarray
    perturbed: np.ndarray
    success: bool
    l2: float
    linf: float
    iters_used: int
    target: object = None


class _Box:
    def __init__(self, obs, lo, hi, eps):
        self.obs = np.asarray(obs, dtype=np.float64)
        self.width = np.asarray(hi, np.float64) - np.asarray(lo, np.float64)
        self.lo_u = np.maximum(-eps, (np.asarray(lo) - self.obs) / self.width)
        self.hi_u = np.minimum(eps, (np.asarray(hi) - self.obs) / self.width)
        # an observation sitting outside its declared range still gets a feasible box
        self.lo_u = np.minimum(self.lo_u, 0.0)
        self.hi_u = np.maximum(self.hi_u, 0.0)
        self.lo, self.hi = np.asarray(lo, np.float64), np.asarray(hi, np.float64)

    def project(self, u):
        return np.clip(u, self.lo_u, self.hi_u)

    def state(self, u):
        return self.obs + u * self.width

    def result(self, u, success, iters, target) -> CraftResult:
        u = self.project(u)
        perturbed = self.state(u)
        delta = perturbed - self.obs
        un = delta / self.width
        return CraftResult(delta, perturbed, bool(success), float(np.linalg.norm(un)),
                           float(np.max(np.abs(un), initial=0.0)), iters, target)


def _spec_bounds(spec):
    return spec.obs_lo, spec.obs_hi


def _hits_discrete(victim, obs, target) -> bool:
    return int(np.argmax(victim.net.logits(obs))) == int(target)


def _hits_continuous(victim, obs, target, tol) -> bool:
    return float(np.max(np.abs(victim.net.forward(obs) - target))) <= tol


def _adam_descent(probe, box: _Box, cfg: PerturbConfig, U):
    """Projected Adam on a batch of starts ``U`` (rows) with a cosine-decayed step.

    ``probe(U) -> (hit, grad)`` reports which rows already reach the target and
    the loss gradient for every row.  Stops as soon as any row hits; returns
    ``(u, steps, hit)`` with ``u`` the lowest-index hitting row (or row 0).
    """
    U = box.project(U)
    m = np.zeros_like(U)
    v = np.zeros_like(U)
    b1, b2 = 0.9, 0.999
    for it in range(cfg.iters + 1):
        hit, g = probe(U)
        if hit.any():
            return U[int(np.argmax(hit))], it, True
        if it == cfg.iters:
            break
        t = it + 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        lr = cfg.lr * 0.5 * (1 + np.cos(np.pi * it / cfg.iters))
        U = box.project(U - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + 1e-12))
    return U[0], cfg.iters, False


def _descend(probe, box: _Box, cfg: PerturbConfig):
    """Zero start first; if it fails, all seeded restarts run in lockstep.  Returns ``(u, steps)``."""
    u, used, hit = _adam_descent(probe, box, cfg, np.zeros((1, box.obs.size)))
    if hit or cfg.restarts == 0:
        return u, used
    rng = np.random.default_rng([cfg.restart_seed, 101])
    starts = rng.uniform(box.lo_u, box.hi_u, size=(cfg.restarts, box.obs.size))
    v, more, hit = _adam_descent(probe, box, cfg, starts)
    return (v if hit else u), used + more


def craft_discrete(victim, obs, target: int, cfg: PerturbConfig, spec) -> CraftResult:
    """Margin-loss (C&W style) attack that makes ``target`` the argmax action.

    Minimizes ``max(max_{i != t} z_i - z_t, -kappa) + lam * ||u||^2`` over the
    projected box; stops at the first iterate whose argmax equals the target.
    """
    target = int(target)
    if not 0 <= target < victim.net.out_dim:
        raise ValueError(f"target {target} outside action range")
    box = _Box(obs, *_spec_bounds(spec), cfg.eps_inf)
    if _hits_discrete(victim, box.obs, target):
        return box.result(np.zeros_like(box.obs), True, 0, target)
    if cfg.eps_inf == 0:
        return box.result(np.zeros_like(box.obs), False, 0, target)
    net = victim.net
    def probe(U):
        X = box.state(U)
        Z = net.logits(X)
        hit = np.argmax(Z, axis=1) == target
        others = Z.copy()
        others[:, target] = -np.inf
        j = np.argmax(others, axis=1)
        rows = np.arange(len(U))
        active = (Z[rows, j] - Z[:, target] > -cfg.kappa).astype(float)
        up = np.zeros_like(Z)
        up[rows, j] = active
        up[:, target] = -active
        gx = net.backward(X, up, through_head=False).d_input
        return hit, gx * box.width + 2 * cfg.lam * U

    u, it = _descend(probe, box, cfg)
    res = box.result(u, False, it, target)
    res.success = _hits_discrete(victim, res.perturbed, target)
    return res


def craft_continuous(victim, obs, target, cfg: PerturbConfig, spec) -> CraftResult:
    """Drive a deterministic policy's output toward ``target``.

    Minimizes ``||pi(s + delta) - target||^2 + lam * ||u||^2``; success means
    every action component lands within ``tol_cont`` of the target.
    """
    target = np.atleast_1d(np.asarray(target, dtype=np.float64))
    box = _Box(obs, *_spec_bounds(spec), cfg.eps_inf)
    if _hits_continuous(victim, box.obs, target, cfg.tol_cont):
        return box.result(np.zeros_like(box.obs), True, 0, target)
    if cfg.eps_inf == 0:
        return box.result(np.zeros_like(box.obs), False, 0, target)
    net = victim.net

    def probe(U):
        X = box.state(U)
        diff = net.forward(X) - target
        hit = np.max(np.abs(diff), axis=1) <= cfg.tol_cont
        gx = net.backward(X, 2 * diff).d_input
        return hit, gx * box.width + 2 * cfg.lam * U

    u, it = _descend(probe, box, cfg)
    res = box.result(u, False, it, target)
    res.success = _hits_continuous(victim, res.perturbed, target, cfg.tol_cont)
    return res


def fgsm_targeted(victim, obs, target, eps: float, spec, tol_cont: float = 0.1) -> CraftResult:
    """Single signed-gradient step toward ``target``; ``sign(0) = 0``."""
    net = victim.net
    box = _Box(obs, *_spec_bounds(spec), eps)
    x = box.obs
    if victim.discrete:
        target = int(target)
        p = softmax(net.logits(x))
        up = p.copy()
        up[target] -= 1.0  # d(-log p_t)/dz
        g = net.backward(x, up, through_head=False).d_input
    else:
        target = np.atleast_1d(np.asarray(target, dtype=np.float64))
        g = net.backward(x, 2 * (net.forward(x) - target)).d_input
    u = -eps * np.sign(g * box.width)
    res = box.result(u, False, 1, target)
    if victim.discrete:
        res.success = _hits_discrete(victim, res.perturbed, target)
    else:
        res.success = _hits_continuous(victim, res.perturbed, target, tol_cont)
    return res


def craft(victim, obs, target, cfg: PerturbConfig, spec) -> CraftResult:
    """Dispatch on ``cfg.method`` (``cw`` or ``fgsm``) and the victim's action type."""
    if cfg.method == "fgsm":
        return fgsm_targeted(victim, obs, target, cfg.eps_inf, spec, cfg.tol_cont)
    if cfg.method != "cw":
        raise ValueError(f"unknown crafting method {cfg.method!r}")
    if victim.discrete:
        return craft_discrete(victim, obs, target, cfg, spec)
    return craft_continuous(victim, obs, target, cfg, spec)
