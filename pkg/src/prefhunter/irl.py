"""Reward inference from attacker trajectories.

Two learners share the Boltzmann likelihood

    P(a | s, w) = exp(beta Q*(s,a;w)) / sum_a' exp(beta Q*(s,a';w))

with a linear reward ``R(s,a) = w . phi(s,a)``:

* ``map_birl`` adds a log-prior and climbs the log-posterior with the exact
  planner in the loop.  Since ``Q* = w . mu`` where ``mu`` is the feature
  occupancy of the greedy policy, the gradient of ``Q*`` is ``mu`` wherever
  the greedy policy is unique.
* ``mle_irl`` never reads the transition model.  It samples episodes from a
  simulator under a softmax behaviour policy, estimates ``mu`` by TD
  learning on feature returns and follows the stochastic likelihood gradient.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import EmptyEvidence, NonFiniteObjective
from .mdp import (
    FEATURES,
    N_ACTIONS,
    N_FEATURES,
    TERMINAL,
    AttackerMdp,
    Simulator,
    greedy_policy,
    value_iteration,
)
from .trajectory import Trajectory

MAP_BIRL = "MAP_BIRL"
MLE_IRL = "MLE_IRL"
LINE_SEARCH_TOL = 1e-9


@dataclass
class IrlConfig:
    beta: float = 5.0
    prior: str = "uniform"  # "uniform" (box of half-width bound) or "gaussian"
    sigma: float = 1.0
    bound: float = 5.0
    step: float = 0.5
    step_max: float = 1e3  # cap on the adaptive step length
    decay: float = 0.0  # step length capped at step_max / (1 + decay * t)
    max_iters: int = 1000
    grad_tol: float = 1e-4
    restarts: int = 2
    seed: int = 42
    vi_tol: float = 1e-8
    # model-free learner
    episodes: int = 128
    horizon: int = 40
    explore: float = 0.1
    td_alpha: float = 0.2
    td_sweeps: int = 2
    mle_iters: int = 600
    mle_step: float = 0.5
    mle_decay: float = 0.01
    plateau_window: int = 25
    plateau_tol: float = 1e-3

    def __post_init__(self):
        if self.prior not in ("uniform", "gaussian"):
            raise ValueError(f"prior must be 'uniform' or 'gaussian', got {self.prior!r}")
        for name in ("sigma", "bound", "step", "step_max", "max_iters", "restarts", "vi_tol",
                     "episodes", "horizon", "td_sweeps", "mle_iters", "mle_step",
                     "plateau_window", "plateau_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0 or self.decay < 0 or self.mle_decay < 0 or self.grad_tol < 0:
            raise ValueError("beta, decay and grad_tol must be non-negative")
        if not 0.0 <= self.explore <= 1.0 or not 0.0 < self.td_alpha <= 1.0:
            raise ValueError("explore must lie in [0, 1] and td_alpha in (0, 1]")


def normalize(w) -> np.ndarray:
    """Scale so the largest |w_i| is 1; order relations are preserved."""
    w = np.asarray(w, dtype=float)
    m = float(np.abs(w).max()) if w.size else 0.0
    return w / m if m > 0 else w.copy()


@dataclass
class IrlResult:
    method: str
    w: np.ndarray
    trace: list
    converged: bool
    iterations: int = 0
    label: str = ""
    ile: tuple | None = None  # (mean, sd)
    config: dict = field(default_factory=dict)

    @property
    def normalized_w(self) -> np.ndarray:
        return normalize(self.w)

    def weights(self) -> dict:
        return dict(zip(FEATURES, map(float, self.w)))

    def to_json(self) -> dict:
        out = {
            "method": self.method,
            "label": self.label,
            "features": list(FEATURES),
            "w": [float(x) for x in self.w],
            "normalized_w": [float(x) for x in self.normalized_w],
            "trace": [float(x) for x in self.trace],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "config": self.config,
        }
        if self.ile is not None:
            out["ile"] = {"mean": float(self.ile[0]), "sd": float(self.ile[1])}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "IrlResult":
        ile = obj.get("ile")
        return cls(
            method=obj["method"],
            w=np.asarray(obj["w"], dtype=float),
            trace=list(obj.get("trace", [])),
            converged=bool(obj.get("converged", False)),
            iterations=int(obj.get("iterations", 0)),
            label=obj.get("label", ""),
            ile=(ile["mean"], ile["sd"]) if ile else None,
            config=obj.get("config", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _as_list(X) -> list:
    if isinstance(X, Trajectory):
        return [X]
    return list(X)


def evidence(X) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated (state index, action index) arrays over all trajectories."""
    parts = [t.evidence_arrays() for t in _as_list(X)]
    if not parts:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _softmax_terms(Q, states, actions, beta):
    z = beta * Q[states]
    lse = logsumexp(z, axis=1)
    ll = float((z[np.arange(len(states)), actions] - lse).sum())
    pi = np.exp(z - lse[:, None])
    return ll, pi


def _likelihood_grad(Q, mu, states, actions, beta):
    ll, pi = _softmax_terms(Q, states, actions, beta)
    m = mu[states]  # (N, A, F)
    grad = beta * (m[np.arange(len(states)), actions] - np.einsum("na,naf->nf", pi, m)).sum(axis=0)
    return ll, grad


def log_likelihood(X, w, mdp: AttackerMdp, beta: float, tol: float = 1e-8) -> float:
    states, actions = evidence(X)
    if len(states) == 0:
        return 0.0
    Q, _ = value_iteration(mdp, w, tol=tol)
    return _softmax_terms(Q, states, actions, beta)[0]


def log_prior(w, cfg: IrlConfig) -> tuple[float, np.ndarray]:
    w = np.asarray(w, dtype=float)
    if cfg.prior == "gaussian":
        return float(-0.5 * (w @ w) / cfg.sigma**2), -w / cfg.sigma**2
    if np.any(np.abs(w) > cfg.bound + 1e-12):
        return -math.inf, np.zeros_like(w)
    return 0.0, np.zeros_like(w)


class _Posterior:
    """Log-posterior with a warm-started planner."""

    def __init__(self, mdp, states, actions, cfg):
        self.mdp, self.states, self.actions, self.cfg = mdp, states, actions, cfg
        self._mu = None

    def __call__(self, w):
        Q, mu = value_iteration(self.mdp, w, tol=self.cfg.vi_tol, warm_start=self._mu)
        self._mu = mu
        ll, g = _likelihood_grad(Q, mu, self.states, self.actions, self.cfg.beta)
        lp, gp = log_prior(w, self.cfg)
        J = ll + lp
        if not np.isfinite(J) or not np.all(np.isfinite(g)):
            raise NonFiniteObjective(f"log-posterior is not finite at w={w}")
        return J, g + gp


def _project(w, cfg):
    return np.clip(w, -cfg.bound, cfg.bound) if cfg.prior == "uniform" else w


def _projected_grad(w, g, cfg):
    if cfg.prior != "uniform":
        return g
    pg = g.copy()
    pg[(w >= cfg.bound) & (g > 0)] = 0.0
    pg[(w <= -cfg.bound) & (g < 0)] = 0.0
    return pg


def _ascend(post: _Posterior, w0, cfg: IrlConfig, n: int):
    w = _project(np.asarray(w0, dtype=float), cfg)
    J, g = post(w)
    trace = [J]
    step = cfg.step
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        pg = _projected_grad(w, g, cfg) / n
        if np.abs(pg).max() < cfg.grad_tol:
            converged = True
            break
        cap = cfg.step_max / (1.0 + cfg.decay * it)
        step = min(step, cap)
        while True:
            wn = _project(w + step * pg, cfg)
            Jn, gn = post(wn)
            if Jn >= J - LINE_SEARCH_TOL:
                break
            step *= 0.5
            if step < 1e-12:
                wn = None
                break
        if wn is None:  # no ascent direction at this resolution: a kink or flat ridge
            converged = True
            break
        s_, y_ = wn - w, (gn - g) / n
        moved = np.abs(s_).max()
        w, J, g = wn, Jn, gn
        trace.append(J)
        if moved < 1e-12:
            converged = True
            break
        # Barzilai-Borwein length for the next step (curvature along s_)
        curv = -float(s_ @ y_)
        step = float(s_ @ s_) / curv if curv > 1e-16 else cap
        step = max(step, 1e-6)
    return w, trace, converged, it


def map_birl(X, mdp: AttackerMdp, cfg: IrlConfig | None = None) -> IrlResult:
    """Maximum a-posteriori weights by projected gradient ascent with restarts."""
    cfg = cfg or IrlConfig()
    trajs = _as_list(X)
    states, actions = evidence(trajs)
    if len(states) == 0:
        raise EmptyEvidence("no observed steps to learn from")
    rng = np.random.default_rng(cfg.seed)
    starts = [np.zeros(N_FEATURES)]
    scale = min(1.0, cfg.bound)
    starts += [rng.uniform(-scale, scale, N_FEATURES) for _ in range(cfg.restarts - 1)]
    best = None
    for w0 in starts:
        post = _Posterior(mdp, states, actions, cfg)
        w, trace, conv, it = _ascend(post, w0, cfg, len(states))
        if best is None or trace[-1] > best[1][-1] + 1e-12:
            best = (w, trace, conv, it)
    w, trace, conv, it = best
    return IrlResult(MAP_BIRL, w, trace, conv, it, label=trajs[0].label if trajs else "",
                     config=asdict(cfg))


def _behaviour(Qh, beta, explore):
    z = beta * Qh
    pi = np.exp(z - logsumexp(z, axis=1, keepdims=True))
    return (1.0 - explore) * pi + explore / Qh.shape[1]


def mle_irl(X, simulator: Simulator, cfg: IrlConfig | None = None) -> IrlResult:
    """Model-free likelihood ascent.

    Each iteration samples a batch of episodes with exploring starts under the
    softmax behaviour policy of the current estimate, runs TD sweeps on the
    feature-return table (warm-started across iterations) and steps along the
    likelihood gradient computed from that table.  The returned weights are
    the average of the final iterates.  Stops when the mean
    per-step log-likelihood over the last window moves less than
    ``plateau_tol`` from the window before it.
    """
    cfg = cfg or IrlConfig()
    trajs = _as_list(X)
    states, actions = evidence(trajs)
    if len(states) == 0:
        raise EmptyEvidence("no observed steps to learn from")
    n = len(states)
    rng = np.random.default_rng(cfg.seed)
    S, A, F = simulator.n_states, simulator.n_actions, simulator.n_features
    w = np.zeros(F)
    mu = np.zeros((S, A, F))
    trace = []
    iterates = []
    converged = False
    W = cfg.plateau_window
    it = 0
    for it in range(1, cfg.mle_iters + 1):
        policy = _behaviour(mu @ w, cfg.beta, cfg.explore)
        # exploring starts over the live states so every row gets visited
        starts = rng.integers(0, TERMINAL, size=cfg.episodes)
        st, ac, nx, ft, dn = simulator.episodes(policy, starts, cfg.horizon, rng)
        kernels.td_occupancy(
            st, ac, nx, np.ascontiguousarray(ft), np.ascontiguousarray(dn, dtype=np.uint8),
            mu, np.ascontiguousarray(w), float(simulator.gamma), float(cfg.td_alpha), int(cfg.td_sweeps),
        )
        ll, g = _likelihood_grad(mu @ w, mu, states, actions, cfg.beta)
        if not np.isfinite(ll) or not np.all(np.isfinite(g)):
            raise NonFiniteObjective("likelihood estimate is not finite")
        trace.append(ll)
        w = w + cfg.mle_step / (1.0 + cfg.mle_decay * it) * g / n
        iterates.append(w)
        if it >= 2 * W:
            recent = np.mean(trace[-W:]) / n
            before = np.mean(trace[-2 * W:-W]) / n
            if abs(recent - before) < cfg.plateau_tol:
                converged = True
                break
    # Polyak average over the last two windows damps the TD noise
    w = np.mean(iterates[-2 * W:], axis=0)
    return IrlResult(MLE_IRL, w, trace, converged, it, label=trajs[0].label if trajs else "",
                     config=asdict(cfg))


def discounted_return(traj: Trajectory, w, gamma: float) -> float:
    w = np.asarray(w, dtype=float)
    from .mdp import features

    total, disc = 0.0, 1.0
    for s, a in traj.steps:
        total += disc * float(features(s, a) @ w)
        disc *= gamma
    return total


def inverse_learning_error(X, result, mdp: AttackerMdp, n_samples: int = 1000,
                           horizon: int | None = None, seed: int = 0) -> tuple[float, float]:
    """|V_obs - V_learned| under the learned reward, with the rollout sd.

    V_obs is the discounted return of the observed steps; V_learned is the
    mean return of ``n_samples`` rollouts of the greedy policy for the
    learned reward from the trajectory's first state.  The horizon defaults
    to the trajectory length.  Several trajectories are averaged.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    w = np.asarray(result.w if isinstance(result, IrlResult) else result, dtype=float)
    Q, _ = value_iteration(mdp, w)
    policy = greedy_policy(Q)
    sim = mdp.simulator()
    rng = np.random.default_rng(seed)
    errs, sds = [], []
    for traj in _as_list(X):
        if not traj.steps:
            continue
        v_obs = discounted_return(traj, w, mdp.gamma)
        H = horizon or len(traj)
        rets = sim.policy_returns(policy, w, traj.steps[0][0].index, H, n_samples, rng)
        errs.append(abs(v_obs - float(rets.mean())))
        sds.append(float(rets.std(ddof=1)) if n_samples > 1 else 0.0)
    if not errs:
        return 0.0, 0.0
    return float(np.mean(errs)), float(np.mean(sds))


__all__ = [
    "IrlConfig",
    "IrlResult",
    "MAP_BIRL",
    "MLE_IRL",
    "N_ACTIONS",
    "discounted_return",
    "evidence",
    "inverse_learning_error",
    "log_likelihood",
    "log_prior",
    "map_birl",
    "mle_irl",
    "normalize",
]
