"""Host-level attacker MDP: states, actions, reward features and planning.

The state space is the 16-point cube over (active, privs, ioc, c2) plus one
absorbing terminal state entered by ``Exit``.  Actions that are not enabled in
a state (e.g. ``C2`` before initial access) are self-loops with zero features
so that T stays total.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from ._pykernels import first_max

FEATURES = (
    "discoverability",
    "attributability",
    "sophistication",
    "impact",
    "duration",
    "evasion",
)
FEATURE_ABBREV = {
    "discoverability": "Dis",
    "attributability": "Att",
    "sophistication": "Sop",
    "impact": "Imp",
    "duration": "Dur",
    "evasion": "Eva",
}
N_FEATURES = len(FEATURES)
N_STATES = 17
TERMINAL = 16


class AttackerAction(enum.IntEnum):
    InitialAccessUser = 0
    InitialAccessRoot = 1
    C2 = 2
    IngressToolTransfer = 3
    PrivEsc = 4
    DataExfil = 5
    DefenseEvasion = 6
    Exit = 7

    @classmethod
    def parse(cls, name: str) -> "AttackerAction":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown attacker action {name!r}") from None

    @property
    def is_initial_access(self) -> bool:
        return self in (AttackerAction.InitialAccessUser, AttackerAction.InitialAccessRoot)


N_ACTIONS = len(AttackerAction)


@dataclass(frozen=True, order=True)
class MdpState:
    active: bool = False
    privs: str = "user"
    ioc: bool = False
    c2: bool = False
    terminal: bool = False

    def __post_init__(self):
        if self.privs not in ("user", "root"):
            raise ValueError(f"privs must be 'user' or 'root', got {self.privs!r}")

    @property
    def index(self) -> int:
        if self.terminal:
            return TERMINAL
        return (
            (8 if self.active else 0)
            | (4 if self.privs == "root" else 0)
            | (2 if self.ioc else 0)
            | (1 if self.c2 else 0)
        )

    @classmethod
    def from_index(cls, i: int) -> "MdpState":
        if i == TERMINAL:
            return TERMINAL_STATE
        if not 0 <= i < 16:
            raise ValueError(f"state index out of range: {i}")
        return cls(
            active=bool(i & 8),
            privs="root" if i & 4 else "user",
            ioc=bool(i & 2),
            c2=bool(i & 1),
        )

    def replace(self, **changes) -> "MdpState":
        values = dict(active=self.active, privs=self.privs, ioc=self.ioc, c2=self.c2)
        values.update(changes)
        return MdpState(**values)

    def to_json(self) -> dict:
        if self.terminal:
            return {"terminal": True}
        return {"active": self.active, "privs": self.privs, "ioc": self.ioc, "c2": self.c2}

    @classmethod
    def from_json(cls, obj: Mapping) -> "MdpState":
        if obj.get("terminal"):
            return TERMINAL_STATE
        return cls(
            active=bool(obj["active"]),
            privs=obj["privs"],
            ioc=bool(obj["ioc"]),
            c2=bool(obj["c2"]),
        )


INITIAL_STATE = MdpState()
TERMINAL_STATE = MdpState(terminal=True)
ALL_STATES = tuple(MdpState.from_index(i) for i in range(16))


def features(s: MdpState, a: AttackerAction) -> np.ndarray:
    """Binary reward features of taking ``a`` in ``s``, in ``FEATURES`` order."""
    a = AttackerAction(a)
    phi = np.zeros(N_FEATURES)
    if s.terminal:
        return phi
    if s.active:
        if a is AttackerAction.IngressToolTransfer:
            phi[0] = 1.0
        elif a is AttackerAction.C2:
            phi[1] = 1.0
        elif a is AttackerAction.PrivEsc:
            phi[3] = 1.0
        elif a is AttackerAction.DataExfil:
            phi[4] = 1.0
        elif a is AttackerAction.DefenseEvasion and s.ioc:
            phi[5] = 1.0
    elif a is AttackerAction.InitialAccessRoot:
        phi[2] = 1.0
    return phi


def _effect(s: MdpState, a: AttackerAction, p_esc: float) -> dict[MdpState, float]:
    if s.terminal:
        return {s: 1.0}
    if not s.active:
        if a is AttackerAction.InitialAccessUser:
            return {s.replace(active=True, privs="user"): 1.0}
        if a is AttackerAction.InitialAccessRoot:
            return {s.replace(active=True, privs="root"): 1.0}
        return {s: 1.0}
    if a is AttackerAction.C2:
        return {s.replace(c2=True): 1.0}
    if a is AttackerAction.IngressToolTransfer:
        return {s.replace(ioc=True): 1.0}
    if a is AttackerAction.PrivEsc:
        up = s.replace(privs="root")
        if up == s or p_esc >= 1.0:
            return {up: 1.0}
        return {up: p_esc, s: 1.0 - p_esc}
    if a is AttackerAction.DefenseEvasion and s.ioc:
        return {s.replace(ioc=False): 1.0}
    if a is AttackerAction.Exit:
        return {TERMINAL_STATE: 1.0}
    return {s: 1.0}


@dataclass(frozen=True)
class AttackerMdp:
    gamma: float = 0.95
    p_esc: float = 0.8
    succ: np.ndarray = field(init=False, repr=False, compare=False)
    prob: np.ndarray = field(init=False, repr=False, compare=False)
    phi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.p_esc <= 1.0:
            raise ValueError(f"p_esc must lie in (0, 1], got {self.p_esc}")
        succ = np.zeros((N_STATES, N_ACTIONS, 2), dtype=np.int64)
        prob = np.zeros((N_STATES, N_ACTIONS, 2))
        phi = np.zeros((N_STATES, N_ACTIONS, N_FEATURES))
        for i in range(N_STATES):
            s = MdpState.from_index(i)
            for a in AttackerAction:
                outcomes = list(_effect(s, a, self.p_esc).items())
                for k, (s2, p) in enumerate(outcomes):
                    succ[i, a, k] = s2.index
                    prob[i, a, k] = p
                if len(outcomes) == 1:
                    succ[i, a, 1] = succ[i, a, 0]
                phi[i, a] = features(s, a)
        for arr in (succ, prob, phi):
            arr.setflags(write=False)
        object.__setattr__(self, "succ", succ)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "phi", phi)

    def transition(self, s: MdpState, a: AttackerAction) -> dict[MdpState, float]:
        return _effect(s, AttackerAction(a), self.p_esc)

    def transition_matrix(self) -> np.ndarray:
        T = np.zeros((N_STATES, N_ACTIONS, N_STATES))
        for k in range(2):
            np.add.at(
                T,
                (np.arange(N_STATES)[:, None], np.arange(N_ACTIONS)[None, :], self.succ[:, :, k]),
                self.prob[:, :, k],
            )
        return T

    def reward(self, w) -> np.ndarray:
        return self.phi @ np.asarray(w, dtype=float)

    def simulator(self) -> "Simulator":
        return Simulator(self)


def reward(s: MdpState, a: AttackerAction, w) -> float:
    return float(features(s, a) @ np.asarray(w, dtype=float))


def value_iteration(mdp: AttackerMdp, w, tol: float = 1e-8, max_iter: int = 100_000, warm_start=None):
    """Optimal Q and the feature occupancy of its greedy policy.

    Iterates Q and mu jointly, so ``Q == mu @ w`` holds at every sweep; the
    greedy policy breaks ties toward the lowest action index.  ``warm_start``
    is an occupancy array from a previous call (e.g. a nearby ``w``).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = np.ascontiguousarray(w, dtype=np.float64)
    Q, mu, _, _ = kernels.bellman_occupancy(
        mdp.succ, np.ascontiguousarray(mdp.prob), mdp.phi, w, float(mdp.gamma), float(tol), int(max_iter), warm_start
    )
    return Q, mu


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    """Greedy action per state; near-exact ties go to the lowest action index."""
    return first_max(Q).astype(np.int64)


def bellman_residual(mdp: AttackerMdp, w, Q: np.ndarray) -> float:
    V = Q.max(axis=1)
    backup = mdp.reward(w) + mdp.gamma * np.einsum("sak,sak->sa", mdp.prob, V[mdp.succ])
    return float(np.abs(backup - Q).max())


Policy = Callable[[MdpState], AttackerAction]


def _as_policy(policy) -> Policy:
    if callable(policy):
        return policy
    table = np.asarray(policy)
    return lambda s: AttackerAction(int(table[s.index]))


def rollout(mdp: AttackerMdp, policy, s0: MdpState = INITIAL_STATE, horizon: int = 20, rng_seed=None):
    """Sample one trajectory; stops early once the terminal state is reached.

    ``policy`` is a callable ``MdpState -> AttackerAction`` or an array indexed
    by state index.
    """
    from .trajectory import Trajectory

    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    act = _as_policy(policy)
    rng = np.random.default_rng(rng_seed)
    steps = []
    s = s0
    for _ in range(horizon):
        if s.terminal:
            break
        a = AttackerAction(act(s))
        steps.append((s, a))
        outcomes = mdp.transition(s, a)
        states = list(outcomes)
        s = states[rng.choice(len(states), p=list(outcomes.values()))]
    return Trajectory(steps=tuple(steps), exit_synthesized=False, label="rollout")


class Simulator:
    """Generative access to the MDP: sampled transitions only.

    The learner never reads ``T``; it hands over a policy table and receives
    sampled transitions with their observed feature vectors.
    """

    n_states = N_STATES
    n_actions = N_ACTIONS
    n_features = N_FEATURES
    terminal = TERMINAL

    def __init__(self, mdp: AttackerMdp):
        self._mdp = mdp
        self.gamma = mdp.gamma

    def episodes(self, policy_probs: np.ndarray, starts: Sequence[int], horizon: int, rng: np.random.Generator):
        starts = np.ascontiguousarray(starts, dtype=np.int64)
        uniforms = rng.random((len(starts), horizon, 2))
        return kernels.sample_episodes(
            self._mdp.succ,
            np.ascontiguousarray(self._mdp.prob),
            self._mdp.phi,
            np.ascontiguousarray(policy_probs, dtype=np.float64),
            starts,
            int(horizon),
            TERMINAL,
            uniforms,
        )

    def policy_returns(self, policy: np.ndarray, w, s0: int, horizon: int, n: int, rng: np.random.Generator):
        uniforms = rng.random((n, horizon))
        return kernels.policy_returns(
            self._mdp.succ,
            np.ascontiguousarray(self._mdp.prob),
            np.ascontiguousarray(self._mdp.reward(w)),
            np.ascontiguousarray(policy, dtype=np.int64),
            int(s0),
            int(horizon),
            float(self.gamma),
            TERMINAL,
            uniforms,
        )
