"""State-action trajectories and their JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mdp import AttackerAction, MdpState


@dataclass(frozen=True)
class Trajectory:
    steps: tuple  # of (MdpState, AttackerAction)
    ioc_files: tuple = ()
    c2_addrs: tuple = ()
    label: str = ""
    # True when the trailing Exit was appended by replay rather than observed
    exit_synthesized: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.steps)

    @property
    def actions(self) -> list:
        return [a for _, a in self.steps]

    def observed_steps(self) -> tuple:
        """Steps that count as evidence of the attacker's decisions."""
        if self.exit_synthesized and self.steps and self.steps[-1][1] is AttackerAction.Exit:
            return self.steps[:-1]
        return self.steps

    def evidence_arrays(self):
        obs = self.observed_steps()
        states = np.fromiter((s.index for s, _ in obs), dtype=np.int64, count=len(obs))
        actions = np.fromiter((int(a) for _, a in obs), dtype=np.int64, count=len(obs))
        return states, actions

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "steps": [{"state": s.to_json(), "action": a.name} for s, a in self.steps],
            "ioc_files": list(self.ioc_files),
            "c2_addrs": list(self.c2_addrs),
            "exit_synthesized": self.exit_synthesized,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Trajectory":
        steps = tuple(
            (MdpState.from_json(st["state"]), AttackerAction.parse(st["action"])) for st in obj["steps"]
        )
        return cls(
            steps=steps,
            ioc_files=tuple(obj.get("ioc_files", ())),
            c2_addrs=tuple(obj.get("c2_addrs", ())),
            label=obj.get("label", ""),
            exit_synthesized=bool(obj.get("exit_synthesized", False)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def replay(actions, outcomes=None, p_esc_outcome_default=True) -> tuple:
    """Deterministic replay of an action sequence through the MDP effects.

    ``outcomes`` lists PrivEsc results in order (True = escalated); missing
    entries take ``p_esc_outcome_default``.
    """
    from .mdp import INITIAL_STATE

    pending = list(outcomes or ())
    s = INITIAL_STATE
    steps = []
    for a in actions:
        a = AttackerAction(a)
        steps.append((s, a))
        s = next_state(s, a, pending.pop(0) if (a is AttackerAction.PrivEsc and pending) else p_esc_outcome_default)
    return tuple(steps)


def next_state(s: MdpState, a: AttackerAction, escalated: bool = True) -> MdpState:
    """Observed successor: the MDP effect with PrivEsc resolved by evidence."""
    from .mdp import TERMINAL_STATE

    if s.terminal:
        return s
    if not s.active:
        if a is AttackerAction.InitialAccessUser:
            return s.replace(active=True, privs="user")
        if a is AttackerAction.InitialAccessRoot:
            return s.replace(active=True, privs="root")
        return s
    if a is AttackerAction.C2:
        return s.replace(c2=True)
    if a is AttackerAction.IngressToolTransfer:
        return s.replace(ioc=True)
    if a is AttackerAction.PrivEsc:
        return s.replace(privs="root") if escalated else s
    if a is AttackerAction.DefenseEvasion and s.ioc:
        return s.replace(ioc=False)
    if a is AttackerAction.Exit:
        return TERMINAL_STATE
    return s
