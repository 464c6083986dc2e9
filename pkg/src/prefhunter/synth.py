"""Scripted synthetic attacks rendered as audit logs.

Each abstract step is written out as the smallest event pattern its template
recognises, one step per minute:

* initial access: the entry process receives from an external socket
* C2: a fresh socket per session, one SEND and one RECV
* tool transfer: the attacker process writes the file
* privilege escalation: fork a root helper that executes the file; a
  successful attempt forks a further root child
* defense evasion: unlink the file
* data exfiltration: read a private file, send to an external socket
* ``Execute`` (not an MDP action): fork a user helper that runs the file

Benign background activity uses its own processes, files and sockets, so it
never connects causally to the attack.
"""
from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field

import numpy as np

from .action_mapper import is_external
from .errors import InvalidScript
from .ingest import AuditEvent, LogCorpus, NodeRecord, parse_time
from .mdp import AttackerAction
from .trajectory import Trajectory, replay

NS = 1_000_000_000
STEP_GAP_NS = 60 * NS
START_TS = parse_time("2018-04-06T11:00:00Z")
_NAMESPACE = uuid.UUID("6f1d2c3a-9b8e-4f70-a1d2-5c4b3a291807")
EXECUTE = "Execute"

_ALIASES = {
    "IAU": "InitialAccessUser",
    "IAR": "InitialAccessRoot",
    "ITT": "IngressToolTransfer",
    "PE": "PrivEsc",
    "DE": "DefenseEvasion",
    "DX": "DataExfil",
}


@dataclass(frozen=True)
class ScriptStep:
    action: str  # AttackerAction name, an alias above, or "Execute"
    target: str | None = None  # C2/exfil address, or file path
    success: bool = True  # PrivEsc outcome

    def __post_init__(self):
        object.__setattr__(self, "action", _ALIASES.get(self.action, self.action))

    @property
    def name(self) -> str:
        return _ALIASES.get(self.action, self.action)

    def to_json(self) -> dict:
        out = {"action": self.name}
        if self.target is not None:
            out["target"] = self.target
        if self.name == "PrivEsc":
            out["success"] = self.success
        return out


@dataclass(frozen=True)
class AttackScript:
    name: str
    steps: tuple
    noise_ratio: float = 0.0
    seed: int = 42
    entry_addr: str = "81.49.200.166"
    entry_exe: str = "/usr/local/sbin/nginx"
    emphasis: tuple = ()  # feature abbreviations expected to dominate

    def with_noise(self, noise_ratio: float, seed: int | None = None) -> "AttackScript":
        return AttackScript(self.name, self.steps, noise_ratio, self.seed if seed is None else seed,
                            self.entry_addr, self.entry_exe, self.emphasis)

    def actions(self) -> list:
        """MDP actions of the script, without the synthesized Exit."""
        return [AttackerAction[s.name] for s in self.steps if s.name != EXECUTE]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "steps": [s.to_json() for s in self.steps],
            "noise_ratio": self.noise_ratio,
            "seed": self.seed,
            "entry_addr": self.entry_addr,
            "entry_exe": self.entry_exe,
            "emphasis": list(self.emphasis),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttackScript":
        steps = tuple(ScriptStep(s["action"], s.get("target"), bool(s.get("success", True))) for s in obj["steps"])
        return cls(
            name=obj["name"],
            steps=steps,
            noise_ratio=float(obj.get("noise_ratio", 0.0)),
            seed=int(obj.get("seed", 42)),
            entry_addr=obj.get("entry_addr", "81.49.200.166"),
            entry_exe=obj.get("entry_exe", "/usr/local/sbin/nginx"),
            emphasis=tuple(obj.get("emphasis", ())),
        )


@dataclass
class GroundTruth:
    label: str
    tainted_bases: frozenset
    attack_nodes: frozenset
    action_counts: dict  # action name -> expected matches
    trajectory: Trajectory
    emphasis: tuple
    detection: str  # uuid of the attacker process
    detection_ts: int

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "tainted_bases": sorted(self.tainted_bases),
            "attack_nodes": sorted(self.attack_nodes),
            "action_counts": dict(sorted(self.action_counts.items())),
            "trajectory": self.trajectory.to_json(),
            "emphasis": list(self.emphasis),
            "detection": self.detection,
            "detection_ts": self.detection_ts,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        return cls(
            label=obj["label"],
            tainted_bases=frozenset(obj["tainted_bases"]),
            attack_nodes=frozenset(obj["attack_nodes"]),
            action_counts=dict(obj["action_counts"]),
            trajectory=Trajectory.from_json(obj["trajectory"]),
            emphasis=tuple(obj["emphasis"]),
            detection=obj["detection"],
            detection_ts=int(obj["detection_ts"]),
        )


def validate(script: AttackScript) -> None:
    valid = {a.name for a in AttackerAction} - {"Exit"} | {EXECUTE}
    if not script.steps:
        raise InvalidScript(f"{script.name}: no steps")
    if script.noise_ratio < 0:
        raise InvalidScript(f"{script.name}: noise_ratio must be >= 0")
    if not is_external(script.entry_addr):
        raise InvalidScript(f"{script.name}: entry address {script.entry_addr} is not external")
    written, deleted = set(), set()
    for i, step in enumerate(script.steps):
        name = step.name
        if name not in valid:
            raise InvalidScript(f"{script.name} step {i}: unknown action {step.action!r}")
        first = i == 0
        ia = name in ("InitialAccessUser", "InitialAccessRoot")
        if first != ia:
            raise InvalidScript(f"{script.name} step {i}: initial access must be the first step and only there")
        if name in ("C2", "DataExfil"):
            if not step.target or not is_external(step.target):
                raise InvalidScript(f"{script.name} step {i}: {name} needs an external address")
        elif name == "IngressToolTransfer":
            if not step.target:
                raise InvalidScript(f"{script.name} step {i}: tool transfer needs a path")
            if step.target in written:
                raise InvalidScript(f"{script.name} step {i}: {step.target} transferred twice")
            written.add(step.target)
        elif name in ("PrivEsc", "DefenseEvasion", EXECUTE):
            if step.target not in written:
                raise InvalidScript(f"{script.name} step {i}: {step.target!r} was never transferred")
            if step.target in deleted:
                raise InvalidScript(f"{script.name} step {i}: {step.target} was already deleted")
            if name == "DefenseEvasion":
                deleted.add(step.target)


class _Writer:
    def __init__(self, script: AttackScript):
        self.script = script
        self.nodes = {}
        self.events = []  # (ts, tiebreak, kind, subject, object)
        self._tie = 0

    def uid(self, role: str) -> str:
        return str(uuid.uuid5(_NAMESPACE, f"{self.script.name}/{role}"))

    def node(self, role, kind, **attrs) -> str:
        u = self.uid(role)
        if u not in self.nodes:
            self.nodes[u] = NodeRecord(u, kind, attrs)
        return u

    def event(self, ts, kind, subject, obj):
        self._tie += 1
        self.events.append((ts, self._tie, kind, subject, obj))


def _expected_trajectory(script: AttackScript) -> Trajectory:
    outcomes = [s.success for s in script.steps if s.name == "PrivEsc"]
    acts = script.actions() + [AttackerAction.Exit]
    iocs = [s.target for s in script.steps if s.name == "IngressToolTransfer"]
    addrs = []
    for s in script.steps:
        if s.name in ("C2", "DataExfil") and s.target not in addrs:
            addrs.append(s.target)
    return Trajectory(steps=replay(acts, outcomes), ioc_files=tuple(iocs), c2_addrs=tuple(addrs),
                      label=script.name, exit_synthesized=True)


def generate(script: AttackScript) -> tuple[LogCorpus, GroundTruth]:
    validate(script)
    w = _Writer(script)
    root_entry = script.steps[0].name == "InitialAccessRoot"
    attacker = w.node("attacker", "Subject", pid=1000, exe=script.entry_exe,
                      principal="root" if root_entry else "user")
    tainted = {attacker}
    files = {}
    counts = {}
    pid = 2000
    t = START_TS
    sessions = 0
    for i, step in enumerate(script.steps):
        t = START_TS + i * STEP_GAP_NS
        name = step.name
        if name != EXECUTE:
            counts[name] = counts.get(name, 0) + 1
        if name in ("InitialAccessUser", "InitialAccessRoot"):
            n0 = w.node("entry-socket", "NetflowObject", remote_addr=script.entry_addr, remote_port=443)
            tainted.add(n0)
            w.event(t, "RECV", attacker, n0)
        elif name == "C2":
            sessions += 1
            n = w.node(f"c2-{sessions}", "NetflowObject", remote_addr=step.target, remote_port=8080)
            tainted.add(n)
            w.event(t, "SEND", attacker, n)
            w.event(t + NS, "RECV", attacker, n)
        elif name == "IngressToolTransfer":
            f = w.node(f"file:{step.target}", "FileObject", path=step.target)
            files[step.target] = f
            tainted.add(f)
            w.event(t, "WRITE", attacker, f)
        elif name in ("PrivEsc", EXECUTE):
            pid += 1
            f = files[step.target]
            principal = "root" if name == "PrivEsc" else "user"
            helper = w.node(f"helper-{i}", "Subject", pid=pid, exe=step.target, principal=principal)
            tainted.add(helper)
            w.event(t, "FORK", attacker, helper)
            w.event(t + NS, "EXEC", helper, f)
            if name == "PrivEsc" and step.success:
                pid += 1
                child = w.node(f"elevated-{i}", "Subject", pid=pid, exe=step.target, principal="root")
                tainted.add(child)
                w.event(t + 2 * NS, "FORK", helper, child)
        elif name == "DefenseEvasion":
            w.event(t, "UNLINK", attacker, files[step.target])
        elif name == "DataExfil":
            secret = w.node(f"secret-{i}", "FileObject", path=f"/home/admin/private-{i}.db")
            n = w.node(f"exfil-{i}", "NetflowObject", remote_addr=step.target, remote_port=443)
            w.event(t, "READ", attacker, secret)
            w.event(t + NS, "SEND", attacker, n)
    attack_nodes = frozenset(w.nodes)
    t_end = t + 3 * NS
    n_attack = len(w.events)
    _add_noise(w, int(round(script.noise_ratio * n_attack)), START_TS, t_end)

    ordered = sorted(w.events)
    events = tuple(
        AuditEvent(ts, seq, kind, subj, obj) for seq, (ts, _, kind, subj, obj) in enumerate(ordered, start=1)
    )
    corpus = LogCorpus(nodes=dict(sorted(w.nodes.items())), events=events, window=(START_TS - NS, t_end + NS))
    truth = GroundTruth(
        label=script.name,
        tainted_bases=frozenset(tainted),
        attack_nodes=attack_nodes,
        action_counts=counts,
        trajectory=_expected_trajectory(script),
        emphasis=script.emphasis,
        detection=attacker,
        detection_ts=t_end,
    )
    return corpus, truth


_BENIGN_EXES = ("/usr/sbin/cron", "/usr/sbin/sshd", "/usr/bin/python3", "/bin/sh", "/usr/sbin/syslogd")
_BENIGN_PATHS = ("/var/log/messages", "/etc/hosts", "/var/db/locate.database", "/tmp/.X0-lock", "/home/user/notes.txt")
_BENIGN_ADDRS = ("10.0.4.12", "192.168.1.20", "93.184.216.34", "151.101.1.69")


def _add_noise(w: _Writer, n_events: int, t0: int, t1: int) -> None:
    if n_events <= 0:
        return
    rng = np.random.default_rng(w.script.seed)
    n_proc = max(2, n_events // 8)
    procs = [
        w.node(f"benign-proc-{k}", "Subject", pid=5000 + k, exe=_BENIGN_EXES[k % len(_BENIGN_EXES)],
               principal="root" if k % 3 == 0 else "user")
        for k in range(n_proc)
    ]
    files = [
        w.node(f"benign-file-{k}", "FileObject", path=f"{_BENIGN_PATHS[k % len(_BENIGN_PATHS)]}.{k}")
        for k in range(max(2, n_events // 6))
    ]
    socks = [
        w.node(f"benign-sock-{k}", "NetflowObject", remote_addr=_BENIGN_ADDRS[k % len(_BENIGN_ADDRS)],
               remote_port=int(1024 + k))
        for k in range(max(1, n_events // 10))
    ]
    kinds = ("READ", "WRITE", "RECV", "SEND", "EXEC", "FORK", "UNLINK")
    times = np.sort(rng.integers(t0, t1, size=n_events))
    for ts in times:
        kind = kinds[int(rng.integers(len(kinds)))]
        subj = procs[int(rng.integers(len(procs)))]
        if kind in ("RECV", "SEND"):
            obj = socks[int(rng.integers(len(socks)))]
        elif kind == "FORK":
            obj = procs[int(rng.integers(len(procs)))]
            if obj == subj:
                continue
        else:
            obj = files[int(rng.integers(len(files)))]
        w.event(int(ts), kind, subj, obj)


def _c2_cycle(addrs, n):
    return [ScriptStep("C2", addrs[k % len(addrs)]) for k in range(n)]


def builtin_scripts() -> list:
    """The six replica storylines, padded with C2 sessions to the published lengths."""
    S = ScriptStep
    c1 = ("78.205.235.65", "200.36.109.214")
    cadets1 = AttackScript(
        "CADETS-1",
        (S("IAR"), S("C2", c1[0]), S("C2", c1[1]), S("ITT", "/tmp/vUgefal"), S("PE", "/tmp/vUgefal"),
         S("DE", "/tmp/vUgefal"), S("ITT", "/var/log/devc"), *_c2_cycle(c1, 10)),
        emphasis=("Sop", "Att", "Imp", "Dis"),
    )
    c2 = ("76.56.184.25", "155.162.39.48")
    cadets2 = AttackScript(
        "CADETS-2",
        (S("IAU"), *_c2_cycle(c2, 4), S("ITT", "/tmp/grain")),
        emphasis=("Att", "Dis"),
    )
    c3 = ("76.56.184.25", "155.162.39.48", "53.158.101.118", "192.113.144.28")
    cadets3 = AttackScript(
        "CADETS-3",
        (S("IAU"), S("C2", c3[0]), S("C2", c3[1]), S("ITT", "/tmp/tmux-1002"), S("PE", "/tmp/tmux-1002", False),
         S("ITT", "/tmp/minions"), S("DE", "/tmp/tmux-1002"), S("C2", c3[2]),
         S("ITT", "/tmp/font"), S("PE", "/tmp/font", False), S("DE", "/tmp/font"),
         S("ITT", "/tmp/XIM"), S("PE", "/tmp/XIM", False), S("DE", "/tmp/XIM"), S("C2", c3[3]),
         S("ITT", "/var/log/netlog"), S("DE", "/var/log/netlog"), S("ITT", "/var/log/sendmail"),
         S("DE", "/var/log/sendmail"), S("ITT", "/tmp/main"), S("DE", "/tmp/main"),
         S("ITT", "/tmp/test"), S("DE", "/tmp/test"), S("PE", "/tmp/minions", True), *_c2_cycle(c3, 30)),
        emphasis=("Att", "Imp", "Dis", "Eva"),
    )
    c4 = ("76.56.184.25", "155.162.39.48", "53.158.101.118")
    cadets4 = AttackScript(
        "CADETS-4",
        (S("IAU"), S("C2", c4[0]), S("C2", c4[1]), S("C2", c4[2]), S("ITT", "/tmp/pEja72mA"),
         S("ITT", "/tmp/eWq10bVcx"), S("ITT", "/tmp/memhelp.so"), S("PE", "/tmp/pEja72mA"),
         S("ITT", "/tmp/eraseme"), S("ITT", "/tmp/done.so"), *_c2_cycle(c4, 6)),
        emphasis=("Att", "Imp", "Dis"),
    )
    t1 = ("146.153.68.151", "161.116.88.72")
    theia1 = AttackScript(
        "THEIA-1",
        (S("IAU"), S("C2", t1[0]), S("C2", t1[1]), S("ITT", "/home/admin/clean"), S("ITT", "/home/admin/profile"),
         S("PE", "/home/admin/clean"), S("PE", "/home/admin/profile"), *_c2_cycle(t1, 4)),
        entry_exe="/usr/lib/firefox/firefox",
        emphasis=("Att", "Imp", "Dis"),
    )
    gt = "/etc/firefox/native-messaging-hosts/gtcache"
    theia2 = AttackScript(
        "THEIA-2",
        (S("IAU"), S("ITT", gt), S(EXECUTE, gt), S("C2", "146.153.68.151"), S("ITT", "/var/log/wdev"),
         S("DE", gt), S("ITT", "/tmp/memtrace.so"), S("DE", "/var/log/wdev"), S("ITT", "/var/log/mail"),
         S("DE", "/tmp/memtrace.so"), S("PE", "/var/log/mail")),
        entry_exe="/usr/lib/firefox/firefox",
        emphasis=("Att", "Imp", "Dis", "Eva"),
    )
    return [cadets1, cadets2, cadets3, cadets4, theia1, theia2]


def script_by_name(name: str) -> AttackScript:
    for s in builtin_scripts():
        if s.name.lower() == name.lower():
            return s
    raise InvalidScript(f"no builtin script named {name!r}")


def load_script(path) -> AttackScript:
    with open(path) as fh:
        return AttackScript.from_json(json.load(fh))
