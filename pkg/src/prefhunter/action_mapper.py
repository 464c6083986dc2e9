"""ATT&CK-style action templates, matching and trajectory extraction.

A template is a small pattern graph.  Matching binds pattern nodes to scenario
nodes (injectively) so that every pattern edge is realized by a scenario edge
of the same kind, every node constraint holds under the scenario's taint tags
and the edge-order constraints are respected.  The raw bindings are then
reduced to actions: one per newly tainted subject or file, C2 traffic
collapsed into bursts per remote address, and exfiltration sends no longer
counted as plain C2.
"""
from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field

from .errors import OrphanAction
from .mdp import AttackerAction, AttackerMdp, INITIAL_STATE
from .provenance import Edge, ScenarioGraph
from .trajectory import Trajectory, next_state

DEFAULT_BURST_GAP_NS = 30 * 1_000_000_000


@dataclass(frozen=True)
class PatternNode:
    name: str
    kind: str
    untrusted: bool | None = None  # None: no requirement
    principal: str | None = None
    external: bool = False


@dataclass(frozen=True)
class PatternEdge:
    src: str
    dst: str
    kind: str
    # the edge must be what first tainted the destination's base
    taints_dst: bool = False


@dataclass(frozen=True)
class TemplateGraph:
    action: AttackerAction
    nodes: tuple
    edges: tuple
    order: tuple = ()  # (i, j): edge i happens before edge j

    def __post_init__(self):
        names = {n.name for n in self.nodes}
        if len(names) != len(self.nodes):
            raise ValueError("duplicate pattern node names")
        for e in self.edges:
            if e.src not in names or e.dst not in names:
                raise ValueError(f"edge {e} references an unknown pattern node")
        if not any(n.untrusted for n in self.nodes):
            raise ValueError("a template needs at least one taint-required node")
        # connectivity
        adj = {n: set() for n in names}
        for e in self.edges:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        seen, todo = set(), [self.nodes[0].name]
        while todo:
            n = todo.pop()
            if n not in seen:
                seen.add(n)
                todo.extend(adj[n] - seen)
        if seen != names:
            raise ValueError("template graph must be connected")

    def node(self, name) -> PatternNode:
        return next(n for n in self.nodes if n.name == name)


def builtin_templates() -> list:
    A = AttackerAction
    ext = PatternNode("N", "NetflowObject", external=True)
    return [
        TemplateGraph(
            A.InitialAccessUser,
            (PatternNode("N", "NetflowObject", untrusted=True, external=True),
             PatternNode("S", "Subject", untrusted=True, principal="user")),
            (PatternEdge("N", "S", "RECV", taints_dst=True),),
        ),
        TemplateGraph(
            A.InitialAccessRoot,
            (PatternNode("N", "NetflowObject", untrusted=True, external=True),
             PatternNode("S", "Subject", untrusted=True, principal="root")),
            (PatternEdge("N", "S", "RECV", taints_dst=True),),
        ),
        TemplateGraph(
            A.C2,
            (PatternNode("S", "Subject", untrusted=True), ext),
            (PatternEdge("S", "N", "SEND"),),
        ),
        TemplateGraph(
            A.IngressToolTransfer,
            (PatternNode("S", "Subject", untrusted=True), PatternNode("F", "FileObject", untrusted=True)),
            (PatternEdge("S", "F", "WRITE", taints_dst=True),),
        ),
        TemplateGraph(
            A.PrivEsc,
            (PatternNode("F", "FileObject", untrusted=True),
             PatternNode("S", "Subject", untrusted=True, principal="root")),
            (PatternEdge("F", "S", "EXEC"),),
        ),
        TemplateGraph(
            A.DataExfil,
            (PatternNode("F", "FileObject", untrusted=False),
             PatternNode("S", "Subject", untrusted=True), ext),
            (PatternEdge("F", "S", "READ"), PatternEdge("S", "N", "SEND")),
            order=((0, 1),),
        ),
        TemplateGraph(
            A.DefenseEvasion,
            (PatternNode("S", "Subject", untrusted=True), PatternNode("F", "FileObject", untrusted=True)),
            (PatternEdge("S", "F", "UNLINK"),),
        ),
    ]


def is_external(addr: str, allowlist=()) -> bool:
    """Outside private, loopback and link-local ranges and not allowlisted."""
    try:
        ip = ipaddress.ip_address(addr)
    except ValueError:
        return False
    if ip.is_private or ip.is_loopback or ip.is_link_local or ip.is_unspecified or ip.is_multicast:
        return False
    for item in allowlist:
        if ip in ipaddress.ip_network(item, strict=False):
            return False
    return True


@dataclass(frozen=True)
class ActionMatch:
    action: AttackerAction
    binding: tuple  # ((pattern name, (base, version)), ...) sorted by name
    ts: int
    seq: int
    evidence: tuple  # Edge per pattern edge
    attrs: dict = field(default_factory=dict, compare=False, hash=False)  # name -> node attrs
    escalated: bool | None = field(default=None, compare=False)

    def bound(self, name) -> tuple:
        return dict(self.binding)[name]

    def to_json(self) -> dict:
        out = {
            "action": self.action.name,
            "binding": {k: list(v) for k, v in self.binding},
            "ts": self.ts,
            "seq": self.seq,
            "evidence": [e.to_json() for e in self.evidence],
            "attrs": self.attrs,
        }
        if self.escalated is not None:
            out["escalated"] = self.escalated
        return out

    @classmethod
    def from_json(cls, obj) -> "ActionMatch":
        return cls(
            action=AttackerAction.parse(obj["action"]),
            binding=tuple(sorted((k, tuple(v)) for k, v in obj["binding"].items())),
            ts=obj["ts"],
            seq=obj["seq"],
            evidence=tuple(Edge.from_json(e) for e in obj["evidence"]),
            attrs=obj.get("attrs", {}),
            escalated=obj.get("escalated"),
        )


class _Context:
    def __init__(self, sg: ScenarioGraph, allowlist):
        self.sg = sg
        self.allowlist = tuple(allowlist)
        self.by_kind = {}
        for e in sg.all_edges():
            self.by_kind.setdefault(e.kind, []).append(e)

    def node_ok(self, pn: PatternNode, key) -> bool:
        node = self.sg.node(key)
        if node.kind != pn.kind:
            return False
        if pn.untrusted is not None and self.sg.is_untrusted(key) != pn.untrusted:
            return False
        if pn.principal is not None and node.attrs.get("principal") != pn.principal:
            return False
        if pn.external and not is_external(node.attrs.get("remote_addr", ""), self.allowlist):
            return False
        return True

    def edge_ok(self, pe: PatternEdge, e: Edge) -> bool:
        if not pe.taints_dst:
            return True
        return self.sg.taint_cause.get(e.dst[0]) == e


def raw_bindings(sg: ScenarioGraph, template: TemplateGraph, allowlist=()) -> set:
    """Every constraint-satisfying injective binding as (binding, edges) pairs."""
    ctx = _Context(sg, allowlist)
    out = set()
    pedges = template.edges

    def extend(i, binding, chosen):
        if i == len(pedges):
            for a, b in template.order:
                if (chosen[a].ts, chosen[a].seq) >= (chosen[b].ts, chosen[b].seq):
                    return
            out.add((tuple(sorted(binding.items())), tuple(chosen)))
            return
        pe = pedges[i]
        for e in ctx.by_kind.get(pe.kind, ()):
            new = {}
            ok = True
            for name, key in ((pe.src, e.src), (pe.dst, e.dst)):
                have = binding.get(name, new.get(name))
                if have is not None:
                    if have != key:
                        ok = False
                        break
                    continue
                if key in binding.values() or key in new.values():
                    ok = False  # injectivity
                    break
                if not ctx.node_ok(template.node(name), key):
                    ok = False
                    break
                new[name] = key
            if ok and ctx.edge_ok(pe, e):
                extend(i + 1, {**binding, **new}, chosen + [e])

    extend(0, {}, [])
    return out


def _make(sg, action, binding, edges) -> ActionMatch:
    last = max(edges, key=lambda e: (e.ts, e.seq))
    attrs = {name: dict(sg.node(key).attrs) for name, key in binding}
    return ActionMatch(action, binding, last.ts, last.seq, tuple(edges), attrs)


def _escalated(sg: ScenarioGraph, m: ActionMatch) -> bool:
    """A later FORK by the escalated subject yields a root, untrusted child."""
    base = m.bound("S")[0]
    t = (m.ts, m.seq)
    for e in sg.edges:
        if e.kind == "FORK" and e.src[0] == base and (e.ts, e.seq) > t:
            child = sg.node(e.dst)
            if child.attrs.get("principal") == "root" and sg.is_untrusted(e.dst):
                return True
    return False


def select_matches(sg: ScenarioGraph, raw: dict, burst_gap_ns: int = DEFAULT_BURST_GAP_NS) -> list:
    """Reduce raw bindings (action -> set of (binding, edges)) to action matches."""
    A = AttackerAction
    out = []
    exfil_sends = set()
    by_send = {}
    for binding, edges in raw.get(A.DataExfil, ()):
        send = edges[1]
        # one exfiltration per send; the earliest read is its evidence
        if send not in by_send or (edges[0].ts, edges[0].seq) < (by_send[send][1][0].ts, by_send[send][1][0].seq):
            by_send[send] = (binding, edges)
    for send, (binding, edges) in by_send.items():
        exfil_sends.add(send)
        out.append(_make(sg, A.DataExfil, binding, edges))

    for action in (A.InitialAccessUser, A.InitialAccessRoot, A.IngressToolTransfer):
        out.extend(_make(sg, action, b, e) for b, e in raw.get(action, ()))

    for b, e in raw.get(A.PrivEsc, ()):
        m = _make(sg, A.PrivEsc, b, e)
        out.append(ActionMatch(m.action, m.binding, m.ts, m.seq, m.evidence, m.attrs, _escalated(sg, m)))

    first_unlink = {}
    for b, e in raw.get(A.DefenseEvasion, ()):
        base = dict(b)["F"][0]
        if base not in first_unlink or (e[0].ts, e[0].seq) < (first_unlink[base][1][0].ts, first_unlink[base][1][0].seq):
            first_unlink[base] = (b, e)
    out.extend(_make(sg, A.DefenseEvasion, b, e) for b, e in first_unlink.values())

    c2 = sorted(
        (_make(sg, A.C2, b, e) for b, e in raw.get(A.C2, ()) if e[0] not in exfil_sends),
        key=lambda m: (m.ts, m.seq),
    )
    last_seen = {}
    for m in c2:
        addr = m.attrs["N"].get("remote_addr")
        prev = last_seen.get(addr)
        last_seen[addr] = m.ts
        if prev is not None and m.ts - prev <= burst_gap_ns:
            continue  # same burst
        out.append(m)
    out.sort(key=lambda m: (m.ts, m.seq, int(m.action)))
    return out


def match_templates(sg: ScenarioGraph, templates=None, burst_gap_ns: int = DEFAULT_BURST_GAP_NS,
                    allowlist=()) -> list:
    templates = builtin_templates() if templates is None else templates
    raw = {}
    for t in templates:
        raw.setdefault(t.action, set()).update(raw_bindings(sg, t, allowlist))
    return select_matches(sg, raw, burst_gap_ns)


def extract_trajectory(matches, mdp: AttackerMdp | None = None, label: str = "") -> Trajectory:
    """Replay time-ordered matches through the MDP's state updates.

    PrivEsc outcomes come from the evidence recorded on the match; an Exit
    step is appended at the end.
    """
    matches = list(matches)
    if not matches or not matches[0].action.is_initial_access:
        first = matches[0].action.name if matches else "nothing"
        raise OrphanAction(f"trajectory must start with initial access, found {first}")
    s = INITIAL_STATE
    steps = []
    iocs, addrs = [], []
    for m in matches:
        steps.append((s, m.action))
        escalated = bool(m.escalated) if m.action is AttackerAction.PrivEsc else True
        s = next_state(s, m.action, escalated)
        if m.action is AttackerAction.IngressToolTransfer:
            path = m.attrs.get("F", {}).get("path")
            if path and path not in iocs:
                iocs.append(path)
        if m.action in (AttackerAction.C2, AttackerAction.DataExfil):
            addr = m.attrs.get("N", {}).get("remote_addr")
            if addr and addr not in addrs:
                addrs.append(addr)
    steps.append((s, AttackerAction.Exit))
    return Trajectory(steps=tuple(steps), ioc_files=tuple(iocs), c2_addrs=tuple(addrs), label=label,
                      exit_synthesized=True)


def dumps_matches(matches) -> str:
    return json.dumps([m.to_json() for m in matches], indent=1, sort_keys=True)


def loads_matches(text: str) -> list:
    return [ActionMatch.from_json(o) for o in json.loads(text)]
