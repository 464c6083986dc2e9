"""Versioned provenance graphs, causal search and untrusted-tag propagation.

Edges point along information flow.  A node gets a new version when a
non-redundant inbound edge arrives after its current version already has
outbound edges; the old and new versions are linked by a ``VERSION`` edge.
Every version therefore receives all of its inbound edges before it emits any
outbound edge, which is what makes plain reachability in the versioned graph
coincide with time-respecting reachability over the raw events.
"""
from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable

from .errors import UnknownNode
from .ingest import LogCorpus

VERSION = "VERSION"
# event kinds whose information flows object -> subject
INBOUND = frozenset({"RECV", "READ", "EXEC"})


@dataclass(frozen=True)
class VersionedNode:
    base: str
    version: int
    kind: str = field(compare=False)
    attrs: dict = field(compare=False, hash=False, default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.base, self.version)


@dataclass(frozen=True)
class Edge:
    src: tuple  # (base, version)
    dst: tuple
    kind: str
    ts: int
    seq: int

    def to_json(self) -> dict:
        return {"src": self.src[0], "src_v": self.src[1], "dst": self.dst[0], "dst_v": self.dst[1],
                "kind": self.kind, "ts": self.ts, "seq": self.seq}

    @classmethod
    def from_json(cls, obj) -> "Edge":
        return cls((obj["src"], obj["src_v"]), (obj["dst"], obj["dst_v"]), obj["kind"], obj["ts"], obj["seq"])


def flow(kind: str, subject: str, obj: str) -> tuple[str, str]:
    """(source, destination) of an event's information flow."""
    return (obj, subject) if kind in INBOUND else (subject, obj)


class ProvGraph:
    """Immutable after construction."""

    def __init__(self, nodes: dict, edges: Iterable[Edge], window=(0, 0)):
        self.nodes = dict(nodes)  # (base, version) -> VersionedNode
        self.edges = tuple(sorted(edges, key=lambda e: (e.ts, e.seq, e.kind != VERSION)))
        self.window = tuple(window)
        self.out_edges = defaultdict(list)
        self.in_edges = defaultdict(list)
        for e in self.edges:
            self.out_edges[e.src].append(e)
            self.in_edges[e.dst].append(e)
        self.versions = defaultdict(list)
        for key in sorted(self.nodes):
            self.versions[key[0]].append(key)

    def __len__(self):
        return len(self.nodes)

    def node(self, key) -> VersionedNode:
        try:
            return self.nodes[tuple(key)]
        except KeyError:
            raise UnknownNode(f"no node {key}") from None

    def latest(self, base: str, ts: int | None = None) -> tuple:
        """Highest version of ``base`` that exists at time ``ts``."""
        if base not in self.versions:
            raise UnknownNode(f"no node with base uuid {base}")
        best = self.versions[base][0]
        for key in self.versions[base][1:]:
            created = [e.ts for e in self.in_edges[key] if e.kind == VERSION]
            if ts is None or (created and created[0] <= ts):
                best = key
        return best

    def bases(self) -> set:
        return set(self.versions)

    def reachable(self, start: Iterable[tuple]) -> set:
        seen = set(start)
        todo = deque(seen)
        while todo:
            k = todo.popleft()
            for e in self.out_edges.get(k, ()):
                if e.dst not in seen:
                    seen.add(e.dst)
                    todo.append(e.dst)
        return seen

    def to_json(self) -> dict:
        return {
            "window": list(self.window),
            "nodes": [
                {"base": n.base, "version": n.version, "kind": n.kind, "attrs": n.attrs}
                for _, n in sorted(self.nodes.items())
            ],
            "edges": [e.to_json() for e in self.edges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ProvGraph":
        nodes = {}
        for n in obj["nodes"]:
            v = VersionedNode(n["base"], n["version"], n["kind"], dict(n.get("attrs", {})))
            nodes[v.key] = v
        return cls(nodes, [Edge.from_json(e) for e in obj["edges"]], obj.get("window", (0, 0)))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def build_versioned_graph(corpus: LogCorpus) -> ProvGraph:
    nodes = {}
    cur = {}
    has_out = {}
    absorbed = defaultdict(set)  # base -> {(src_base, src_version, kind)} carried by its current version
    for uuid, rec in corpus.nodes.items():
        nodes[(uuid, 0)] = VersionedNode(uuid, 0, rec.kind, rec.attrs)
        cur[uuid] = 0
        has_out[uuid] = False
    edges = []
    for ev in corpus.events:
        src, dst = flow(ev.kind, ev.subject, ev.object)
        if src == dst:
            continue  # no information crosses node boundaries
        dep = (src, cur[src], ev.kind)
        if dep in absorbed[dst]:
            continue  # redundant: the destination already carries this dependence
        if has_out[dst]:
            old = (dst, cur[dst])
            cur[dst] += 1
            rec = corpus.nodes[dst]
            nodes[(dst, cur[dst])] = VersionedNode(dst, cur[dst], rec.kind, rec.attrs)
            edges.append(Edge(old, (dst, cur[dst]), VERSION, ev.ts, ev.seq))
            has_out[dst] = False
        edges.append(Edge((src, cur[src]), (dst, cur[dst]), ev.kind, ev.ts, ev.seq))
        has_out[src] = True
        absorbed[dst].add(dep)
    return ProvGraph(nodes, edges, corpus.window)


def _resolve(g: ProvGraph, ref, ts=None) -> tuple:
    if isinstance(ref, (tuple, list)):
        return g.node(ref).key
    return g.latest(ref, ts)


def backward_search(g: ProvGraph, detection, t_detect: int) -> set:
    """Attack sources upstream of the detection points.

    ``detection`` holds base uuids (resolved to their version current at
    ``t_detect``) or ``(base, version)`` keys.  Returns the lowest reached
    version of every NetflowObject, plus Subjects that executed a file which
    itself leads back to a netflow.
    """
    start = {_resolve(g, d, t_detect) for d in detection}
    seen = set(start)
    todo = deque(start)
    while todo:
        k = todo.popleft()
        for e in g.in_edges.get(k, ()):
            if e.ts <= t_detect and e.src not in seen:
                seen.add(e.src)
                todo.append(e.src)
    lowest = {}
    for base, v in seen:
        if base not in lowest or v < lowest[base]:
            lowest[base] = v
    sources = {(b, v) for b, v in lowest.items() if g.nodes[(b, v)].kind == "NetflowObject"}
    # subjects that ran a file whose own history reaches a netflow
    for key in seen:
        if g.nodes[key].kind != "Subject":
            continue
        for e in g.in_edges.get(key, ()):
            if e.kind == "EXEC" and e.ts <= t_detect and e.src in seen:
                up = _upstream(g, e.src, t_detect)
                if any(g.nodes[u].kind == "NetflowObject" for u in up):
                    sources.add((key[0], lowest[key[0]]))
    return sources


def _upstream(g: ProvGraph, key, t_detect) -> set:
    seen = {key}
    todo = deque([key])
    while todo:
        k = todo.popleft()
        for e in g.in_edges.get(k, ()):
            if e.ts <= t_detect and e.src not in seen:
                seen.add(e.src)
                todo.append(e.src)
    return seen


@dataclass
class ScenarioGraph:
    graph: ProvGraph  # the scenario subgraph
    sources: frozenset
    detection_points: frozenset = frozenset()
    # READ edges into scenario subjects from files outside the forward closure
    context_edges: tuple = ()
    untrusted: frozenset = frozenset()
    taint_cause: dict = field(default_factory=dict)  # base -> Edge that first tainted it

    @property
    def nodes(self):
        return self.graph.nodes

    @property
    def edges(self):
        return self.graph.edges

    def is_untrusted(self, key) -> bool:
        return tuple(key) in self.untrusted

    def node(self, key) -> VersionedNode:
        key = tuple(key)
        if key in self.graph.nodes:
            return self.graph.nodes[key]
        return self._context_nodes[key]

    def __post_init__(self):
        self._context_nodes = {}

    def all_edges(self) -> tuple:
        return tuple(sorted(self.graph.edges + tuple(self.context_edges), key=lambda e: (e.ts, e.seq)))

    def untrusted_bases(self) -> set:
        return {b for b, _ in self.untrusted}

    def to_json(self) -> dict:
        out = self.graph.to_json()
        for n in out["nodes"]:
            n["untrusted"] = (n["base"], n["version"]) in self.untrusted
        out["sources"] = [list(k) for k in sorted(self.sources)]
        out["detection_points"] = [list(k) for k in sorted(self.detection_points)]
        out["context_nodes"] = [
            {"base": n.base, "version": n.version, "kind": n.kind, "attrs": n.attrs}
            for _, n in sorted(self._context_nodes.items())
        ]
        out["context_edges"] = [e.to_json() for e in self.context_edges]
        out["taint_cause"] = {b: e.to_json() for b, e in sorted(self.taint_cause.items())}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioGraph":
        g = ProvGraph.from_json(obj)
        sg = cls(
            graph=g,
            sources=frozenset(tuple(k) for k in obj.get("sources", [])),
            detection_points=frozenset(tuple(k) for k in obj.get("detection_points", [])),
            context_edges=tuple(Edge.from_json(e) for e in obj.get("context_edges", [])),
            untrusted=frozenset((n["base"], n["version"]) for n in obj["nodes"] if n.get("untrusted")),
            taint_cause={b: Edge.from_json(e) for b, e in obj.get("taint_cause", {}).items()},
        )
        for n in obj.get("context_nodes", []):
            v = VersionedNode(n["base"], n["version"], n["kind"], dict(n.get("attrs", {})))
            sg._context_nodes[v.key] = v
        return sg

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def forward_scenario(g: ProvGraph, sources, t0: int, detection=()) -> ScenarioGraph:
    """Union of the forward closures of ``sources`` over edges with ts >= t0.

    A source given as a bare base uuid means its version current at ``t0``.
    """
    start = {_resolve(g, s, t0) for s in sources}
    seen = set(start)
    todo = deque(start)
    kept = []
    while todo:
        k = todo.popleft()
        for e in g.out_edges.get(k, ()):
            if e.ts < t0:
                continue
            kept.append(e)
            if e.dst not in seen:
                seen.add(e.dst)
                todo.append(e.dst)
    context, context_nodes = [], {}
    for k in seen:
        if g.nodes[k].kind != "Subject":
            continue
        for e in g.in_edges.get(k, ()):
            if e.kind == "READ" and e.ts >= t0 and e.src not in seen:
                context.append(e)
                context_nodes[e.src] = g.nodes[e.src]
    sub = ProvGraph({k: g.nodes[k] for k in seen}, kept, g.window)
    det = frozenset(_resolve(g, d) for d in detection if _in_graph(g, d))
    sg = ScenarioGraph(sub, frozenset(start), det, tuple(sorted(context, key=lambda e: (e.ts, e.seq))))
    sg._context_nodes.update(context_nodes)
    return sg


def _in_graph(g, ref) -> bool:
    if isinstance(ref, (tuple, list)):
        return tuple(ref) in g.nodes
    return ref in g.versions


# (edge kind, required kind of the flow source) -> taint passes to the destination
_RULES = {
    ("RECV", "NetflowObject"),
    ("WRITE", "Subject"),
    ("EXEC", "FileObject"),
    ("FORK", "Subject"),
}


def propagate_tags(sg: ScenarioGraph) -> ScenarioGraph:
    """Tag sources untrusted and close under the four propagation rules.

    Rules fire in (ts, seq) order: RECV from an untrusted netflow, WRITE by an
    untrusted subject, EXEC of an untrusted file and FORK by an untrusted
    subject each taint the destination; VERSION edges carry taint to later
    versions of the same base.  READ, SEND and UNLINK never taint.
    """
    g = sg.graph
    tainted = set(sg.sources)
    cause = {}
    changed = True
    while changed:  # one pass suffices on versioned graphs; loop guards imported ones
        changed = False
        for e in g.edges:
            if e.src not in tainted or e.dst in tainted:
                continue
            if e.kind == VERSION or (e.kind, g.nodes[e.src].kind) in _RULES:
                tainted.add(e.dst)
                changed = True
                base = e.dst[0]
                if e.kind != VERSION and base not in cause and not any(k[0] == base for k in sg.sources):
                    cause[base] = e
    # version closure: later versions of a tainted base are tainted too
    for base in {b for b, _ in tainted}:
        lo = min(v for b, v in tainted if b == base)
        tainted.update(k for k in g.versions.get(base, ()) if k[1] >= lo)
    out = ScenarioGraph(g, sg.sources, sg.detection_points, sg.context_edges, frozenset(tainted), cause)
    out._context_nodes.update(sg._context_nodes)
    return out
