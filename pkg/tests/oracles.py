"""Independent reference implementations used only by the tests.

Each one recomputes its answer by brute force from raw records or from the
model's own definitions (feature map, transition dictionary), never through
the optimised code paths they are compared against.
"""
import ipaddress
import itertools
import json

import numpy as np

from prefhunter.mdp import ALL_STATES, TERMINAL_STATE, AttackerAction, features

# --- random corpora ------------------------------------------------------

PUBLIC = ("81.49.200.166", "76.56.184.25", "146.153.68.151")
PRIVATE = ("10.0.0.7", "192.168.3.4", "127.0.0.1")


def random_corpus_records(rng, n_events, n_subj=3, n_file=3, n_net=2, prefix="n", seq_step=10):
    """Node and event records for a random well-typed corpus.

    Timestamps are drawn with deliberate collisions; seq increases in stream
    order by ``seq_step`` so callers can slot extra events in between.
    """
    nodes = []
    subj = [f"{prefix}S{i}" for i in range(n_subj)]
    files = [f"{prefix}F{i}" for i in range(n_file)]
    nets = [f"{prefix}N{i}" for i in range(n_net)]
    for i, u in enumerate(subj):
        nodes.append({"rec": "node", "uuid": u, "kind": "Subject",
                      "attrs": {"pid": 100 + i, "exe": f"/bin/p{i}",
                                "principal": "root" if rng.random() < 0.4 else "user"}})
    for i, u in enumerate(files):
        nodes.append({"rec": "node", "uuid": u, "kind": "FileObject", "attrs": {"path": f"/tmp/f{i}"}})
    for i, u in enumerate(nets):
        pool = PUBLIC if rng.random() < 0.7 else PRIVATE
        nodes.append({"rec": "node", "uuid": u, "kind": "NetflowObject",
                      "attrs": {"remote_addr": pool[int(rng.integers(len(pool)))], "remote_port": 80 + i}})
    kinds = ("RECV", "SEND", "WRITE", "READ", "EXEC", "FORK", "UNLINK")
    events = []
    for k in range(n_events):
        kind = kinds[int(rng.integers(len(kinds)))]
        s = subj[int(rng.integers(n_subj))]
        if kind in ("RECV", "SEND"):
            o = nets[int(rng.integers(n_net))]
        elif kind == "FORK":
            o = subj[int(rng.integers(n_subj))]
        else:
            o = files[int(rng.integers(n_file))]
        events.append({"rec": "event", "seq": seq_step * (k + 1), "ts": int(rng.integers(0, max(2, n_events // 2))),
                       "kind": kind, "subject": s, "object": o})
    return nodes, events


def to_jsonl(records) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


def flow_of(ev):
    if ev["kind"] in ("RECV", "READ", "EXEC"):
        return ev["object"], ev["subject"]
    return ev["subject"], ev["object"]


def ordered(events):
    return sorted(events, key=lambda e: (e["ts"], e["seq"]))


# --- graph oracles -------------------------------------------------------

def time_respecting_reach(events, start):
    """Nodes reachable from ``start`` along events taken in (ts, seq) order."""
    reach = {start}
    for ev in ordered(events):
        a, b = flow_of(ev)
        if a in reach:
            reach.add(b)
    return reach


TAINT_RULES = {("RECV", "NetflowObject"), ("WRITE", "Subject"), ("EXEC", "FileObject"), ("FORK", "Subject")}


def taint_closure(node_kinds, events, sources):
    """Untrusted bases by a single chronological scan of the four rules."""
    tainted = set(sources)
    for ev in ordered(events):
        a, b = flow_of(ev)
        if a in tainted and (ev["kind"], node_kinds[a]) in TAINT_RULES:
            tainted.add(b)
    return tainted


# --- matcher oracle ------------------------------------------------------

def _external(addr, allowlist=()):
    try:
        ip = ipaddress.ip_address(addr)
    except ValueError:
        return False
    if ip.is_private or ip.is_loopback or ip.is_link_local or ip.is_unspecified or ip.is_multicast:
        return False
    return not any(ip in ipaddress.ip_network(n, strict=False) for n in allowlist)


def _node_fits(sg, pn, key, allowlist):
    node = sg.node(key)
    if node.kind != pn.kind:
        return False
    if pn.untrusted is not None and (tuple(key) in sg.untrusted) != pn.untrusted:
        return False
    if pn.principal is not None and node.attrs.get("principal") != pn.principal:
        return False
    if pn.external and not _external(node.attrs.get("remote_addr", ""), allowlist):
        return False
    return True


def enumerate_bindings(sg, template, allowlist=()):
    """All (binding, edges) pairs by trying every injective node assignment."""
    edges = list(sg.all_edges())
    keys = sorted({e.src for e in edges} | {e.dst for e in edges} | set(sg.nodes))
    names = [n.name for n in template.nodes]
    out = set()
    for combo in itertools.permutations(keys, len(names)):
        binding = dict(zip(names, combo))
        if not all(_node_fits(sg, pn, binding[pn.name], allowlist) for pn in template.nodes):
            continue
        choices = []
        for pe in template.edges:
            cand = [e for e in edges if e.kind == pe.kind and e.src == binding[pe.src] and e.dst == binding[pe.dst]]
            if pe.taints_dst:
                cand = [e for e in cand if sg.taint_cause.get(e.dst[0]) == e]
            choices.append(cand)
        for chosen in itertools.product(*choices):
            if all((chosen[i].ts, chosen[i].seq) < (chosen[j].ts, chosen[j].seq) for i, j in template.order):
                out.add((tuple(sorted(binding.items())), tuple(chosen)))
    return out


# --- planning oracle -----------------------------------------------------

def expectimax_q(mdp, w, depth=60):
    """Finite-horizon Q by explicit recursion over the dictionary transitions."""
    w = np.asarray(w, dtype=float)
    states = list(ALL_STATES) + [TERMINAL_STATE]
    R = {(s, a): float(features(s, a) @ w) for s in states for a in AttackerAction}
    T = {(s, a): list(mdp.transition(s, a).items()) for s in states for a in AttackerAction}
    V = {s: 0.0 for s in states}
    Q = {}
    for _ in range(depth):
        Q = {sa: R[sa] + mdp.gamma * sum(p * V[s2] for s2, p in T[sa]) for sa in R}
        V = {s: max(Q[s, a] for a in AttackerAction) for s in states}
    out = np.zeros((len(states), len(AttackerAction)))
    for (s, a), q in Q.items():
        out[s.index, int(a)] = q
    return out
