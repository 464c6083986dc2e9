"""JSON Lines audit-log reader.

Each line is either a node declaration::

    {"rec": "node", "uuid": "...", "kind": "Subject", "attrs": {"pid": 1, "exe": "/bin/sh", "principal": "user"}}

or an event::

    {"rec": "event", "seq": 7, "ts": 1523012345000000000, "kind": "WRITE",
     "subject": "...", "object": "...", "aux": {}}

Events are kept in (ts, seq) order; events outside the requested window are
dropped and counted.
"""
from __future__ import annotations

import io
import ipaddress
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable

from .errors import DanglingReference, MalformedRecord, NonMonotoneSeq

NODE_KINDS = ("Subject", "FileObject", "NetflowObject")
EVENT_KINDS = ("RECV", "SEND", "WRITE", "READ", "EXEC", "FORK", "UNLINK")
TS_MAX = 2**63 - 1


@dataclass(frozen=True)
class NodeRecord:
    uuid: str
    kind: str
    attrs: dict = field(hash=False)

    def to_json(self) -> dict:
        return {"rec": "node", "uuid": self.uuid, "kind": self.kind, "attrs": dict(self.attrs)}


@dataclass(frozen=True, order=True)
class AuditEvent:
    ts: int
    seq: int
    kind: str = field(compare=False)
    subject: str = field(compare=False)
    object: str = field(compare=False)
    aux: dict = field(default_factory=dict, compare=False, hash=False)

    def to_json(self) -> dict:
        out = {"rec": "event", "seq": self.seq, "ts": self.ts, "kind": self.kind,
               "subject": self.subject, "object": self.object}
        if self.aux:
            out["aux"] = dict(self.aux)
        return out

    def same(self, other: "AuditEvent") -> bool:
        return self.to_json() == other.to_json()


@dataclass(frozen=True)
class LogCorpus:
    nodes: dict  # uuid -> NodeRecord
    events: tuple  # AuditEvent, (ts, seq) order
    window: tuple  # (t_start, t_end) inclusive, ns
    dropped: int = field(default=0, compare=False)

    def node(self, uuid: str) -> NodeRecord:
        return self.nodes[uuid]

    def __eq__(self, other):
        if not isinstance(other, LogCorpus):
            return NotImplemented
        return (
            self.window == other.window
            and self.nodes.keys() == other.nodes.keys()
            and all(self.nodes[k].to_json() == other.nodes[k].to_json() for k in self.nodes)
            and len(self.events) == len(other.events)
            and all(a.same(b) for a, b in zip(self.events, other.events))
        )

    __hash__ = None


def parse_time(value) -> int:
    """Integer nanoseconds, or an RFC 3339 timestamp."""
    if value is None:
        return None
    if isinstance(value, int):
        return value
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        pass
    frac = 0
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    # keep nanosecond precision that datetime would truncate
    if "." in text:
        head, rest = text.split(".", 1)
        digits = ""
        while rest and rest[0].isdigit():
            digits, rest = digits + rest[0], rest[1:]
        frac = int((digits + "000000000")[:9]) if digits else 0
        text = head + rest
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise ValueError(f"not an RFC 3339 timestamp or integer ns: {value!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp()) * 1_000_000_000 + frac


def _check_node(obj: dict, line_no: int) -> NodeRecord:
    uuid, kind, attrs = obj.get("uuid"), obj.get("kind"), obj.get("attrs", {})
    if not isinstance(uuid, str) or not uuid:
        raise MalformedRecord(line_no, "node without uuid")
    if kind not in NODE_KINDS:
        raise MalformedRecord(line_no, f"unknown node kind {kind!r}")
    if not isinstance(attrs, dict):
        raise MalformedRecord(line_no, "attrs must be an object")
    if kind == "Subject":
        if not isinstance(attrs.get("pid"), int) or isinstance(attrs.get("pid"), bool):
            raise MalformedRecord(line_no, "Subject.pid must be an integer")
        if not isinstance(attrs.get("exe"), str):
            raise MalformedRecord(line_no, "Subject.exe must be a string")
        if attrs.get("principal") not in ("user", "root"):
            raise MalformedRecord(line_no, "Subject.principal must be user or root")
    elif kind == "FileObject":
        if not isinstance(attrs.get("path"), str):
            raise MalformedRecord(line_no, "FileObject.path must be a string")
    else:
        try:
            ipaddress.ip_address(attrs.get("remote_addr"))
        except ValueError:
            raise MalformedRecord(line_no, f"bad remote_addr {attrs.get('remote_addr')!r}") from None
        port = attrs.get("remote_port")
        if not isinstance(port, int) or isinstance(port, bool) or not 0 <= port <= 65535:
            raise MalformedRecord(line_no, "remote_port must be an integer in [0, 65535]")
    return NodeRecord(uuid, kind, dict(attrs))


def _check_event(obj: dict, line_no: int) -> AuditEvent:
    for key in ("seq", "ts"):
        if not isinstance(obj.get(key), int) or isinstance(obj.get(key), bool):
            raise MalformedRecord(line_no, f"event {key} must be an integer")
    if obj.get("kind") not in EVENT_KINDS:
        raise MalformedRecord(line_no, f"unknown event kind {obj.get('kind')!r}")
    for key in ("subject", "object"):
        if not isinstance(obj.get(key), str):
            raise MalformedRecord(line_no, f"event {key} must be a uuid string")
    aux = obj.get("aux") or {}
    if not isinstance(aux, dict):
        raise MalformedRecord(line_no, "aux must be an object")
    return AuditEvent(obj["ts"], obj["seq"], obj["kind"], obj["subject"], obj["object"], dict(aux))


def _lines(stream) -> Iterable[str]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    for line in stream:
        yield line.decode("utf-8") if isinstance(line, bytes) else line


def parse_corpus(stream, window=None) -> LogCorpus:
    """Read a JSON Lines stream (bytes, str or file object).

    ``window`` is ``(start, end)`` with either bound ``None``; bounds are
    integer ns or RFC 3339 strings.  Without bounds the window is the span of
    the events read.
    """
    start, end = (None, None) if window is None else (parse_time(window[0]), parse_time(window[1]))
    nodes: dict = {}
    kept = []
    refs = []  # (line_no, event) for deferred reference checks
    last_seq = None
    dropped = 0
    lo, hi = None, None
    for line_no, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise MalformedRecord(line_no, "record must be an object")
        rec = obj.get("rec")
        if rec == "node":
            node = _check_node(obj, line_no)
            if node.uuid in nodes:
                raise MalformedRecord(line_no, f"duplicate node uuid {node.uuid}")
            nodes[node.uuid] = node
        elif rec == "event":
            ev = _check_event(obj, line_no)
            if last_seq is not None and ev.seq <= last_seq:
                raise NonMonotoneSeq(f"line {line_no}: seq {ev.seq} follows {last_seq}")
            last_seq = ev.seq
            refs.append((line_no, ev))
            if (start is not None and ev.ts < start) or (end is not None and ev.ts > end):
                dropped += 1
                continue
            kept.append(ev)
            lo = ev.ts if lo is None else min(lo, ev.ts)
            hi = ev.ts if hi is None else max(hi, ev.ts)
        else:
            raise MalformedRecord(line_no, f"unknown record type {rec!r}")
    for line_no, ev in refs:
        for uuid in (ev.subject, ev.object):
            if uuid not in nodes:
                raise DanglingReference(uuid, line_no)
        if nodes[ev.subject].kind != "Subject":
            raise MalformedRecord(line_no, f"event subject {ev.subject} is not a Subject")
        if ev.kind == "FORK" and nodes[ev.object].kind != "Subject":
            raise MalformedRecord(line_no, "FORK object must be a Subject")
        if ev.kind in ("RECV", "SEND") and nodes[ev.object].kind != "NetflowObject":
            raise MalformedRecord(line_no, f"{ev.kind} object must be a NetflowObject")
        if ev.kind in ("WRITE", "READ", "EXEC", "UNLINK") and nodes[ev.object].kind != "FileObject":
            raise MalformedRecord(line_no, f"{ev.kind} object must be a FileObject")
    kept.sort()
    w = (
        start if start is not None else (lo if lo is not None else 0),
        end if end is not None else (hi if hi is not None else 0),
    )
    return LogCorpus(nodes=nodes, events=tuple(kept), window=w, dropped=dropped)


def iter_records(corpus: LogCorpus):
    for uuid in sorted(corpus.nodes):
        yield corpus.nodes[uuid].to_json()
    for ev in sorted(corpus.events, key=lambda e: e.seq):
        yield ev.to_json()


def dumps_corpus(corpus: LogCorpus) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in iter_records(corpus))


def dump_corpus(corpus: LogCorpus, fh) -> None:
    fh.write(dumps_corpus(corpus))


def load_corpus(path, window=None) -> LogCorpus:
    with open(path, "rb") as fh:
        return parse_corpus(fh, window)
