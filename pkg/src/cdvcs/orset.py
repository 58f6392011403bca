"""Add-wins observed-remove set behind the same replication interface as CDVCS.

Each add attaches a fresh ``(replica_id, counter)`` tag to the element;
a remove tombstones exactly the tags it has observed. An element is
present while it has a live tag, so an add concurrent with a remove
survives it. Tombstones are never collected.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property

from .codec import Reader, Writer, digest
from .errors import NotPresent

Tag = tuple[str, int]


def _freeze(m: Mapping) -> dict:
    return {e: frozenset(ts) for e, ts in m.items() if ts}


def _union(a: Mapping, b: Mapping) -> dict:
    out = dict(a)
    for e, ts in b.items():
        out[e] = out[e] | ts if e in out else ts
    return out


def _encode_tagmap(w: Writer, m: Mapping) -> None:
    w.u32(len(m))
    for e in sorted(m):
        w.text(e)
        tags = sorted(m[e])
        w.u32(len(tags))
        for rid, n in tags:
            w.text(rid).u64(n)


def _read_tagmap(r: Reader) -> dict:
    out = {}
    for _ in range(r.u32()):
        e = r.text()
        out[e] = frozenset((r.text(), r.u64()) for _ in range(r.u32()))
    return out


@dataclass(frozen=True)
class OrDelta:
    adds: Mapping = field(default_factory=dict)  # element -> frozenset[Tag]
    removes: Mapping = field(default_factory=dict)  # element -> frozenset[Tag]

    def __post_init__(self):
        object.__setattr__(self, "adds", _freeze(self.adds))
        object.__setattr__(self, "removes", _freeze(self.removes))

    def __hash__(self):
        return hash(self.digest)

    @property
    def is_noop(self) -> bool:
        return not self.adds and not self.removes

    def encode(self) -> bytes:
        w = Writer()
        _encode_tagmap(w, self.adds)
        _encode_tagmap(w, self.removes)
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader) -> OrDelta:
        return cls(_read_tagmap(r), _read_tagmap(r))

    @classmethod
    def decode(cls, data: bytes) -> OrDelta:
        r = Reader(data)
        d = cls.read(r)
        r.finish()
        return d

    @cached_property
    def digest(self) -> bytes:
        return digest(b"op:orset:" + self.encode())


@dataclass(frozen=True)
class OrSetState:
    entries: Mapping = field(default_factory=dict)  # element -> live tags
    tombstones: Mapping = field(default_factory=dict)  # element -> removed tags

    def __post_init__(self):
        object.__setattr__(self, "entries", _freeze(self.entries))
        object.__setattr__(self, "tombstones", _freeze(self.tombstones))

    def __hash__(self):
        return hash(self.encode())

    def contains(self, element: str) -> bool:
        return element in self.entries

    def encode(self) -> bytes:
        w = Writer()
        _encode_tagmap(w, self.entries)
        _encode_tagmap(w, self.tombstones)
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader) -> OrSetState:
        return cls(_read_tagmap(r), _read_tagmap(r))

    @classmethod
    def decode(cls, data: bytes) -> OrSetState:
        r = Reader(data)
        s = cls.read(r)
        r.finish()
        return s

    def apply(self, delta: OrDelta) -> OrSetState:
        return or_apply_downstream(self, delta)

    def merge(self, other: OrSetState) -> OrSetState:
        return or_state_merge(self, other)

    def novelty(self, other: OrSetState) -> list[OrDelta]:
        adds = {e: ts - self.entries.get(e, frozenset()) - self.tombstones.get(e, frozenset())
                for e, ts in other.entries.items()}
        removes = {e: ts - self.tombstones.get(e, frozenset()) for e, ts in other.tombstones.items()}
        d = OrDelta(adds, removes)
        return [] if d.is_noop else [d]


def _next_counter(state: OrSetState, replica_id: str) -> int:
    n = 0
    for m in (state.entries, state.tombstones):
        for ts in m.values():
            for rid, k in ts:
                if rid == replica_id and k > n:
                    n = k
    return n + 1


def or_add(state: OrSetState, element: str, replica_id: str) -> tuple[OrSetState, OrDelta]:
    tag = (replica_id, _next_counter(state, replica_id))
    delta = OrDelta({element: frozenset([tag])}, {})
    return or_apply_downstream(state, delta), delta


def or_remove(state: OrSetState, element: str) -> tuple[OrSetState, OrDelta]:
    tags = state.entries.get(element)
    if not tags:
        raise NotPresent(element)
    delta = OrDelta({}, {element: tags})
    return or_apply_downstream(state, delta), delta


def _normalize(entries: dict, tombstones: dict) -> OrSetState:
    live = {}
    for e, ts in entries.items():
        rest = ts - tombstones.get(e, frozenset())
        if rest:
            live[e] = rest
    return OrSetState(live, tombstones)


def or_apply_downstream(state: OrSetState, delta: OrDelta) -> OrSetState:
    tomb = _union(state.tombstones, delta.removes)
    return _normalize(_union(state.entries, delta.adds), tomb)


def or_state_merge(state: OrSetState, other: OrSetState) -> OrSetState:
    tomb = _union(state.tombstones, other.tombstones)
    return _normalize(_union(state.entries, other.entries), tomb)


def or_elements(state: OrSetState) -> frozenset:
    return frozenset(state.entries)
