"""Peer messages and their binary framing.

A frame is a ``u32`` length followed by the body: a one-byte kind tag,
the crdt id, the origin peer id and a kind-specific payload. Op and
state payloads start with a one-byte datatype tag.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any

from .codec import Reader, Writer
from .core import CdvcsState, DownstreamOp
from .errors import CdvcsError, DecodeError, ProtocolError
from .orset import OrDelta, OrSetState


class Kind(enum.IntEnum):
    SUBSCRIBE = 1
    PUBLISH_OP = 2
    FETCH_REQUEST = 3
    FETCH_RESPONSE = 4
    STATE_SYNC_REQUEST = 5
    STATE_SYNC_RESPONSE = 6


_CDVCS, _ORSET = 1, 2
_OP_TYPES = {DownstreamOp: _CDVCS, OrDelta: _ORSET}
_STATE_TYPES = {CdvcsState: _CDVCS, OrSetState: _ORSET}
_OP_READERS = {_CDVCS: DownstreamOp.read, _ORSET: OrDelta.read}
_STATE_READERS = {_CDVCS: CdvcsState.read, _ORSET: OrSetState.read}


@dataclass(frozen=True)
class PeerMessage:
    kind: Kind
    crdt_id: str
    origin: str
    payload: Any = None

    def validate(self) -> None:
        """Raise ProtocolError unless the payload matches the kind."""
        k, p = self.kind, self.payload
        if not isinstance(k, Kind):
            raise ProtocolError(f"unknown message kind {k!r}")
        if not isinstance(self.crdt_id, str) or not isinstance(self.origin, str):
            raise ProtocolError("crdt id and origin must be strings")
        ok = {
            Kind.SUBSCRIBE: p is None,
            Kind.STATE_SYNC_REQUEST: p is None,
            Kind.PUBLISH_OP: type(p) in _OP_TYPES,
            Kind.STATE_SYNC_RESPONSE: type(p) in _STATE_TYPES,
            Kind.FETCH_REQUEST: isinstance(p, tuple) and all(isinstance(r, bytes) and len(r) == 32 for r in p),
            Kind.FETCH_RESPONSE: isinstance(p, tuple)
            and all(isinstance(x, tuple) and len(x) == 2 and isinstance(x[1], bytes) for x in p),
        }[k]
        if not ok:
            raise ProtocolError(f"malformed {k.name} payload")

    @property
    def delta_digest(self) -> bytes | None:
        return self.payload.digest if self.kind is Kind.PUBLISH_OP else None


def encode_message(msg: PeerMessage) -> bytes:
    msg.validate()
    w = Writer().u8(msg.kind).text(msg.crdt_id).text(msg.origin)
    k, p = msg.kind, msg.payload
    if k is Kind.PUBLISH_OP:
        w.u8(_OP_TYPES[type(p)]).raw(p.encode())
    elif k is Kind.STATE_SYNC_RESPONSE:
        w.u8(_STATE_TYPES[type(p)]).raw(p.encode())
    elif k is Kind.FETCH_REQUEST:
        w.digests(p)
    elif k is Kind.FETCH_RESPONSE:
        w.u32(len(p))
        for ref, value in p:
            w.digest(ref).blob(value)
    body = w.getvalue()
    return Writer().blob(body).getvalue()


def decode_message(frame: bytes) -> PeerMessage:
    try:
        outer = Reader(frame)
        r = Reader(outer.blob())
        outer.finish()
        try:
            kind = Kind(r.u8())
        except ValueError as exc:
            raise ProtocolError(str(exc)) from exc
        crdt_id, origin = r.text(), r.text()
        payload = None
        if kind is Kind.PUBLISH_OP:
            payload = _reader(_OP_READERS, r.u8())(r)
        elif kind is Kind.STATE_SYNC_RESPONSE:
            payload = _reader(_STATE_READERS, r.u8())(r)
        elif kind is Kind.FETCH_REQUEST:
            payload = tuple(r.digests())
        elif kind is Kind.FETCH_RESPONSE:
            payload = tuple((r.digest(), r.blob()) for _ in range(r.u32()))
        r.finish()
    except DecodeError as exc:
        raise ProtocolError(f"undecodable frame: {exc}") from exc
    except ProtocolError:
        raise
    except (ValueError, CdvcsError) as exc:  # e.g. cycles or dangling parents inside a state
        raise ProtocolError(f"invalid payload: {exc}") from exc
    return PeerMessage(kind, crdt_id, origin, payload)


def _reader(table, tag):
    try:
        return table[tag]
    except KeyError:
        raise ProtocolError(f"unknown datatype tag {tag}") from None
