"""Replication peer: op-based pub-sub gossip with fetch-before-apply.

A :class:`Peer` is a sequential state machine. It holds immutable CRDT
states keyed by crdt id, a content-addressed store, and the set of
neighbours subscribed to each crdt. Every input (a message from a
neighbour or a local upstream call) is processed to completion and
yields a list of ``(neighbour, PeerMessage)`` pairs to send.

Incoming ops are applied only once every commit node and transaction
payload they reference is in the local store; missing values are
requested from the sender and the op waits in a bounded pending queue.
Applied ops are forwarded to all other subscribers, but only when they
changed local state.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from . import core
from .codec import digest
from .core import CdvcsState, CommitNode, DownstreamOp
from .errors import CdvcsError, ProtocolError
from .orset import OrDelta, OrSetState, or_add, or_remove
from .store import MemoryStore, ValueStore
from .wire import Kind, PeerMessage

log = logging.getLogger(__name__)

Outgoing = list[tuple[str, PeerMessage]]


class _Decision:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


Accept = _Decision("Accept")
Reject = _Decision("Reject")


@dataclass(frozen=True)
class Replace:
    op: Any


PullHook = Callable[[str, Any, Any], Any]


@dataclass
class _Pending:
    crdt_id: str
    op: Any
    source: str
    requested: set = field(default_factory=set)
    hooked: bool = False


def _empty_like(op):
    return CdvcsState.empty() if isinstance(op, DownstreamOp) else OrSetState()


def _changed(old, new) -> bool:
    if old is new:
        return False
    if old is None:
        return True
    if isinstance(new, CdvcsState):
        return len(new.graph) != len(old.graph) or new.branches != old.branches
    return new != old


class Peer:
    def __init__(self, peer_id: str, store: ValueStore | None = None, *, persist: bool = False,
                 max_pending: int = 512):
        self.peer_id = peer_id
        self.store = store if store is not None else MemoryStore()
        self.persist = persist
        self.max_pending = max_pending
        self.crdts: dict[str, Any] = {}
        self.neighbors: set[str] = set()
        self.subscriptions: dict[str, set[str]] = {}  # neighbour -> crdt ids it follows here
        self.applied: set[bytes] = set()
        self.pending: OrderedDict[bytes, _Pending] = OrderedDict()
        self.pull_hooks: list[PullHook] = []
        # called as fn(peer, crdt_id, op) right before an op is applied
        self.apply_observers: list[Callable] = []
        self.stats = {"applied": 0, "rejected": 0, "integrity_failures": 0, "pending_dropped": 0,
                      "protocol_errors": 0}
        self.last_touched_buckets: set[str] = set()

    def __repr__(self):
        return f"Peer({self.peer_id!r}, crdts={sorted(self.crdts)})"

    def state(self, crdt_id: str):
        return self.crdts[crdt_id]

    def add_pull_hook(self, hook: PullHook) -> None:
        self.pull_hooks.append(hook)

    # --- connection management ------------------------------------------

    def connect_to(self, neighbor: str) -> Outgoing:
        """Subscribe to ``neighbor`` for every crdt held here."""
        if neighbor == self.peer_id:
            raise ProtocolError("a peer cannot connect to itself")
        self.neighbors.add(neighbor)
        return [(neighbor, self._msg(Kind.SUBSCRIBE, c)) for c in sorted(self.crdts)]

    def resync(self, neighbor: str) -> Outgoing:
        """Re-subscribe to ``neighbor`` after a heal.

        Subscribing is idempotent and the receiver answers with a state
        sync request, so the neighbour pulls this peer's full state (and
        adopts crdts it never got); the neighbour's own resync covers the
        other direction.
        """
        return self.connect_to(neighbor)

    def subscribers(self, crdt_id: str, exclude: str | None = None) -> list[str]:
        return sorted(n for n, cs in self.subscriptions.items() if crdt_id in cs and n != exclude)

    # --- local upstream calls ---------------------------------------------

    def create_crdt(self, crdt_id: str, state) -> Outgoing:
        if crdt_id in self.crdts:
            raise ValueError(f"crdt {crdt_id!r} already exists")
        if isinstance(state, CdvcsState):
            missing = [c for c in state.graph if not self.store.has(c)]
            if missing:
                raise ValueError("commit nodes of a new crdt must be in the store")
        self.crdts[crdt_id] = state
        if self.persist and isinstance(state, CdvcsState):
            self.store.persist_graph_delta(state.graph.to_dict())
        return [(n, self._msg(Kind.SUBSCRIBE, crdt_id)) for n in sorted(self.neighbors)]

    def create_cdvcs(self, crdt_id: str, root: CommitNode, branch: str = "master") -> Outgoing:
        self.store.put_node(root)
        return self.create_crdt(crdt_id, core.new_cdvcs(root, branch))

    def local_upstream(self, crdt_id: str, upstream: Callable) -> tuple[Any, Outgoing]:
        """Run ``upstream(state) -> (state, op)`` locally and broadcast the op.

        Pull hooks do not run here. Upstream errors propagate unchanged.
        """
        old = self.crdts[crdt_id]
        new, op = upstream(old)
        if getattr(op, "is_noop", False):
            return op, []
        self._install(crdt_id, old, new, op)
        return op, [(n, self._msg(Kind.PUBLISH_OP, crdt_id, op)) for n in self.subscribers(crdt_id)]

    def commit(self, crdt_id: str, branch: str, txns=(), meta=None) -> tuple[DownstreamOp, Outgoing]:
        """Store the transaction values, build the commit node and commit it to ``branch``."""
        refs = tuple(self.store.put(t) for t in txns)

        def up(state):
            node = CommitNode((state.head(branch),), refs, meta or ())
            self.store.put_node(node)
            return core.commit(state, branch, node)

        return self.local_upstream(crdt_id, up)

    def merge(self, crdt_id: str, branch: str, txns=(), meta=None, heads=None) -> tuple[DownstreamOp, Outgoing]:
        """Merge the current heads of ``branch`` (sorted by id unless given)."""
        refs = tuple(self.store.put(t) for t in txns)

        def up(state):
            ordered = tuple(heads) if heads is not None else tuple(sorted(state.heads(branch)))
            self.store.put_node(core.make_merge_node(ordered, refs, meta))
            return core.merge(state, branch, ordered, refs, meta)

        return self.local_upstream(crdt_id, up)

    def create_branch(self, crdt_id: str, branch: str, at: bytes) -> tuple[DownstreamOp, Outgoing]:
        return self.local_upstream(crdt_id, lambda s: core.create_branch(s, branch, at))

    def pull(self, crdt_id: str, branch: str, remote_graph, remote_head: bytes) -> tuple[DownstreamOp, Outgoing]:
        missing = [c for c in remote_graph if c not in self.crdts[crdt_id].graph and not self.store.has(c)]
        if missing:
            raise ValueError("values of pulled commits must be in the local store first")
        return self.local_upstream(crdt_id, lambda s: core.pull(s, branch, remote_graph, remote_head))

    def or_add(self, crdt_id: str, element: str) -> tuple[OrDelta, Outgoing]:
        return self.local_upstream(crdt_id, lambda s: or_add(s, element, self.peer_id))

    def or_remove(self, crdt_id: str, element: str) -> tuple[OrDelta, Outgoing]:
        return self.local_upstream(crdt_id, lambda s: or_remove(s, element))

    # --- message handling ------------------------------------------------

    def handle(self, msg: PeerMessage, now: int = 0) -> Outgoing:
        msg.validate()
        src, cid = msg.origin, msg.crdt_id
        if msg.kind is Kind.SUBSCRIBE:
            self.neighbors.add(src)
            self.subscriptions.setdefault(src, set()).add(cid)
            return [(src, self._msg(Kind.STATE_SYNC_REQUEST, cid))]
        if msg.kind is Kind.STATE_SYNC_REQUEST:
            if cid not in self.crdts:
                return []
            return [(src, self._msg(Kind.STATE_SYNC_RESPONSE, cid, self.crdts[cid]))]
        if msg.kind is Kind.STATE_SYNC_RESPONSE:
            return self._on_state(cid, msg.payload, src)
        if msg.kind is Kind.PUBLISH_OP:
            if cid not in self.crdts:
                return []
            return self._ingress(cid, msg.payload, src)
        if msg.kind is Kind.FETCH_REQUEST:
            values = self._fetch_values(msg.payload)
            return [(src, self._msg(Kind.FETCH_RESPONSE, cid, values))] if values else []
        if msg.kind is Kind.FETCH_RESPONSE:
            for ref, value in msg.payload:
                if digest(value) != ref:
                    self.stats["integrity_failures"] += 1
                    log.warning("%s: dropping value from %s failing verification for %s",
                                self.peer_id, src, ref.hex()[:10])
                    continue
                self.store.put(value)
            return self._drain()
        raise ProtocolError(f"unhandled kind {msg.kind!r}")

    def _fetch_values(self, refs) -> tuple:
        """Requested values, plus the transaction payloads of any requested commit nodes."""
        out = {}
        for ref in refs:
            if ref in out or not self.store.has(ref):
                continue
            value = out[ref] = self.store.get(ref)
            try:
                node = CommitNode.decode(value)
            except (CdvcsError, ValueError):
                continue
            for t in node.txn_refs:
                if t not in out and self.store.has(t):
                    out[t] = self.store.get(t)
        return tuple(out.items())

    def _msg(self, kind, crdt_id, payload=None) -> PeerMessage:
        return PeerMessage(kind, crdt_id, self.peer_id, payload)

    def _on_state(self, crdt_id, remote, src) -> Outgoing:
        local = self.crdts.get(crdt_id)
        if local is None:
            local = CdvcsState.empty() if isinstance(remote, CdvcsState) else OrSetState()
        elif type(local) is not type(remote):
            raise ProtocolError(f"datatype mismatch for crdt {crdt_id!r}")
        out: Outgoing = []
        ops = local.novelty(remote)
        if crdt_id not in self.crdts and not ops:
            # nothing to apply, but the crdt is still adopted
            self.crdts[crdt_id] = local
            return [(n, self._msg(Kind.SUBSCRIBE, crdt_id)) for n in sorted(self.neighbors)]
        for op in ops:
            out += self._ingress(crdt_id, op, src)
        return out

    def _ingress(self, crdt_id, op, src) -> Outgoing:
        d = op.digest
        if d in self.applied:
            return []
        entry = self.pending.get(d)
        if entry is not None:
            # a second copy: retry whatever is still missing with this sender
            missing, _ = self._resolve(crdt_id, op)
            entry.requested |= missing
            return [(src, self._msg(Kind.FETCH_REQUEST, crdt_id, tuple(sorted(missing))))] if missing else []
        out = self._advance(_Pending(crdt_id, op, src))
        return out + self._drain()

    def _advance(self, entry: _Pending) -> Outgoing:
        """Apply ``entry`` if its dependencies are local, otherwise fetch and park it."""
        d = entry.op.digest
        try:
            missing, full = self._resolve(entry.crdt_id, entry.op)
        except ProtocolError as exc:
            self.stats["protocol_errors"] += 1
            log.warning("%s: dropping op from %s: %s", self.peer_id, entry.source, exc)
            self.pending.pop(d, None)
            return []
        if missing:
            if d not in self.pending:
                self.pending[d] = entry
                while len(self.pending) > self.max_pending:
                    self.pending.popitem(last=False)
                    self.stats["pending_dropped"] += 1
            ask = missing - entry.requested
            entry.requested |= ask
            if not ask:
                return []
            return [(entry.source, self._msg(Kind.FETCH_REQUEST, entry.crdt_id, tuple(sorted(ask))))]
        self.pending.pop(d, None)

        current = self.crdts.get(entry.crdt_id) or _empty_like(entry.op)
        publish = entry.op
        if not entry.hooked:
            entry.hooked = True
            op = full
            for hook in self.pull_hooks:
                decision = hook(entry.crdt_id, op, current)
                if decision is Reject:
                    self.applied.add(d)
                    self.stats["rejected"] += 1
                    return []
                if isinstance(decision, Replace):
                    op = decision.op
                elif decision is not Accept and decision is not None:
                    raise ProtocolError(f"pull hook returned {decision!r}")
            if op is not full:
                missing, replaced = self._resolve(entry.crdt_id, op)
                if missing:
                    self.stats["protocol_errors"] += 1
                    log.warning("%s: replacement op references values not in the store", self.peer_id)
                    return []
                self.applied.add(d)
                full = publish = replaced

        old = self.crdts.get(entry.crdt_id)
        new = current.apply(full)
        self._install(entry.crdt_id, old, new, full)
        if not _changed(old, new):
            return []
        out: Outgoing = []
        if old is None:
            out += [(n, self._msg(Kind.SUBSCRIBE, entry.crdt_id)) for n in sorted(self.neighbors)]
        # a replaced op differs from what the source sent, so it goes back there too
        skip = None if publish is not entry.op else entry.source
        out += [(n, self._msg(Kind.PUBLISH_OP, entry.crdt_id, publish))
                for n in self.subscribers(entry.crdt_id, exclude=skip)]
        return out

    def _install(self, crdt_id, old, new, op) -> None:
        for obs in self.apply_observers:
            obs(self, crdt_id, op)
        self.crdts[crdt_id] = new
        self.applied.add(op.digest)
        self.stats["applied"] += 1
        if self.persist and isinstance(op, DownstreamOp) and op.added_graph:
            self.last_touched_buckets = self.store.persist_graph_delta(op.added_graph)
        else:
            self.last_touched_buckets = set()

    def _drain(self) -> Outgoing:
        out: Outgoing = []
        progress = True
        while progress and self.pending:
            progress = False
            for d, entry in list(self.pending.items()):
                if d not in self.pending:
                    continue
                before = len(self.pending)
                out += self._advance(entry)
                if len(self.pending) < before:
                    progress = True
        return out

    def _resolve(self, crdt_id, op):
        """Return ``(missing refs, op extended with locally known ancestry)``.

        For a CDVCS op every referenced commit absent from the local graph
        must have its node in the store, together with its transaction
        payloads; parents outside the op are followed through the stored
        nodes until the local graph is reached.
        """
        if not isinstance(op, DownstreamOp):
            return set(), op
        state = self.crdts.get(crdt_id)
        graph = state.graph if state is not None else None
        store = self.store
        missing: set[bytes] = set()
        extra: dict[bytes, tuple] = {}
        seen: set[bytes] = set()
        todo = list(op.added_graph.keys()) + list(op.added_heads)
        while todo:
            cid = todo.pop()
            if cid in seen:
                continue
            seen.add(cid)
            if graph is not None and cid in graph:
                continue
            if not store.has(cid):
                missing.add(cid)
                continue
            try:
                node = store.get_node(cid)
            except (CdvcsError, ValueError) as exc:
                raise ProtocolError(f"bad commit node {cid.hex()[:10]}: {exc}") from exc
            claimed = op.added_graph.get(cid)
            if claimed is None:
                extra[cid] = node.parents
            elif claimed != node.parents:
                raise ProtocolError(f"op parents of {cid.hex()[:10]} disagree with its commit node")
            for ref in node.txn_refs:
                if not store.has(ref):
                    missing.add(ref)
            todo.extend(node.parents)
        if missing:
            return missing, None
        if extra:
            op = DownstreamOp(op.branch, op.added_graph.update(extra), op.added_heads)
        return set(), op


def connect(a: Peer, b: Peer) -> list[tuple[str, str, PeerMessage]]:
    """Link two peers; returns the initial ``(sender, receiver, message)`` exchange."""
    if a is b or a.peer_id == b.peer_id:
        raise ProtocolError("a peer cannot connect to itself")
    plan = [(a.peer_id, dst, m) for dst, m in a.connect_to(b.peer_id)]
    plan += [(b.peer_id, dst, m) for dst, m in b.connect_to(a.peer_id)]
    return plan


def deliver_all(peers: dict[str, Peer], plan, max_steps: int = 1_000_000) -> int:
    """Deliver messages synchronously in FIFO order until none remain; returns the count."""
    queue = list(plan)
    n = 0
    while queue:
        src, dst, msg = queue.pop(0)
        n += 1
        if n > max_steps:
            raise RuntimeError("message storm")
        for nxt, m in peers[dst].handle(msg):
            queue.append((dst, nxt, m))
    return n
