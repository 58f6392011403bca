"""Deterministic discrete-event network for hosting peers.

Time is counted in integer ticks. Events are ordered by ``(tick,
sequence)`` so there are never ties, and every random choice (latency,
drops) is drawn from one seeded generator in event order; the same
config and script always give the same trace.

Partitions withhold messages crossing the cut. When a partition ends the
withheld messages are released and both sides of every healed link
exchange a state sync. From ``stable_after`` on the network stops
dropping and partitioning, and a state sync runs over every link.
"""

from __future__ import annotations

import heapq
import logging
import random
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

from .errors import ConfigError, NonQuiescent, ProtocolError
from .peer import Peer
from .wire import PeerMessage, decode_message, encode_message

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    start: int
    end: int
    group: frozenset  # peers on one side; everyone else is on the other

    def __post_init__(self):
        object.__setattr__(self, "group", frozenset(self.group))
        if self.end <= self.start:
            raise ConfigError("partition must end after it starts")

    def cuts(self, a: str, b: str, tick: int) -> bool:
        return self.start <= tick < self.end and ((a in self.group) != (b in self.group))


@dataclass
class SimConfig:
    seed: int = 0
    latency: tuple[int, int] = (1, 1)
    drop_prob: float = 0.0
    partitions: list[Partition] = field(default_factory=list)
    stable_after: int | None = None
    # round-trip every delivered message through the binary wire format
    wire: bool = False

    def __post_init__(self):
        lo, hi = self.latency
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad latency bounds {self.latency}")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigError("drop_prob must be within [0, 1]")


@dataclass(frozen=True)
class TraceRecord:
    tick: int
    src: str
    dst: str
    kind: str
    crdt_id: str
    delta: str
    status: str  # sent, delivered, dropped, withheld

    def line(self) -> str:
        return f"{self.tick}\t{self.src}\t{self.dst}\t{self.kind}\t{self.crdt_id}\t{self.delta}\t{self.status}"


_DELIVER, _ACTION, _HEAL, _STABLE = 0, 1, 2, 3


class Network:
    def __init__(self, config: SimConfig | None = None, peers: Iterable[Peer] = ()):
        self.config = config or SimConfig()
        self.rng = random.Random(self.config.seed)
        self.peers: dict[str, Peer] = {}
        self.links: set[frozenset] = set()
        self.now = 0
        self.trace: list[TraceRecord] = []
        self.monitors: list[Callable[[Network], None]] = []
        self._queue: list = []
        self._seq = 0
        self._withheld: list[tuple[str, str, PeerMessage]] = []
        for p in peers:
            self.add_peer(p)
        for part in self.config.partitions:
            self._push(part.end, _HEAL, part)
        if self.config.stable_after is not None:
            self._push(self.config.stable_after, _STABLE, None)

    def _push(self, tick, kind, data):
        heapq.heappush(self._queue, (tick, self._seq, kind, data))
        self._seq += 1

    def add_peer(self, peer: Peer) -> Peer:
        if peer.peer_id in self.peers:
            raise ConfigError(f"duplicate peer {peer.peer_id!r}")
        self.peers[peer.peer_id] = peer
        return peer

    def connect(self, a: str, b: str) -> None:
        if a == b:
            raise ConfigError("cannot link a peer to itself")
        for p in (a, b):
            if p not in self.peers:
                raise ConfigError(f"unknown peer {p!r}")
        self.links.add(frozenset((a, b)))
        for dst, m in self.peers[a].connect_to(b):
            self.schedule(a, dst, m)
        for dst, m in self.peers[b].connect_to(a):
            self.schedule(b, dst, m)

    def neighbors(self, peer_id: str) -> list[str]:
        return sorted(next(iter(link - {peer_id})) for link in self.links if peer_id in link)

    def partitioned(self, a: str, b: str, tick: int | None = None) -> bool:
        tick = self.now if tick is None else tick
        if self.config.stable_after is not None and tick >= self.config.stable_after:
            return False
        return any(p.cuts(a, b, tick) for p in self.config.partitions)

    def _record(self, tick, src, dst, msg, status):
        dd = msg.delta_digest
        self.trace.append(TraceRecord(tick, src, dst, msg.kind.name, msg.crdt_id,
                                      dd.hex()[:16] if dd else "-", status))

    def schedule(self, src: str, dst: str, msg: PeerMessage) -> None:
        if src not in self.peers or dst not in self.peers:
            raise ConfigError(f"unknown peer in {src!r} -> {dst!r}")
        if self.partitioned(src, dst):
            self._withheld.append((src, dst, msg))
            self._record(self.now, src, dst, msg, "withheld")
            return
        stable = self.config.stable_after is not None and self.now >= self.config.stable_after
        if not stable and self.config.drop_prob and self.rng.random() < self.config.drop_prob:
            self._record(self.now, src, dst, msg, "dropped")
            return
        lo, hi = self.config.latency
        delay = lo if lo == hi else self.rng.randint(lo, hi)
        if self.config.wire:
            msg = encode_message(msg)
        self._push(self.now + delay, _DELIVER, (src, dst, msg))

    def send_all(self, src: str, outgoing) -> None:
        for dst, m in outgoing:
            self.schedule(src, dst, m)

    def at(self, tick: int, action: Callable[[Network], None]) -> None:
        """Run ``action(net)`` at ``tick``; messages it returns are not collected, use ``send_all``."""
        if tick < self.now:
            raise ConfigError("cannot schedule an action in the past")
        self._push(tick, _ACTION, action)

    def upstream(self, peer_id: str, call: Callable[[Peer], tuple]):
        """Run a local upstream call on a peer now and send its broadcast."""
        op, out = call(self.peers[peer_id])
        self.send_all(peer_id, out)
        return op

    def _resync_link(self, a, b):
        for x, y in ((a, b), (b, a)):
            self.send_all(x, self.peers[x].resync(y))

    def _heal(self, part: Partition | None):
        still = []
        for src, dst, msg in self._withheld:
            if self.partitioned(src, dst):
                still.append((src, dst, msg))
            else:
                self._record(self.now, src, dst, msg, "released")
                self.schedule(src, dst, msg)
        self._withheld = still
        for link in sorted(self.links, key=sorted):
            a, b = sorted(link)
            if part is None or (a in part.group) != (b in part.group):
                if not self.partitioned(a, b):
                    self._resync_link(a, b)

    def _deliver(self, src, dst, msg):
        if self.config.wire:
            msg = decode_message(msg)
        self._record(self.now, src, dst, msg, "delivered")
        try:
            out = self.peers[dst].handle(msg, self.now)
        except ProtocolError as exc:
            log.warning("tick %d: %s rejected message from %s: %s", self.now, dst, src, exc)
            return
        self.send_all(dst, out)

    def step(self) -> bool:
        """Process every event of the next tick; False once the queue is empty."""
        if not self._queue:
            return False
        tick = self._queue[0][0]
        self.now = tick
        while self._queue and self._queue[0][0] == tick:
            _, _, kind, data = heapq.heappop(self._queue)
            if kind == _DELIVER:
                self._deliver(*data)
            elif kind == _ACTION:
                data(self)
            elif kind == _HEAL:
                self._heal(data)
            else:
                self._heal(None)
        for m in self.monitors:
            m(self)
        return True

    def run_until(self, tick: int) -> None:
        while self._queue and self._queue[0][0] <= tick:
            self.step()
        self.now = max(self.now, tick)

    def run_until_quiescent(self, max_ticks: int = 100_000) -> tuple[dict[str, Peer], list[TraceRecord]]:
        if max_ticks <= 0:
            raise ConfigError("max_ticks must be positive")
        limit = self.now + max_ticks
        while self._queue:
            if self._queue[0][0] > limit:
                raise NonQuiescent(f"{len(self._queue)} events still queued at tick {limit}")
            self.step()
        return self.peers, self.trace

    @property
    def quiescent(self) -> bool:
        return not self._queue

    def trace_lines(self) -> list[str]:
        return [r.line() for r in self.trace]

    def converged(self, crdt_id: str, peer_ids: Iterable[str] | None = None) -> bool:
        ids = list(peer_ids) if peer_ids is not None else sorted(self.peers)
        encodings = {self.peers[p].crdts[crdt_id].encode() if crdt_id in self.peers[p].crdts else None
                     for p in ids}
        return len(encodings) == 1 and None not in encodings
