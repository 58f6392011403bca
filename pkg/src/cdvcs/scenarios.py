"""Scripted multi-peer scenarios run inside the simulator.

* calendar: two users edit a shared lunch appointment while offline,
  see the conflict on both sides, and one of them merges it.
* single writer: one peer commits a linear log that observers replicate.
* booking: clients book rooms optimistically; a moderator peer admits
  bookings through a pull hook only while capacity allows, merging
  concurrent admissions itself.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from . import core
from .core import CdvcsState, CommitNode, DownstreamOp, commit_history
from .peer import Accept, Peer, Reject, Replace
from .simnet import Network, Partition, SimConfig


def txn(op: str, **params) -> bytes:
    """Canonical encoding of a transaction: operation name plus parameters."""
    return json.dumps({"op": op, "params": params}, sort_keys=True, separators=(",", ":")).encode()


def read_txn(value: bytes) -> dict:
    return json.loads(value)


def replay(peer: Peer, state: CdvcsState, heads) -> list[dict]:
    """Transactions of every commit reachable from ``heads``, in history order."""
    seen, out = set(), []
    for h in sorted(heads):
        for cid in commit_history(state.graph, h):
            if cid in seen:
                continue
            seen.add(cid)
            for ref in peer.store.get_node(cid).txn_refs:
                out.append(read_txn(peer.store.get(ref)))
    return out


@dataclass
class ScenarioReport:
    name: str
    converged: bool = False
    conflicts_observed: int = 0
    assertions: list[tuple[str, bool]] = field(default_factory=list)
    histories: dict[str, list[str]] = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def check(self, description: str, ok: bool) -> bool:
        self.assertions.append((description, bool(ok)))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return self.converged and all(ok for _, ok in self.assertions)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["assertions"] = [{"description": a, "passed": ok} for a, ok in self.assertions]
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        lines = [f"scenario {self.name}: {'PASS' if self.passed else 'FAIL'}",
                 f"  converged: {self.converged}",
                 f"  conflicts observed: {self.conflicts_observed}"]
        if "seed" in self.details:
            lines.append(f"  seed: {self.details['seed']}")
        for desc, ok in self.assertions:
            lines.append(f"  [{'ok' if ok else 'FAIL'}] {desc}")
        for peer, hist in sorted(self.histories.items()):
            lines.append(f"  {peer}: {' <- '.join(h[:8] for h in reversed(hist))}")
        return "\n".join(lines)


class _ConflictWatch:
    """Monitor recording every distinct multi-head set seen on a branch."""

    def __init__(self, crdt_id: str, branches, peers=None):
        self.crdt_id = crdt_id
        self.branches = list(branches)
        self.peers = peers
        self.seen: dict[str, set] = {b: set() for b in self.branches}

    def __call__(self, net: Network) -> None:
        for pid in self.peers or sorted(net.peers):
            state = net.peers[pid].crdts.get(self.crdt_id)
            if state is None:
                continue
            for b in self.branches:
                hs = state.branches.get(b)
                if hs is not None and len(hs) > 1:
                    self.seen[b].add(hs)

    def count(self, branch=None) -> int:
        if branch is not None:
            return len(self.seen[branch])
        return sum(len(v) for v in self.seen.values())


def _hist_hex(state: CdvcsState, branch: str) -> list[str]:
    heads = state.heads(branch)
    if len(heads) != 1:
        return []
    return [c.hex() for c in commit_history(state.graph, next(iter(heads)))]


# --- calendar -------------------------------------------------------------


def scenario_calendar(seed: int = 0, wire: bool = True) -> ScenarioReport:
    rep = ScenarioReport("calendar")
    crdt = "calendar"
    offline = Partition(10, 40, {"alice"})
    net = Network(SimConfig(seed=seed, latency=(1, 3), partitions=[offline], wire=wire),
                  [Peer("alice"), Peer("bob")])
    alice, bob = net.peers["alice"], net.peers["bob"]
    root = CommitNode(meta={"app": "calendar"})
    alice.create_cdvcs(crdt, root, "lunch")
    net.upstream("alice", lambda p: p.create_branch(crdt, "alice-private", root.id))
    net.connect("alice", "bob")
    net.run_until(9)
    net.upstream("bob", lambda p: p.create_branch(crdt, "bob-private", root.id))

    watch = _ConflictWatch(crdt, ["lunch", "alice-private", "bob-private"])
    net.monitors.append(watch)
    made = {}

    def offline_edits(n: Network):
        made["alice"] = n.upstream("alice", lambda p: p.commit(
            crdt, "lunch", [txn("set-appointment", title="lunch", time="13:00")], {"by": "alice"}))
        n.upstream("alice", lambda p: p.commit(
            crdt, "alice-private", [txn("set-appointment", title="work", time="14:00")], {"by": "alice"}))
        made["bob"] = n.upstream("bob", lambda p: p.commit(
            crdt, "lunch", [txn("set-appointment", title="lunch", time="14:00")], {"by": "bob"}))
        n.upstream("bob", lambda p: p.commit(
            crdt, "bob-private", [txn("set-appointment", title="soccer", time="15:00")], {"by": "bob"}))

    net.at(15, offline_edits)
    net.run_until_quiescent()

    c_alice = next(iter(made["alice"].added_heads))
    c_bob = next(iter(made["bob"].added_heads))
    both = {c_alice, c_bob}
    for pid in ("alice", "bob"):
        rep.check(f"{pid} sees the lunch conflict between both edits",
                  core.conflicts(net.peers[pid].state(crdt), "lunch") == both)

    net.upstream("alice", lambda p: p.merge(
        crdt, "lunch", [txn("set-appointment", title="lunch", time="13:00")], {"by": "alice", "resolves": "lunch"}))
    net.run_until_quiescent()

    sa, sb = alice.state(crdt), bob.state(crdt)
    for pid, s in (("alice", sa), ("bob", sb)):
        rep.check(f"{pid} has no lunch conflict after the merge", core.conflicts(s, "lunch") is None)
    ha, hb = _hist_hex(sa, "lunch"), _hist_hex(sb, "lunch")
    rep.check("lunch histories are identical", ha == hb and bool(ha))
    rep.check("merged history contains both appointment commits", {c_alice.hex(), c_bob.hex()} <= set(ha))
    final = [t for t in replay(alice, sa, sa.heads("lunch")) if t["op"] == "set-appointment"][-1]
    rep.check("lunch is settled at 13:00", final["params"]["time"] == "13:00")
    rep.check("private branches never conflicted",
              watch.count("alice-private") == 0 and watch.count("bob-private") == 0)
    for owner in ("alice", "bob"):
        for pid in ("alice", "bob"):
            s = net.peers[pid].state(crdt)
            hist = _hist_hex(s, f"{owner}-private")
            txns = replay(net.peers[pid], s, s.heads(f"{owner}-private"))
            rep.check(f"{owner}-private on {pid} holds only {owner}'s commit",
                      len(hist) == 2 and len(txns) == 1)

    rep.conflicts_observed = watch.count()
    rep.converged = net.converged(crdt)
    rep.histories = {"alice": ha, "bob": hb}
    rep.details = {"seed": seed, "ticks": net.now, "messages": sum(r.status == "delivered" for r in net.trace)}
    return rep


# --- single writer ------------------------------------------------------------


def scenario_single_writer(n_commits: int = 100, observers: int = 3, seed: int = 0,
                           wire: bool = False) -> ScenarioReport:
    if n_commits < 1:
        raise ValueError("n_commits must be at least 1")
    rep = ScenarioReport("single-writer")
    crdt = "log"
    ids = ["writer"] + [f"observer{i}" for i in range(1, observers + 1)]
    net = Network(SimConfig(seed=seed, latency=(1, 4), wire=wire), [Peer(i) for i in ids])
    net.peers["writer"].create_cdvcs(crdt, CommitNode(meta={"app": "log"}), "master")
    # a line: writer - observer1 - observer2 - ...
    for a, b in zip(ids, ids[1:]):
        net.connect(a, b)
    net.run_until_quiescent()

    watch = _ConflictWatch(crdt, ["master"])
    net.monitors.append(watch)
    start = net.now + 1
    for i in range(n_commits):
        net.at(start + i, lambda n, i=i: n.upstream(
            "writer", lambda p: p.commit(crdt, "master", [txn("transact", seq=i)])))
    net.run_until_quiescent()

    hists = {pid: _hist_hex(net.peers[pid].state(crdt), "master") for pid in ids}
    writer = hists["writer"]
    rep.check("writer history has n_commits + 1 entries", len(writer) == n_commits + 1)
    rep.check("every observer holds the same linear history", all(h == writer for h in hists.values()))
    rep.check("no conflict at any tick", watch.count() == 0)
    order = [t["params"]["seq"] for t in replay(net.peers[ids[-1]], net.peers[ids[-1]].state(crdt),
                                                   net.peers[ids[-1]].state(crdt).heads("master"))]
    rep.check("transactions replay in commit order", order == list(range(n_commits)))
    rep.conflicts_observed = watch.count()
    rep.converged = net.converged(crdt)
    rep.histories = hists
    rep.details = {"seed": seed, "observers": observers, "n_commits": n_commits}
    return rep


# --- booking -------------------------------------------------------------------


def booking_count(peer: Peer, state: CdvcsState, branch: str = "bookings") -> int:
    return sum(t["op"] == "book" for t in replay(peer, state, state.heads(branch)))


def moderation_hook(moderator: Peer, capacity: int, branch: str = "bookings", log=None):
    """Pull hook admitting booking ops while the replayed count stays within ``capacity``.

    An admitted op that leaves several heads is replaced by the same op
    plus a moderator merge commit, so the moderated branch stays linear
    from the moderator's point of view.
    """

    def hook(crdt_id, op, state):
        if not isinstance(op, DownstreamOp) or op.branch != branch or branch not in state.branches:
            return Accept
        after = state.apply(op)
        if after is state or after.heads(branch) == state.heads(branch):
            return Accept
        if log is not None:
            log.append(("arrived", op.added_heads))
        if booking_count(moderator, after, branch) > capacity:
            if log is not None:
                log.append(("rejected", op.added_heads))
            return Reject
        if log is not None:
            log.append(("accepted", op.added_heads))
        heads = tuple(sorted(after.heads(branch)))
        if len(heads) == 1:
            return Accept
        node = core.make_merge_node(heads, (), {"by": moderator.peer_id})
        moderator.store.put_node(node)
        return Replace(DownstreamOp(branch, op.added_graph.set(node.id, heads), frozenset([node.id])))

    return hook


def scenario_booking(capacity: int = 1, requests: int = 2, seed: int = 0, wire: bool = False) -> ScenarioReport:
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    rep = ScenarioReport("booking")
    crdt = "hotel"
    clients = [f"client{i}" for i in range(1, requests + 1)]
    net = Network(SimConfig(seed=seed, latency=(1, 6), wire=wire), [Peer("moderator")] + [Peer(c) for c in clients])
    moderator = net.peers["moderator"]
    moderator.create_cdvcs(crdt, CommitNode(meta={"app": "hotel"}), "bookings")
    decisions: list = []
    moderator.add_pull_hook(moderation_hook(moderator, capacity, log=decisions))
    for c in clients:
        net.connect("moderator", c)
    net.run_until_quiescent()

    worst = {"count": 0}

    def safety(n: Network):
        s = moderator.state(crdt)
        worst["count"] = max(worst["count"], booking_count(moderator, s))

    net.monitors.append(safety)
    requested = {}
    t0 = net.now + 1
    for c in clients:
        def book(n, c=c):
            requested[c] = n.upstream(c, lambda p: p.commit(crdt, "bookings", [txn("book", guest=c, room="any")]))
        net.at(t0, book)
    net.run_until_quiescent()

    mstate = moderator.state(crdt)
    accepted_ids = [next(iter(h)) for kind, h in decisions if kind == "accepted"]
    arrived_ids = [next(iter(h)) for kind, h in decisions if kind == "arrived"]
    accepted = [c for c in clients if next(iter(requested[c].added_heads)) in mstate.graph]
    expected = min(capacity, requests)
    rep.check(f"moderator admits exactly {expected} booking(s)", len(accepted) == expected == len(accepted_ids))
    rep.check("admitted bookings are the first arrivals", accepted_ids == arrived_ids[:expected])
    rep.check("replayed booking count never exceeded capacity", worst["count"] <= capacity)
    rep.check("moderator branch has a single head", len(mstate.heads("bookings")) == 1)
    rejected = [c for c in clients if c not in accepted]
    for c in rejected:
        s = net.peers[c].state(crdt)
        mine = next(iter(requested[c].added_heads))
        rep.check(f"{c} keeps its optimistic booking locally", mine in s.graph and mine in s.heads("bookings"))
    for c in clients:
        rep.check(f"{c} has every moderator commit", all(x in net.peers[c].state(crdt).graph for x in mstate.graph))
    rep.converged = net.converged(crdt, ["moderator"] + accepted) and all(
        all(x in net.peers[c].state(crdt).graph for x in mstate.graph) for c in clients)
    rep.conflicts_observed = len(rejected)
    rep.histories = {pid: _hist_hex(net.peers[pid].state(crdt), "bookings") for pid in ["moderator"] + clients}
    rep.details = {"seed": seed, "capacity": capacity, "requests": requests, "accepted": accepted,
                   "rejected": rejected, "max_replayed_count": worst["count"]}
    return rep


SCENARIOS = {
    "calendar": scenario_calendar,
    "single-writer": scenario_single_writer,
    "booking": scenario_booking,
}
