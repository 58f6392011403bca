"""Commit-latency benchmark and randomized convergence fuzzing."""

from __future__ import annotations

import csv
import random
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .core import CdvcsState, CommitNode
from .invariants import check_state
from .peer import Accept, Peer
from .scenarios import txn
from .simnet import Network, Partition, SimConfig
from .store import FileStore, MemoryStore

CSV_COLUMNS = ("commit_index", "latency_us", "touched_buckets", "graph_size")


@dataclass
class BenchSummary:
    n: int
    decile_medians_us: list[float]
    max_touched_after_100: int
    total_s: float

    @property
    def growth_ratio(self) -> float:
        first, last = self.decile_medians_us[0], self.decile_medians_us[-1]
        return last / first if first else float("inf")

    def render(self) -> str:
        meds = " ".join(f"{m:.0f}" for m in self.decile_medians_us)
        return (f"commits: {self.n} in {self.total_s:.1f}s\n"
                f"median latency per decile (us): {meds}\n"
                f"last/first decile ratio: {self.growth_ratio:.2f}\n"
                f"max touched buckets after commit 100: {self.max_touched_after_100}")


def bench_commit(n: int, out: str | Path, store_dir: str | Path | None = None,
                 memory: bool = False) -> BenchSummary:
    """Time ``n`` sequential commits through a persisting peer and write one CSV row each.

    Rows are flushed even when the run aborts part way.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    tmp = None
    if memory:
        store = MemoryStore()
    else:
        if store_dir is None:
            tmp = tempfile.TemporaryDirectory(prefix="cdvcs-bench-")
            store_dir = tmp.name
        store = FileStore(store_dir)
    peer = Peer("bench", store, persist=True)
    peer.add_pull_hook(lambda crdt_id, op, state: Accept)
    peer.create_cdvcs("bench", CommitNode(meta={"app": "bench"}), "master")

    latencies: list[float] = []
    touched: list[int] = []
    clock = time.perf_counter_ns
    start = time.perf_counter()
    try:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for i in range(n):
                t0 = clock()
                peer.commit("bench", "master", [txn("transact", seq=i)])
                us = (clock() - t0) / 1000
                k = len(peer.last_touched_buckets)
                latencies.append(us)
                touched.append(k)
                w.writerow((i, f"{us:.1f}", k, len(peer.crdts["bench"].graph)))
    finally:
        if tmp is not None:
            tmp.cleanup()
    total = time.perf_counter() - start
    size = max(1, n // 10)
    deciles = [statistics.median(latencies[j:j + size]) for j in range(0, size * 10, size) if latencies[j:j + size]]
    return BenchSummary(n, deciles, max(touched[100:], default=0), total)


# --- fuzzing ---------------------------------------------------------------------

FUZZ_CRDT = "repo"
FUZZ_BRANCHES = ("master", "dev")


@dataclass
class FuzzResult:
    seed: int
    passed: bool
    reason: str = ""
    ticks: int = 0
    ops: dict = field(default_factory=dict)
    trace_path: str | None = None
    applies_checked: int = 0  # ops seen by the atomicity observer


def _topology(rng, ids):
    """A ring plus a few random chords."""
    links = {frozenset((ids[i], ids[(i + 1) % len(ids)])) for i in range(len(ids))} if len(ids) > 1 else set()
    for i, a in enumerate(ids):
        for b in ids[i + 2:]:
            if rng.random() < 0.3:
                links.add(frozenset((a, b)))
    return sorted(tuple(sorted(x)) for x in links if len(x) == 2)


def _partitions(rng, ids, start, horizon, prob, window=50):
    parts = []
    for w0 in range(start, start + horizon, window):
        if len(ids) < 2 or rng.random() >= prob:
            continue
        group = frozenset(rng.sample(ids, rng.randint(1, len(ids) - 1)))
        a = rng.randint(w0, w0 + window - 2)
        parts.append(Partition(a, rng.randint(a + 1, w0 + window), group))
    return parts


def _fuzz_op(rng, net: Network, pid: str, counts: dict):
    peer = net.peers[pid]
    state: CdvcsState = peer.crdts[FUZZ_CRDT]

    # with lossy links a replica may not have every branch yet
    held = [b for b in FUZZ_BRANCHES if b in state.branches]
    clean = [b for b in held if len(state.heads(b)) == 1]
    split = [b for b in held if len(state.heads(b)) > 1]
    r = rng.random()
    kind = "commit" if r < 0.70 else "merge" if r < 0.85 else "pull"
    if kind != "merge" and not clean:
        kind = "merge"  # nothing can be committed to until a conflict is resolved
    if kind == "merge":
        if not split:
            counts["idle"] = counts.get("idle", 0) + 1
            return
        branch = rng.choice(split)
    else:
        branch = rng.choice(clean)
    if kind == "commit":
        net.upstream(pid, lambda p: p.commit(FUZZ_CRDT, branch, [txn("fuzz", peer=pid, n=rng.random())]))
    elif kind == "merge":
        # deterministic content: replicas resolving the same heads produce the same commit
        net.upstream(pid, lambda p: p.merge(FUZZ_CRDT, branch, [txn("resolve")]))
    else:
        other = FUZZ_BRANCHES[1 - FUZZ_BRANCHES.index(branch)]
        if other not in state.branches:
            counts["idle"] = counts.get("idle", 0) + 1
            return
        head = rng.choice(sorted(state.heads(other)))
        net.upstream(pid, lambda p: p.pull(FUZZ_CRDT, branch, state.graph, head))
    counts[kind] = counts.get(kind, 0) + 1


def fuzz_once(seed: int, replicas: int = 5, ops: int = 1000, partition_prob: float = 0.2,
              drop_prob: float = 0.0, trace_dir: str | Path | None = None,
              inject_fault: bool = False, max_ticks: int = 200_000, spacing: int = 8) -> FuzzResult:
    """One seeded run: replicas on a ring with chords, ``ops`` random upstream calls, final heal."""
    rng = random.Random(seed)
    ids = [f"r{i}" for i in range(replicas)]
    setup = 20
    horizon = ops * spacing + 10
    stable = setup + horizon + 10
    config = SimConfig(seed=seed, latency=(1, 5), drop_prob=drop_prob,
                       partitions=_partitions(rng, ids, setup, horizon, partition_prob),
                       stable_after=stable)
    net = Network(config, [Peer(i) for i in ids])

    violations: list[str] = []
    checked = [0]

    def atomicity(peer, crdt_id, op):
        checked[0] += 1
        # every commit node and payload must be stored before the op lands
        for cid in getattr(op, "added_graph", ()):
            if not peer.store.has(cid):
                violations.append(f"{peer.peer_id}: node {cid.hex()[:10]} applied before stored")
                continue
            for ref in peer.store.get_node(cid).txn_refs:
                if not peer.store.has(ref):
                    violations.append(f"{peer.peer_id}: payload {ref.hex()[:10]} applied before stored")

    for p in net.peers.values():
        p.apply_observers.append(atomicity)
    root = CommitNode(meta={"app": "fuzz"})
    net.peers[ids[0]].create_cdvcs(FUZZ_CRDT, root, "master")
    net.upstream(ids[0], lambda p: p.create_branch(FUZZ_CRDT, "dev", root.id))
    for a, b in _topology(rng, ids):
        net.connect(a, b)
    net.run_until(setup - 1)

    counts: dict = {}
    for i in range(ops):
        pid = rng.choice(ids)
        net.at(setup + i * spacing, lambda n, pid=pid: _fuzz_op(rng, n, pid, counts)
               if FUZZ_CRDT in n.peers[pid].crdts else counts.__setitem__("skipped", counts.get("skipped", 0) + 1))

    reason = ""
    try:
        net.run_until_quiescent(max_ticks)
    except Exception as exc:  # surfaced as a failed seed with its trace
        reason = f"{type(exc).__name__}: {exc}"
    if not reason:
        if inject_fault:
            victim = net.peers[ids[-1]]
            s = victim.crdts[FUZZ_CRDT]
            bogus = frozenset(s.heads("master") | {root.id})
            victim.crdts[FUZZ_CRDT] = CdvcsState(s.graph, s.branches.set("master", bogus))
        reason = _check(net, ids, violations)
    res = FuzzResult(seed, not reason, reason, net.now, counts, applies_checked=checked[0])
    if reason and trace_dir is not None:
        path = Path(trace_dir) / f"fuzz-seed{seed}.trace"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(net.trace_lines()) + "\n")
        res.trace_path = str(path)
    return res


def _check(net: Network, ids, violations) -> str:
    if violations:
        return f"atomicity: {violations[0]}"
    for pid in ids:
        p = net.peers[pid]
        if FUZZ_CRDT not in p.crdts:
            return f"{pid} never received the repository"
        problems = check_state(p.crdts[FUZZ_CRDT])
        if problems:
            return f"invariant on {pid}: {problems[0]}"
        if p.pending:
            return f"{pid} still has {len(p.pending)} pending ops"
    encodings = {net.peers[pid].crdts[FUZZ_CRDT].encode() for pid in ids}
    if len(encodings) != 1:
        return f"replicas diverged into {len(encodings)} distinct states"
    return ""


def fuzz_converge(replicas: int = 5, ops: int = 1000, seeds: int | list[int] = 100,
                  partition_prob: float = 0.2, drop_prob: float = 0.0,
                  trace_dir: str | Path | None = None, inject_fault: bool = False,
                  progress=None, spacing: int = 8) -> list[FuzzResult]:
    if replicas < 2:
        raise ValueError("fuzzing needs at least two replicas")
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    out = []
    for s in seed_list:
        r = fuzz_once(s, replicas, ops, partition_prob, drop_prob, trace_dir, inject_fault, spacing=spacing)
        if progress is not None:
            progress(r)
        out.append(r)
    return out
