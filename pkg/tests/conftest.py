import random

import pytest

from cdvcs.codec import digest
from cdvcs.core import (
    CommitGraph,
    CommitNode,
    DownstreamOp,
    apply_downstream,
    commit,
    commit_history,
    create_branch,
    merge,
    new_cdvcs,
    pull,
)
from cdvcs.orset import OrSetState, or_add, or_apply_downstream, or_remove


def node_id(i: int) -> bytes:
    return digest(f"node-{i}".encode())


def random_dag(rng: random.Random, n: int, max_parents: int = 4, roots: int = 1) -> dict:
    """Random DAG over ``n`` nodes; node i may only point at lower indices."""
    ids = [node_id(i) for i in range(n)]
    out = {}
    for i, cid in enumerate(ids):
        if i < roots:
            out[cid] = ()
            continue
        k = rng.randint(1, min(max_parents, i))
        out[cid] = tuple(rng.sample(ids[:i], k))
    return out


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def root():
    return CommitNode(meta={"name": "root"})


@pytest.fixture
def fresh(root):
    return new_cdvcs(root, "master")


def chain_graph(n: int) -> tuple[CommitGraph, list[bytes]]:
    ids = [node_id(i) for i in range(n)]
    return CommitGraph.from_dict({c: (ids[i - 1],) if i else () for i, c in enumerate(ids)}), ids


def random_ops_state(rng, root, steps, branches=("master", "dev")):
    """A random state built only from valid upstream calls, plus the ops emitted."""
    s = new_cdvcs(root, "master")
    ops = []
    s, op = create_branch(s, "dev", root.id)
    ops.append(op)
    for i in range(steps):
        b = rng.choice(branches)
        hs = s.heads(b)
        roll = rng.random()
        if len(hs) > 1:
            s, op = merge(s, b, sorted(hs), meta={"i": str(i)})
        elif roll < 0.6:
            s, op = commit(s, b, CommitNode((next(iter(hs)),), meta={"i": str(i), "r": str(rng.random())}))
        elif roll < 0.8:
            other = "dev" if b == "master" else "master"
            if len(s.heads(other)) != 1:
                continue
            s, op = pull(s, b, s.graph, s.head(other))
        else:
            # concurrent sibling commit from an older head
            anc = commit_history(s.graph, next(iter(hs)))
            base = rng.choice(anc)
            c = CommitNode((base,), meta={"sib": str(i)})
            op = DownstreamOp(b, {c.id: (base,)}, {c.id})
            s = apply_downstream(s, op)
        ops.append(op)
    return s, ops


def random_history(rng, replicas=3, steps=20):
    """Deltas from a few replicas acting on their own local view."""
    states = {r: OrSetState() for r in "abc"[:replicas]}
    deltas = []
    for _ in range(steps):
        r = rng.choice(sorted(states))
        e = rng.choice("pqrs")
        s = states[r]
        if s.contains(e) and rng.random() < 0.5:
            s, d = or_remove(s, e)
        else:
            s, d = or_add(s, e, r)
        states[r] = s
        deltas.append(d)
        # occasional gossip to another replica
        if rng.random() < 0.3:
            other = rng.choice(sorted(states))
            states[other] = or_apply_downstream(states[other], d)
    return states, deltas


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
