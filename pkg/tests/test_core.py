import random

import pytest
from hypothesis import given, settings, strategies as st

from cdvcs import core
from cdvcs.core import (
    CdvcsState,
    CommitGraph,
    CommitNode,
    DownstreamOp,
    apply_downstream,
    commit,
    commit_history,
    conflicts,
    create_branch,
    lca,
    merge,
    new_cdvcs,
    pull,
    remove_ancestors,
    state_merge,
)
from cdvcs.errors import (
    BranchExists,
    ConflictPending,
    InvalidRoot,
    MissingDependency,
    NoCommonAncestor,
    NoSuchBranch,
    NothingToMerge,
    StaleMerge,
    StaleParent,
    UnknownCommit,
)
from cdvcs.invariants import ancestor_sets, brute_lca, check_state, maximal

from conftest import chain_graph, node_id, random_dag, random_ops_state


def child(state, branch, **meta):
    return CommitNode((state.head(branch),), meta=meta)


def do_commit(state, branch="master", **meta):
    return commit(state, branch, child(state, branch, **meta))


# --- new_cdvcs -------------------------------------------------------------


def test_new_cdvcs_initial_state(root):
    s = new_cdvcs(root, "master")
    r = root.id
    assert len(r) == 32
    assert s.graph.to_dict() == {r: ()}
    assert s.heads("master") == {r}


def test_new_cdvcs_deterministic(root):
    a = new_cdvcs(CommitNode(meta={"name": "root"}), "master")
    b = new_cdvcs(root, "master")
    assert a == b
    assert a.encode() == b.encode()


def test_new_cdvcs_rejects_parents(root):
    with pytest.raises(InvalidRoot):
        new_cdvcs(CommitNode((root.id,)), "master")


def test_commit_id_is_digest_of_encoding():
    n = CommitNode((node_id(1),), (node_id(2),), {"b": "2", "a": "1"})
    assert CommitNode.decode(n.encode()) == n
    from cdvcs.codec import digest

    assert n.id == digest(n.encode())
    # meta key order does not matter, values do
    assert n.id == CommitNode((node_id(1),), (node_id(2),), {"a": "1", "b": "2"}).id
    assert n.id != CommitNode((node_id(1),), (node_id(2),), {"a": "1", "b": "3"}).id


def test_commit_node_rejects_duplicate_parents():
    with pytest.raises(ValueError):
        CommitNode((node_id(1), node_id(1)))


# --- commit ----------------------------------------------------------------


def test_first_commit(fresh, root):
    s, op = do_commit(fresh, msg="c1")
    c1 = next(iter(op.added_heads))
    assert s.graph.to_dict() == {root.id: (), c1: (root.id,)}
    assert s.heads("master") == {c1}
    assert dict(op.added_graph) == {c1: (root.id,)}


def test_concurrent_commits_conflict_on_both_replicas(fresh):
    a, op_a = do_commit(fresh, who="alice", time="13:00")
    b, op_b = do_commit(fresh, who="bob", time="14:00")
    a2 = apply_downstream(a, op_b)
    b2 = apply_downstream(b, op_a)
    assert a2 == b2
    assert a2.heads("master") == op_a.added_heads | op_b.added_heads
    assert conflicts(a2, "master") == a2.heads("master")


def test_thousand_sequential_commits(fresh):
    s = fresh
    for i in range(1000):
        s, _ = do_commit(s, i=str(i))
    assert len(s.heads("master")) == 1
    assert len(commit_history(s.graph, s.head("master"))) == 1001


def test_commit_errors(fresh, root):
    with pytest.raises(NoSuchBranch):
        commit(fresh, "nope", CommitNode((root.id,)))
    with pytest.raises(StaleParent):
        commit(fresh, "master", CommitNode((node_id(9),)))
    a, op_a = do_commit(fresh, who="a")
    _, op_b = do_commit(fresh, who="b")
    conflicted = apply_downstream(a, op_b)
    with pytest.raises(ConflictPending):
        commit(conflicted, "master", CommitNode((next(iter(op_a.added_heads)),)))


# --- branch ----------------------------------------------------------------


def test_branch_at_root(fresh, root):
    s, op = create_branch(fresh, "private", root.id)
    assert s.heads("private") == {root.id}
    assert s.graph == fresh.graph
    assert not op.added_graph and op.added_heads == {root.id} and op.branch == "private"


def test_branch_at_interior_commit(fresh):
    s = fresh
    ids = []
    for i in range(4):
        s, op = do_commit(s, i=str(i))
        ids.extend(op.added_heads)
    s2, _ = create_branch(s, "branch3", ids[1])
    assert s2.heads("branch3") == {ids[1]}
    assert len(s2.graph) == len(s.graph)


def test_branch_errors(fresh, root):
    with pytest.raises(BranchExists):
        create_branch(fresh, "master", root.id)
    with pytest.raises(UnknownCommit):
        create_branch(fresh, "x", node_id(42))


# --- pull --------------------------------------------------------------------


def test_pull_adds_missing_commits_into_new_branch(fresh, root):
    # repository 1 grows a branch; repository 2 pulls it into a new branch
    repo1, _ = create_branch(fresh, "shared", root.id)
    for i in range(3):
        repo1, _ = do_commit(repo1, "shared", n=str(i))
    remote_head = repo1.head("shared")
    repo2, _ = do_commit(fresh, "master", private="yes")
    repo2, _ = create_branch(repo2, "pulled", root.id)
    after, op = pull(repo2, "pulled", repo1.graph, remote_head)
    assert set(op.added_graph) == set(repo1.graph) - set(repo2.graph)
    assert after.heads("pulled") == {remote_head}
    assert set(commit_history(after.graph, remote_head)) == set(commit_history(repo1.graph, remote_head))
    assert not check_state(after)


def test_pull_divergent_creates_conflict(fresh):
    a, _ = do_commit(fresh, who="a")
    b, _ = do_commit(fresh, who="b")
    after, op = pull(a, "master", b.graph, b.head("master"))
    assert after.heads("master") == {a.head("master"), b.head("master")}


def test_pull_stale_head_is_noop(fresh):
    s, _ = do_commit(fresh, n="1")
    old = s.head("master")
    s, _ = do_commit(s, n="2")
    after, op = pull(s, "master", s.graph, old)
    assert after is s
    assert op.is_noop


def test_pull_requires_single_head(fresh):
    a, op_a = do_commit(fresh, who="a")
    _, op_b = do_commit(fresh, who="b")
    c = apply_downstream(a, op_b)
    with pytest.raises(ConflictPending):
        pull(c, "master", a.graph, a.head("master"))


def test_pull_unknown_remote_head(fresh):
    with pytest.raises(UnknownCommit):
        pull(fresh, "master", fresh.graph, node_id(5))


# --- merge -------------------------------------------------------------------


def conflicted_pair(fresh):
    a, op_a = do_commit(fresh, who="a")
    _, op_b = do_commit(fresh, who="b")
    return apply_downstream(a, op_b)


def test_merge_collapses_heads(fresh):
    s = conflicted_pair(fresh)
    hs = sorted(s.heads("master"))
    m, op = merge(s, "master", hs)
    e = next(iter(op.added_heads))
    assert m.heads("master") == {e}
    assert m.graph.parents(e) == tuple(hs)
    assert conflicts(m, "master") is None


def test_concurrent_merges_conflict_again(fresh):
    s = conflicted_pair(fresh)
    hs = sorted(s.heads("master"))
    m1, op1 = merge(s, "master", hs, meta={"by": "alice"})
    m2, op2 = merge(s, "master", hs, meta={"by": "bob"})
    x, y = apply_downstream(m1, op2), apply_downstream(m2, op1)
    assert x == y
    assert x.heads("master") == op1.added_heads | op2.added_heads


def test_merge_errors(fresh):
    with pytest.raises(NothingToMerge):
        merge(fresh, "master", [fresh.head("master"), node_id(1)])
    s = conflicted_pair(fresh)
    with pytest.raises(StaleMerge):
        merge(s, "master", [next(iter(s.heads("master")))] * 2)
    with pytest.raises(StaleMerge):
        merge(s, "master", sorted(s.heads("master")) + [node_id(3)])


# --- downstream / state merge -------------------------------------------------


def test_apply_downstream_idempotent(fresh):
    s, op = do_commit(fresh)
    assert apply_downstream(s, op) is s
    assert apply_downstream(apply_downstream(fresh, op), op) == s


def test_apply_downstream_both_orders(fresh):
    _, op1 = do_commit(fresh, x="1")
    _, op2 = do_commit(fresh, x="2")
    x = apply_downstream(apply_downstream(fresh, op1), op2)
    y = apply_downstream(apply_downstream(fresh, op2), op1)
    assert x.encode() == y.encode()


def test_apply_merge_op_on_other_replica(fresh):
    alice = conflicted_pair(fresh)
    bob = alice
    alice, op = merge(alice, "master", sorted(alice.heads("master")))
    bob = apply_downstream(bob, op)
    assert bob.heads("master") == alice.heads("master")
    assert len(bob.heads("master")) == 1


def test_apply_downstream_dangling_parent(fresh):
    op = DownstreamOp("master", {node_id(1): (node_id(2),)}, {node_id(1)})
    with pytest.raises(MissingDependency) as info:
        apply_downstream(fresh, op)
    assert info.value.missing == {node_id(2)}


def test_apply_downstream_unknown_branch_creates_it(fresh, root):
    op = DownstreamOp("feature", {}, {root.id})
    assert apply_downstream(fresh, op).heads("feature") == {root.id}


def test_state_merge_idempotent(fresh):
    s = conflicted_pair(fresh)
    assert state_merge(s, s) == s


def test_full_state_replication(fresh):
    s = fresh
    for i in range(5):
        s, _ = do_commit(s, i=str(i))
    s, _ = create_branch(s, "dev", s.head("master"))
    assert state_merge(fresh, s) == s
    # replaying novelty ops reproduces the merge
    t = fresh
    for op in fresh.novelty(s):
        t = apply_downstream(t, op)
    assert t == s


# --- lca / remove_ancestors / history ------------------------------------------


def test_lca_identical_starts():
    g, ids = chain_graph(3)
    assert lca(g, ids[2], g, ids[2]).ancestors == {ids[2]}


def test_lca_linear():
    g, (r, a, b) = chain_graph(3)
    res = lca(g, b, g, a)
    assert res.ancestors == {a}
    assert res.ancestors <= res.visited_a & res.visited_b


def test_lca_disjoint_and_unknown():
    g = CommitGraph.from_dict({node_id(0): (), node_id(1): ()})
    with pytest.raises(NoCommonAncestor):
        lca(g, node_id(0), g, node_id(1))
    with pytest.raises(UnknownCommit):
        lca(g, node_id(5), g, node_id(1))


def test_lca_across_two_graphs():
    g, ids = chain_graph(4)
    local = CommitGraph.from_dict({i: g.parents(i) for i in ids[:2]})
    res = lca(local, ids[1], g, ids[3])
    assert res.ancestors == {ids[1]}
    assert set(ids[2:]) <= res.visited_b


def test_lca_criss_cross_has_two_answers():
    r, a, b, m1, m2 = (node_id(i) for i in range(5))
    g = CommitGraph.from_dict({r: (), a: (r,), b: (r,), m1: (a, b), m2: (b, a)})
    assert lca(g, m1, g, m2).ancestors == {a, b}


@pytest.mark.parametrize("seed", range(40))
def test_lca_matches_brute_force(seed):
    rng = random.Random(seed)
    parents = random_dag(rng, rng.randint(2, 120), roots=rng.randint(1, 3))
    g = CommitGraph.from_dict(parents)
    anc = ancestor_sets(parents)
    ids = list(parents)
    for _ in range(30):
        a, b = rng.choice(ids), rng.choice(ids)
        want = brute_lca(parents, a, b, anc)
        if not want:
            with pytest.raises(NoCommonAncestor):
                lca(g, a, g, b)
            continue
        res = lca(g, a, g, b)
        assert res.ancestors == want
        assert res.ancestors <= res.visited_a & res.visited_b


def test_remove_ancestors_examples():
    g, (r, c) = chain_graph(2)
    assert remove_ancestors(g, {r, c}) == {c}
    r, a, b = node_id(0), node_id(1), node_id(2)
    g = CommitGraph.from_dict({r: (), a: (r,), b: (r,)})
    assert remove_ancestors(g, {a, b}) == {a, b}
    with pytest.raises(UnknownCommit):
        remove_ancestors(g, {node_id(7)})


@pytest.mark.parametrize("seed", range(20))
def test_remove_ancestors_matches_brute_force(seed):
    rng = random.Random(1000 + seed)
    parents = random_dag(rng, rng.randint(2, 100))
    g = CommitGraph.from_dict(parents)
    anc = ancestor_sets(parents)
    ids = list(parents)
    for _ in range(20):
        subset = rng.sample(ids, rng.randint(1, min(6, len(ids))))
        assert remove_ancestors(g, subset) == maximal(subset, anc)


def test_history_chain_and_diamond():
    g, (r, a, b) = chain_graph(3)
    assert commit_history(g, b) == [r, a, b]
    r, a, b, m = (node_id(i) for i in range(4))
    g = CommitGraph.from_dict({r: (), a: (r,), b: (r,), m: (a, b)})
    assert commit_history(g, m) == [r, a, b, m]
    g = CommitGraph.from_dict({r: (), a: (r,), b: (r,), m: (b, a)})
    assert commit_history(g, m) == [r, b, a, m]
    with pytest.raises(UnknownCommit):
        commit_history(g, node_id(9))


@pytest.mark.parametrize("seed", range(10))
def test_history_is_topological_and_complete(seed):
    rng = random.Random(seed)
    parents = random_dag(rng, 80)
    g = CommitGraph.from_dict(parents)
    anc = ancestor_sets(parents)
    for c in rng.sample(list(parents), 10):
        hist = commit_history(g, c)
        assert hist[-1] == c
        assert set(hist) == anc[c] and len(hist) == len(anc[c])
        pos = {n: i for i, n in enumerate(hist)}
        assert all(pos[p] < pos[n] for n in hist for p in parents[n])


def test_graph_rejects_cycles():
    a, b = node_id(0), node_id(1)
    with pytest.raises(ValueError):
        CommitGraph.from_dict({a: (b,), b: (a,)})


def test_generation_numbers():
    r, a, b, m = (node_id(i) for i in range(4))
    g = CommitGraph.from_dict({r: (), a: (r,), b: (a,), m: (r, b)})
    assert [g.generation(x) for x in (r, a, b, m)] == [1, 2, 3, 4]


# --- figure-style worked example ------------------------------------------------


def test_two_repository_walkthrough(root):
    """Two repos share root '1'; repo2 pulls repo1's shared branch; a two-head merge."""
    repo1 = new_cdvcs(root, "shared")
    repo1, _ = create_branch(repo1, "private1", root.id)
    repo1, op2 = do_commit(repo1, "shared", n="2")
    repo1, op3 = do_commit(repo1, "shared", n="3")
    c3 = repo1.head("shared")
    # fork without a new commit at interior commit 3
    repo1, _ = create_branch(repo1, "branch3", c3)
    assert repo1.heads("branch3") == {c3}

    repo2 = new_cdvcs(root, "shared")
    repo2, _ = create_branch(repo2, "private2", root.id)
    repo2, _ = do_commit(repo2, "private2", n="p")
    repo2, _ = create_branch(repo2, "pulled", root.id)
    repo2, pull_op = pull(repo2, "pulled", repo1.graph, c3)
    assert set(pull_op.added_graph) == op2.added_heads | op3.added_heads

    # conflicting heads '4' and '5' merged into '6'
    r1, op4 = do_commit(repo2, "pulled", n="4")
    r2, op5 = do_commit(repo2, "pulled", n="5")
    repo2 = apply_downstream(r1, op5)
    assert len(conflicts(repo2, "pulled")) == 2
    repo2, op6 = merge(repo2, "pulled", sorted(repo2.heads("pulled")))
    six = repo2.head("pulled")
    for i in range(7, 11):
        repo2, _ = do_commit(repo2, "pulled", n=str(i))
    ten = repo2.head("pulled")
    hist = commit_history(repo2.graph, ten)
    assert hist[0] == root.id and hist[-1] == ten
    assert six in hist and len(hist) == 1 + 2 + 2 + 1 + 4
    assert not check_state(repo2)


# --- properties -----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_heads_stay_antichain_and_graph_grows(seed, steps):
    rng = random.Random(seed)
    root = CommitNode(meta={"name": "root"})
    s, ops = random_ops_state(rng, root, steps)
    assert not check_state(s)
    # replay: graph only ever grows
    t = new_cdvcs(root, "master")
    for op in ops:
        nxt = apply_downstream(t, op)
        assert set(t.graph.items()) <= set(nxt.graph.items())
        assert apply_downstream(nxt, op) == nxt
        t = nxt
    assert t == s


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_any_causal_delivery_order_converges(seed):
    rng = random.Random(seed)
    root = CommitNode(meta={"name": "root"})
    target, ops = random_ops_state(rng, root, 15)
    for _ in range(5):
        # deliver in a random order, deferring ops whose parents are missing
        queue = ops[:]
        rng.shuffle(queue)
        s = new_cdvcs(root, "master")
        while queue:
            op = queue.pop(0)
            try:
                s = apply_downstream(s, op)
            except MissingDependency:
                queue.append(op)
        assert s.encode() == target.encode()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_state_merge_semilattice(seed):
    rng = random.Random(seed)
    root = CommitNode(meta={"name": "root"})
    a, _ = random_ops_state(rng, root, rng.randint(0, 15))
    b, _ = random_ops_state(rng, root, rng.randint(0, 15))
    c, _ = random_ops_state(rng, root, rng.randint(0, 15))
    assert state_merge(a, a).encode() == a.encode()
    assert state_merge(a, b).encode() == state_merge(b, a).encode()
    assert state_merge(state_merge(a, b), c).encode() == state_merge(a, state_merge(b, c)).encode()
    assert not check_state(state_merge(a, b))


def test_encoding_roundtrip(fresh):
    s = conflicted_pair(fresh)
    s, _ = create_branch(s, "dev", next(iter(s.heads("master"))))
    assert CdvcsState.decode(s.encode()) == s
    _, op = do_commit(fresh)
    assert DownstreamOp.decode(op.encode()) == op
    assert core.hexid(op.digest) == op.digest.hex()
