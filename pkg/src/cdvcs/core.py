"""The confluent DVCS datatype.

A replica holds an add-only commit DAG shared by all branches and, per
branch, the set of head commits. Upstream calls (:func:`commit`,
:func:`create_branch`, :func:`pull`, :func:`merge`) compute an additive
:class:`DownstreamOp` at the source and return the state with that op
already applied; every replica then folds the same op in with
:func:`apply_downstream`. Concurrent writes show up as branches with
more than one head and stay there until someone merges them.

All values here are immutable. The graph is backed by a persistent
hash map so that adding a commit to a large history is cheap.
"""

from __future__ import annotations

import heapq
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from functools import cached_property

import immutables

from .codec import DIGEST_SIZE, Reader, Writer, digest
from .errors import (
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

CommitId = bytes
BranchId = str

_NODE_TAG = 0x43  # "C"


def hexid(cid: CommitId, short: bool = False) -> str:
    h = cid.hex()
    return h[:10] if short else h


@dataclass(frozen=True)
class CommitNode:
    """A commit: ordered parents, references to transaction payloads and metadata.

    ``meta`` is stored as a sorted tuple of pairs; a plain dict is accepted.
    """

    parents: tuple[CommitId, ...] = ()
    txn_refs: tuple[bytes, ...] = ()
    meta: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "txn_refs", tuple(self.txn_refs))
        meta = self.meta
        if isinstance(meta, Mapping):
            meta = meta.items()
        object.__setattr__(self, "meta", tuple(sorted((str(k), str(v)) for k, v in meta)))
        if len(set(self.parents)) != len(self.parents):
            raise ValueError("duplicate parent in commit node")
        for ref in self.parents + self.txn_refs:
            if len(ref) != DIGEST_SIZE:
                raise ValueError("commit references must be 32-byte digests")

    def encode(self) -> bytes:
        w = Writer().u8(_NODE_TAG).digests(self.parents).digests(self.txn_refs)
        w.u32(len(self.meta))
        for k, v in self.meta:
            w.text(k).text(v)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> CommitNode:
        r = Reader(data)
        if r.u8() != _NODE_TAG:
            raise ValueError("not a commit node encoding")
        parents = r.digests()
        txn_refs = r.digests()
        meta = [(r.text(), r.text()) for _ in range(r.u32())]
        r.finish()
        return cls(tuple(parents), tuple(txn_refs), tuple(meta))

    @cached_property
    def id(self) -> CommitId:
        return digest(self.encode())


class CommitGraph:
    """Add-only DAG mapping commit id to its ordered parent ids.

    Every graph is parent-closed. Each node also carries its generation
    (1 + the largest parent generation, roots are 1); the generation only
    depends on a node's ancestry, so it is the same in every replica and
    is not part of equality.
    """

    __slots__ = ("_parents", "_gen")

    def __init__(self, _parents: immutables.Map | None = None, _gen: immutables.Map | None = None):
        self._parents = _parents if _parents is not None else immutables.Map()
        self._gen = _gen if _gen is not None else immutables.Map()

    @classmethod
    def from_dict(cls, nodes: Mapping[CommitId, Iterable[CommitId]]) -> CommitGraph:
        return cls().with_nodes(nodes)

    def __contains__(self, cid) -> bool:
        return cid in self._parents

    def __len__(self) -> int:
        return len(self._parents)

    def __iter__(self) -> Iterator[CommitId]:
        return iter(self._parents)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CommitGraph):
            return NotImplemented
        return self._parents == other._parents

    def __hash__(self):
        return hash(self._parents)

    def __repr__(self) -> str:
        return f"CommitGraph({len(self)} nodes)"

    def parents(self, cid: CommitId) -> tuple[CommitId, ...]:
        try:
            return self._parents[cid]
        except KeyError:
            raise UnknownCommit(hexid(cid)) from None

    def generation(self, cid: CommitId) -> int:
        try:
            return self._gen[cid]
        except KeyError:
            raise UnknownCommit(hexid(cid)) from None

    def items(self):
        return self._parents.items()

    def to_dict(self) -> dict[CommitId, tuple[CommitId, ...]]:
        return dict(self._parents.items())

    def with_nodes(self, nodes: Mapping[CommitId, Iterable[CommitId]]) -> CommitGraph:
        """Return the union of this graph and ``nodes``.

        Raises :class:`MissingDependency` when a parent is neither in this
        graph nor in ``nodes``, and ``ValueError`` on a cycle.
        """
        fresh = {cid: tuple(ps) for cid, ps in nodes.items() if cid not in self._parents}
        if not fresh:
            return self
        gens: dict[CommitId, int] = {}
        missing = set()
        # iterative post-order so generations are known before children
        for start in fresh:
            if start in gens:
                continue
            stack = [(start, 0)]
            on_path = {start}
            while stack:
                cid, i = stack[-1]
                ps = fresh[cid]
                if i < len(ps):
                    stack[-1] = (cid, i + 1)
                    p = ps[i]
                    if p in gens or p in self._gen:
                        continue
                    if p not in fresh:
                        missing.add(p)
                        continue
                    if p in on_path:
                        raise ValueError("commit graph contains a cycle")
                    on_path.add(p)
                    stack.append((p, 0))
                else:
                    stack.pop()
                    on_path.discard(cid)
                    g = 0
                    for p in ps:
                        pg = gens.get(p) or self._gen.get(p, 0)
                        if pg > g:
                            g = pg
                    gens[cid] = g + 1
        if missing:
            raise MissingDependency(missing)
        with self._parents.mutate() as pm, self._gen.mutate() as gm:
            for cid, ps in fresh.items():
                pm[cid] = ps
                gm[cid] = gens[cid]
            return CommitGraph(pm.finish(), gm.finish())

    def union(self, other: CommitGraph) -> CommitGraph:
        if len(other) > len(self):
            self, other = other, self
        with self._parents.mutate() as pm, self._gen.mutate() as gm:
            for cid, ps in other._parents.items():
                if cid not in pm:
                    pm[cid] = ps
                    gm[cid] = other._gen[cid]
            return CommitGraph(pm.finish(), gm.finish())

    def encode_into(self, w: Writer) -> None:
        w.u32(len(self._parents))
        for cid in sorted(self._parents.keys()):
            w.digest(cid).digests(self._parents[cid])


def _encode_fragment(w: Writer, nodes: Mapping[CommitId, tuple[CommitId, ...]]) -> None:
    w.u32(len(nodes))
    for cid in sorted(nodes):
        w.digest(cid).digests(nodes[cid])


def _decode_fragment(r: Reader) -> dict[CommitId, tuple[CommitId, ...]]:
    out = {}
    for _ in range(r.u32()):
        cid = r.digest()
        out[cid] = tuple(r.digests())
    return out


@dataclass(frozen=True)
class DownstreamOp:
    """Additive delta: commit-graph fragment plus heads to union into a branch."""

    branch: BranchId
    added_graph: immutables.Map = field(default_factory=immutables.Map)
    added_heads: frozenset = frozenset()

    def __post_init__(self):
        if not isinstance(self.added_graph, immutables.Map):
            object.__setattr__(
                self, "added_graph", immutables.Map({k: tuple(v) for k, v in self.added_graph.items()})
            )
        object.__setattr__(self, "added_heads", frozenset(self.added_heads))

    @property
    def is_noop(self) -> bool:
        return not self.added_graph and not self.added_heads

    def commit_ids(self) -> set[CommitId]:
        return set(self.added_graph.keys()) | set(self.added_heads)

    def encode(self) -> bytes:
        w = Writer().text(self.branch)
        _encode_fragment(w, self.added_graph)
        w.digests(sorted(self.added_heads))
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> DownstreamOp:
        r = Reader(data)
        op = cls.read(r)
        r.finish()
        return op

    @classmethod
    def read(cls, r: Reader) -> DownstreamOp:
        branch = r.text()
        graph = _decode_fragment(r)
        heads = frozenset(r.digests())
        return cls(branch, immutables.Map(graph), heads)

    @cached_property
    def digest(self) -> bytes:
        return digest(b"op:cdvcs:" + self.encode())


@dataclass(frozen=True)
class CdvcsState:
    graph: CommitGraph
    branches: immutables.Map  # BranchId -> frozenset[CommitId]

    @classmethod
    def empty(cls) -> CdvcsState:
        """A state with no commits; only used while adopting a replica from a peer."""
        return cls(CommitGraph(), immutables.Map())

    def heads(self, branch: BranchId) -> frozenset:
        try:
            return self.branches[branch]
        except KeyError:
            raise NoSuchBranch(branch) from None

    def head(self, branch: BranchId) -> CommitId:
        """The single head of ``branch``; raises ConflictPending otherwise."""
        hs = self.heads(branch)
        if len(hs) != 1:
            raise ConflictPending(f"branch {branch!r} has {len(hs)} heads")
        return next(iter(hs))

    def encode(self) -> bytes:
        w = Writer()
        self.graph.encode_into(w)
        w.u32(len(self.branches))
        for name in sorted(self.branches.keys()):
            w.text(name).digests(sorted(self.branches[name]))
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> CdvcsState:
        r = Reader(data)
        state = cls.read(r)
        r.finish()
        return state

    @classmethod
    def read(cls, r: Reader) -> CdvcsState:
        graph = CommitGraph.from_dict(_decode_fragment(r))
        branches = {}
        for _ in range(r.u32()):
            name = r.text()
            branches[name] = frozenset(r.digests())
        return cls(graph, immutables.Map(branches))

    # generic replication interface used by the peer

    def apply(self, op: DownstreamOp) -> CdvcsState:
        return apply_downstream(self, op)

    def merge(self, other: CdvcsState) -> CdvcsState:
        return state_merge(self, other)

    def novelty(self, other: CdvcsState) -> list[DownstreamOp]:
        """Ops that fold the content of ``other`` into this state."""
        return novelty_ops(self, other)


@dataclass(frozen=True)
class LcaResult:
    ancestors: frozenset
    visited_a: frozenset
    visited_b: frozenset


# lca flags
_A, _B, _STALE = 1, 2, 4
_BOTH = _A | _B


def lca(graph_a: CommitGraph, start_a: CommitId, graph_b: CommitGraph, start_b: CommitId) -> LcaResult:
    """Maximal common ancestors of two commits, possibly living in different graphs.

    Both sides are expanded together over parent edges, highest generation
    first, so a node's flags are final when it is popped. A node reached
    from both sides is a common ancestor; everything below it is marked
    stale and can no longer be reported. The walk stops once only stale
    nodes are queued.
    """
    if start_a not in graph_a:
        raise UnknownCommit(hexid(start_a))
    if start_b not in graph_b:
        raise UnknownCommit(hexid(start_b))

    pa, ga = graph_a._parents, graph_a._gen
    pb, gb = graph_b._parents, graph_b._gen

    def info(cid):
        ps = pa.get(cid)
        if ps is not None:
            return ps, ga[cid]
        ps = pb.get(cid)
        if ps is None:
            raise MissingDependency([cid])
        return ps, gb[cid]

    flags = {start_a: _A}
    flags[start_b] = flags.get(start_b, 0) | _B
    heap = []
    for s in flags:
        heapq.heappush(heap, (-info(s)[1], s))
    active = len(flags)
    found, visited_a, visited_b = set(), set(), set()

    while heap and active:
        _, cid = heapq.heappop(heap)
        f = flags[cid]
        if not f & _STALE:
            active -= 1
        if f & _A:
            visited_a.add(cid)
        if f & _B:
            visited_b.add(cid)
        if (f & _BOTH) == _BOTH and not f & _STALE:
            found.add(cid)
            f |= _STALE
        for p in info(cid)[0]:
            old = flags.get(p)
            if old is None:
                flags[p] = f
                heapq.heappush(heap, (-info(p)[1], p))
                if not f & _STALE:
                    active += 1
            else:
                new = old | f
                if new != old:
                    flags[p] = new
                    if new & _STALE and not old & _STALE:
                        active -= 1
    if not found:
        raise NoCommonAncestor(f"{hexid(start_a, True)} / {hexid(start_b, True)}")
    return LcaResult(frozenset(found), frozenset(visited_a), frozenset(visited_b))


def is_ancestor(graph: CommitGraph, a: CommitId, b: CommitId) -> bool:
    """True if ``a`` is a proper ancestor of ``b``."""
    ga = graph.generation(a)
    if a == b or ga >= graph.generation(b):
        return False
    # walk down from b, never below a's generation
    parents, gen = graph._parents, graph._gen
    seen = {b}
    stack = [b]
    while stack:
        for p in parents[stack.pop()]:
            if p == a:
                return True
            if p not in seen and gen[p] > ga:
                seen.add(p)
                stack.append(p)
    return False


def remove_ancestors(graph: CommitGraph, heads: Iterable[CommitId]) -> frozenset:
    """Drop every head that is a proper ancestor of another head (pairwise)."""
    heads = frozenset(heads)
    for h in heads:
        if h not in graph:
            raise UnknownCommit(hexid(h))
    if len(heads) < 2:
        return heads
    return frozenset(h for h in heads if not any(is_ancestor(graph, h, o) for o in heads))


def commit_history(graph: CommitGraph, c: CommitId) -> list[CommitId]:
    """Topological order of all ancestors of ``c`` (inclusive), ending with ``c``.

    Depth-first from ``c`` visiting parents in their stored order; a commit
    is emitted once all of its parents have been.
    """
    if c not in graph:
        raise UnknownCommit(hexid(c))
    out: list[CommitId] = []
    seen = {c}
    stack = [(c, graph.parents(c), 0)]
    while stack:
        cid, ps, i = stack[-1]
        if i < len(ps):
            stack[-1] = (cid, ps, i + 1)
            p = ps[i]
            if p not in seen:
                seen.add(p)
                stack.append((p, graph.parents(p), 0))
        else:
            stack.pop()
            out.append(cid)
    return out


# upstream operations


def new_cdvcs(root_node: CommitNode, branch: BranchId = "master") -> CdvcsState:
    if root_node.parents:
        raise InvalidRoot("root commit must not have parents")
    r = root_node.id
    return CdvcsState(CommitGraph.from_dict({r: ()}), immutables.Map({branch: frozenset([r])}))


def commit(state: CdvcsState, branch: BranchId, node: CommitNode) -> tuple[CdvcsState, DownstreamOp]:
    p = state.head(branch)
    if node.parents != (p,):
        raise StaleParent(f"commit must have the branch head {hexid(p, True)} as its only parent")
    c = node.id
    op = DownstreamOp(branch, immutables.Map({c: (p,)}), frozenset([c]))
    return apply_downstream(state, op), op


def create_branch(state: CdvcsState, new_branch: BranchId, at: CommitId) -> tuple[CdvcsState, DownstreamOp]:
    if new_branch in state.branches:
        raise BranchExists(new_branch)
    if at not in state.graph:
        raise UnknownCommit(hexid(at))
    op = DownstreamOp(new_branch, immutables.Map(), frozenset([at]))
    return apply_downstream(state, op), op


def pull(
    state: CdvcsState, branch: BranchId, remote_graph: CommitGraph, remote_head: CommitId
) -> tuple[CdvcsState, DownstreamOp]:
    """Integrate ``remote_head`` and its missing ancestry into ``branch``.

    Returns the unchanged state and an empty op if ``remote_head`` is
    already part of the branch history.
    """
    h = state.head(branch)
    if remote_head not in remote_graph:
        raise UnknownCommit(hexid(remote_head))
    res = lca(state.graph, h, remote_graph, remote_head)
    if res.ancestors == {remote_head}:
        return state, DownstreamOp(branch)
    local = state.graph
    added = {}
    todo = [n for n in res.visited_b if n not in local]
    while todo:
        n = todo.pop()
        if n in added:
            continue
        ps = remote_graph.parents(n)
        added[n] = ps
        todo.extend(p for p in ps if p not in local and p not in added)
    op = DownstreamOp(branch, immutables.Map(added), frozenset([remote_head]))
    return apply_downstream(state, op), op


def make_merge_node(ordered_heads, txn_refs=(), meta=None) -> CommitNode:
    return CommitNode(tuple(ordered_heads), tuple(txn_refs), meta or ())


def merge(
    state: CdvcsState, branch: BranchId, ordered_heads, txn_refs=(), meta=None
) -> tuple[CdvcsState, DownstreamOp]:
    current = state.heads(branch)
    ordered_heads = tuple(ordered_heads)
    if len(current) < 2:
        raise NothingToMerge(f"branch {branch!r} has a single head")
    if len(set(ordered_heads)) != len(ordered_heads) or set(ordered_heads) != current:
        raise StaleMerge("merge parents must be exactly the current heads")
    e = make_merge_node(ordered_heads, txn_refs, meta).id
    op = DownstreamOp(branch, immutables.Map({e: ordered_heads}), frozenset([e]))
    return apply_downstream(state, op), op


def conflicts(state: CdvcsState, branch: BranchId) -> frozenset | None:
    hs = state.heads(branch)
    return hs if len(hs) > 1 else None


# downstream


def apply_downstream(state: CdvcsState, op: DownstreamOp) -> CdvcsState:
    graph = state.graph.with_nodes(op.added_graph)
    missing = [h for h in op.added_heads if h not in graph]
    if missing:
        raise MissingDependency(missing)
    old = state.branches.get(op.branch)
    if (old is not None and op.added_heads <= old) or (old is None and not op.added_heads):
        if graph is state.graph:
            return state
        return CdvcsState(graph, state.branches)
    heads = remove_ancestors(graph, (old or frozenset()) | op.added_heads)
    if graph is state.graph and heads == old:
        return state
    return CdvcsState(graph, state.branches.set(op.branch, heads))


def state_merge(state: CdvcsState, other: CdvcsState) -> CdvcsState:
    graph = state.graph.union(other.graph)
    branches = {}
    for name in set(state.branches.keys()) | set(other.branches.keys()):
        hs = state.branches.get(name, frozenset()) | other.branches.get(name, frozenset())
        branches[name] = remove_ancestors(graph, hs)
    return CdvcsState(graph, immutables.Map(branches))


def novelty_ops(state: CdvcsState, other: CdvcsState) -> list[DownstreamOp]:
    """Per-branch ops whose application to ``state`` equals ``state_merge(state, other)``.

    Every commit is an ancestor of some branch head, so shipping each
    branch's unknown ancestry with its heads covers the whole graph.
    """
    ops = []
    local = state.graph
    for name in sorted(other.branches.keys()):
        heads = other.branches[name]
        if state.branches.get(name) == heads:
            continue
        added = {}
        todo = [h for h in heads if h not in local]
        while todo:
            n = todo.pop()
            if n in added:
                continue
            ps = other.graph.parents(n)
            added[n] = ps
            todo.extend(p for p in ps if p not in local and p not in added)
        ops.append(DownstreamOp(name, immutables.Map(added), heads))
    return ops
