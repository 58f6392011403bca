"""Brute-force reference checks over commit graphs.

These use plain reachability (full ancestor sets) and share nothing with
the LCA walk in :mod:`cdvcs.core`, so they can serve as oracles for it.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping


def ancestor_sets(parents: Mapping[bytes, Iterable[bytes]]) -> dict[bytes, frozenset]:
    """Reflexive-transitive ancestor set of every node."""
    memo: dict[bytes, frozenset] = {}
    for start in parents:
        if start in memo:
            continue
        stack = [start]
        while stack:
            n = stack[-1]
            pending = [p for p in parents[n] if p not in memo]
            if pending:
                stack.extend(pending)
                continue
            stack.pop()
            if n in memo:
                continue
            acc = {n}
            for p in parents[n]:
                acc |= memo[p]
            memo[n] = frozenset(acc)
    return memo


def maximal(nodes: Iterable[bytes], anc: Mapping[bytes, frozenset]) -> frozenset:
    """Members of ``nodes`` that are not a proper ancestor of another member."""
    nodes = frozenset(nodes)
    return frozenset(n for n in nodes if not any(n != m and n in anc[m] for m in nodes))


def brute_lca(parents: Mapping[bytes, Iterable[bytes]], a: bytes, b: bytes, anc=None) -> frozenset:
    anc = anc if anc is not None else ancestor_sets(parents)
    return maximal(anc[a] & anc[b], anc)


def check_state(state) -> list[str]:
    """Return violated invariants of a CDVCS state (empty list when sound)."""
    problems = []
    parents = state.graph.to_dict()
    for cid, ps in parents.items():
        for p in ps:
            if p not in parents:
                problems.append(f"dangling parent {p.hex()[:10]} of {cid.hex()[:10]}")
    if problems:
        return problems
    anc = ancestor_sets(parents)
    for cid in parents:
        if any(cid in anc[p] for p in parents[cid]):
            problems.append(f"cycle through {cid.hex()[:10]}")
    if not state.branches:
        problems.append("no branches")
    for name, heads in state.branches.items():
        if not heads:
            problems.append(f"branch {name!r} has no heads")
        for h in heads:
            if h not in parents:
                problems.append(f"branch {name!r} head {h.hex()[:10]} not in graph")
        if heads and all(h in parents for h in heads) and maximal(heads, anc) != heads:
            problems.append(f"branch {name!r} heads are not an antichain")
    return problems
