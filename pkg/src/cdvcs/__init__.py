"""Replicated version control as a CRDT: a commit DAG with multi-head branches."""

from .core import (
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
from .orset import OrDelta, OrSetState, or_add, or_apply_downstream, or_elements, or_remove, or_state_merge
from .peer import Accept, Peer, Reject, Replace
from .simnet import Network, Partition, SimConfig
from .store import FileStore, MemoryStore

__all__ = [
    "CdvcsState", "CommitGraph", "CommitNode", "DownstreamOp",
    "apply_downstream", "commit", "commit_history", "conflicts", "create_branch",
    "lca", "merge", "new_cdvcs", "pull", "remove_ancestors", "state_merge",
    "OrDelta", "OrSetState", "or_add", "or_apply_downstream", "or_elements", "or_remove", "or_state_merge",
    "Accept", "Peer", "Reject", "Replace",
    "Network", "Partition", "SimConfig",
    "FileStore", "MemoryStore",
]
