"""Content-addressed value store and partitioned commit-graph persistence.

Values are named by the SHA-256 of their bytes and verified on every
read. Commit nodes are stored like any other value, so a commit id is
also a store reference.

Commit-graph metadata is partitioned into buckets keyed by the first 12
bits of the commit id. Persisting a graph delta rewrites only the
buckets the delta touches, which keeps the per-commit cost flat as the
history grows.
"""

from __future__ import annotations

import os
import tempfile
from collections.abc import Iterable, Mapping
from pathlib import Path

from .codec import Reader, Writer, digest
from .core import CommitNode, DownstreamOp
from .errors import IntegrityError, NotFound, StorageError

HashRef = bytes

BUCKET_BITS = 12


def bucket_key(cid: bytes) -> str:
    return cid.hex()[: BUCKET_BITS // 4]


def encode_bucket(entries: Mapping[bytes, tuple]) -> bytes:
    w = Writer().u32(len(entries))
    for cid in sorted(entries):
        w.digest(cid).digests(entries[cid])
    return w.getvalue()


def decode_bucket(data: bytes) -> dict[bytes, tuple]:
    r = Reader(data)
    out = {}
    for _ in range(r.u32()):
        cid = r.digest()
        out[cid] = tuple(r.digests())
    r.finish()
    return out


class ValueStore:
    """Shared logic; backends implement ``_read``, ``_write``, ``_exists`` and bucket IO."""

    def __init__(self) -> None:
        self._buckets: dict[str, dict[bytes, tuple]] = {}

    # backend hooks
    def _read(self, ref: HashRef) -> bytes | None:
        raise NotImplementedError

    def _write(self, ref: HashRef, value: bytes) -> None:
        raise NotImplementedError

    def _exists(self, ref: HashRef) -> bool:
        raise NotImplementedError

    def _load_bucket(self, key: str) -> dict[bytes, tuple]:
        return {}

    def _save_bucket(self, key: str, entries: dict[bytes, tuple]) -> None:
        pass

    def __len__(self) -> int:
        raise NotImplementedError

    # public api
    def put(self, value: bytes) -> HashRef:
        ref = digest(value)
        if not self._exists(ref):
            try:
                self._write(ref, value)
            except OSError as exc:
                raise StorageError(f"cannot write {ref.hex()}: {exc}") from exc
        return ref

    def put_node(self, node: CommitNode) -> bytes:
        ref = self.put(node.encode())
        assert ref == node.id
        return ref

    def has(self, ref: HashRef) -> bool:
        return self._exists(ref)

    def get(self, ref: HashRef) -> bytes:
        value = self._read(ref)
        if value is None:
            raise NotFound(ref.hex())
        if digest(value) != ref:
            raise IntegrityError(f"stored value for {ref.hex()} does not match its digest")
        return value

    def get_node(self, cid: bytes) -> CommitNode:
        return CommitNode.decode(self.get(cid))

    def missing_refs(self, op) -> set[HashRef]:
        """Commit nodes and transaction payloads referenced by ``op`` that are absent here."""
        if not isinstance(op, DownstreamOp):
            return set()
        missing = set()
        for cid in op.commit_ids():
            if not self.has(cid):
                missing.add(cid)
                continue
            for ref in self.get_node(cid).txn_refs:
                if not self.has(ref):
                    missing.add(ref)
        return missing

    def persist_graph_delta(self, delta: Mapping[bytes, Iterable[bytes]]) -> set[str]:
        """Merge ``delta`` into the metadata buckets; return keys of rewritten buckets."""
        by_bucket: dict[str, dict[bytes, tuple]] = {}
        for cid, parents in delta.items():
            by_bucket.setdefault(bucket_key(cid), {})[cid] = tuple(parents)
        touched = set()
        for key, entries in by_bucket.items():
            bucket = self._buckets.get(key)
            if bucket is None:
                bucket = self._buckets[key] = self._load_bucket(key)
            fresh = {c: ps for c, ps in entries.items() if c not in bucket}
            if not fresh:
                continue
            bucket.update(fresh)
            try:
                self._save_bucket(key, bucket)
            except OSError as exc:
                raise StorageError(f"cannot write bucket {key}: {exc}") from exc
            touched.add(key)
        return touched

    def bucket(self, key: str) -> dict[bytes, tuple]:
        if key not in self._buckets:
            self._buckets[key] = self._load_bucket(key)
        return dict(self._buckets[key])

    def load_graph(self) -> dict[bytes, tuple]:
        """Every persisted graph node, merged across buckets."""
        out = {}
        for key in self._bucket_keys():
            out.update(self.bucket(key))
        return out

    def _bucket_keys(self) -> Iterable[str]:
        return list(self._buckets)


class MemoryStore(ValueStore):
    def __init__(self) -> None:
        super().__init__()
        self._values: dict[bytes, bytes] = {}

    def _read(self, ref):
        return self._values.get(ref)

    def _write(self, ref, value):
        self._values[ref] = bytes(value)

    def _exists(self, ref):
        return ref in self._values

    def __len__(self):
        return len(self._values)


class FileStore(ValueStore):
    """Values in ``values/<first byte hex>/<rest hex>``; buckets in ``meta/<key>.bucket``."""

    def __init__(self, root: str | os.PathLike) -> None:
        super().__init__()
        self.root = Path(root)
        self._values_dir = self.root / "values"
        self._meta_dir = self.root / "meta"
        try:
            self._values_dir.mkdir(parents=True, exist_ok=True)
            self._meta_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        self._known: set[bytes] = set()

    def value_path(self, ref: HashRef) -> Path:
        h = ref.hex()
        return self._values_dir / h[:2] / h[2:]

    def _read(self, ref):
        try:
            return self.value_path(ref).read_bytes()
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise StorageError(str(exc)) from exc

    def _exists(self, ref):
        if ref in self._known:
            return True
        if self.value_path(ref).is_file():
            self._known.add(ref)
            return True
        return False

    def _write(self, ref, value):
        path = self.value_path(ref)
        path.parent.mkdir(exist_ok=True)
        _atomic_write(path, value)
        self._known.add(ref)

    def _bucket_path(self, key: str) -> Path:
        return self._meta_dir / f"{key}.bucket"

    def _load_bucket(self, key):
        try:
            return decode_bucket(self._bucket_path(key).read_bytes())
        except FileNotFoundError:
            return {}

    def _save_bucket(self, key, entries):
        _atomic_write(self._bucket_path(key), encode_bucket(entries))

    def _bucket_keys(self):
        return sorted(p.stem for p in self._meta_dir.glob("*.bucket"))

    def __len__(self):
        return sum(1 for p in self._values_dir.glob("*/*") if not p.name.startswith("."))


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
