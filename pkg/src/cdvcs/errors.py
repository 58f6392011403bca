"""Exception types raised across the package."""


class CdvcsError(Exception):
    """Base class for every error raised by this package."""


# datatype errors
class InvalidRoot(CdvcsError):
    pass


class NoSuchBranch(CdvcsError):
    pass


class BranchExists(CdvcsError):
    pass


class UnknownCommit(CdvcsError):
    pass


class ConflictPending(CdvcsError):
    """The branch has more than one head; merge before committing or pulling."""


class StaleParent(CdvcsError):
    pass


class StaleMerge(CdvcsError):
    pass


class NothingToMerge(CdvcsError):
    pass


class MissingDependency(CdvcsError):
    """A downstream op references commits the receiver does not have."""

    def __init__(self, missing):
        self.missing = frozenset(missing)
        super().__init__(f"{len(self.missing)} missing parent commit(s)")


class NoCommonAncestor(CdvcsError):
    pass


class NotPresent(CdvcsError):
    pass


# store errors
class StorageError(CdvcsError):
    pass


class NotFound(StorageError):
    pass


class IntegrityError(StorageError):
    pass


# replication / simulation
class ProtocolError(CdvcsError):
    pass


class ConfigError(CdvcsError):
    pass


class NonQuiescent(CdvcsError):
    pass


class DecodeError(ProtocolError):
    pass
