"""Exception hierarchy.

Every error raised on purpose by the package derives from ``CtxRankError``.
``ConfigError`` subclasses map to CLI exit code 2, everything else to 3.
"""


class CtxRankError(Exception):
    pass


class ConfigError(CtxRankError, ValueError):
    pass


class InvalidConfig(ConfigError):
    pass


class DataError(CtxRankError, ValueError):
    pass


class DimensionMismatch(DataError):
    pass


class DegenerateEmbedding(DataError):
    pass


class DuplicateId(DataError):
    pass


class InvalidItem(DataError):
    pass


class EmptyFeed(DataError):
    pass


class EmptyLog(DataError):
    pass


class ModeMismatch(DataError):
    pass


class SessionExhausted(DataError):
    pass


class CorruptModel(DataError):
    pass


class VersionMismatch(DataError):
    pass


class ZeroLabelMass(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class BadEdges(DataError):
    pass


class ArtifactIOError(CtxRankError, OSError):
    """File-system failure; the message always carries the offending path."""
