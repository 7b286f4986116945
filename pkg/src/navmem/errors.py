"""Exception hierarchy shared across the engine."""


class NavmemError(Exception):
    """Base class for all engine errors."""


class DimensionMismatch(NavmemError):
    """Vector length does not match the store's embedding dimension."""


class NonMonotonicTime(NavmemError):
    """A record arrived with a start time earlier than its predecessor."""


class EmptyStore(NavmemError):
    """Retrieval was attempted on a store with no entries."""


class UnparseableTime(NavmemError):
    """A time string could not be parsed as HH:MM:SS or numeric seconds."""


class IoFailure(NavmemError):
    """Reading or writing a snapshot file failed at the OS level."""


class CorruptSnapshot(NavmemError):
    """A snapshot file is truncated, mislabeled, or fails its checksum."""


class EmptyText(NavmemError):
    """Text passed to an embedding provider was empty after trimming."""


class ProviderUnavailable(NavmemError):
    """A remote provider kept failing after all retries were exhausted."""


class EmptyLog(NavmemError):
    """An ingestion source contained no frame records."""


class LogFormatError(NavmemError):
    """A memory-log line is not a valid frame record."""


class BackendUnavailable(NavmemError):
    """The agent backend could not be reached."""


class SchemaViolation(NavmemError):
    """Backend output did not validate against the structured answer schema."""


class UnknownFunction(NavmemError):
    """A tool call named a retrieval function that does not exist."""


class IterationLimitReached(NavmemError):
    """The agent loop hit its iteration bound without an answerable signal.

    The agent does not raise this during normal operation; it returns a
    best-effort answer flagged as forced.  The class exists so callers can
    surface the condition explicitly when they want to.
    """


class InfeasibleSpec(NavmemError):
    """A synthetic world spec places an event where it cannot be observed."""


class ConfigError(NavmemError):
    """An engine config file is malformed or contains unknown keys."""
