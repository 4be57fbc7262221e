"""Exception types raised by the cafe package."""


class CafeError(Exception):
    """Base class for every error the package raises on purpose."""


class DataError(CafeError, ValueError):
    """Malformed or invariant-violating input data."""


class DegeneratePartitionError(CafeError, ValueError):
    """Ties in the stratifying variable left a group empty."""


class OccupancyError(CafeError, ValueError):
    """A group has fewer than two treated or two control units."""

    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


class ZeroVarianceError(CafeError, ValueError):
    """The plug-in variance of a group difference-in-means is zero."""

    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


class RankDeficiencyError(CafeError, ValueError):
    pass


class ConvergenceError(CafeError, RuntimeError):
    pass


class AttributionUnavailableError(CafeError):
    """Stage 1 rejected but no observational test set was supplied."""


class ConfigError(CafeError, ValueError):
    pass


class ScenarioAbortedError(CafeError, RuntimeError):
    """More than the tolerated fraction of simulation replicates failed."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)
