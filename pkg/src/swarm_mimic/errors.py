"""Exception types shared across the package."""


class SwarmMimicError(Exception):
    """Base class for all package errors."""


class NoNeighbors(SwarmMimicError, ValueError):
    pass


class CoincidentAgents(SwarmMimicError, ValueError):
    pass


class SpawnInfeasible(SwarmMimicError, RuntimeError):
    pass


class NoPairs(SwarmMimicError, ValueError):
    pass


class DimensionMismatch(SwarmMimicError, ValueError):
    pass


class EmptyPool(SwarmMimicError, ValueError):
    pass


class Divergence(SwarmMimicError, FloatingPointError):
    """Raised when training produces a non-finite loss.

    ``history`` carries the epochs completed before the failure.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class CheckpointError(SwarmMimicError, ValueError):
    pass


class ConfigError(SwarmMimicError, ValueError):
    pass
