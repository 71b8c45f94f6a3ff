"""Exception hierarchy shared across the simulator."""


class BenchNavError(Exception):
    """Base class for all benchnav errors."""


class ConfigError(BenchNavError):
    """Invalid configuration value or combination (user input)."""


class DataError(BenchNavError):
    """Malformed or inconsistent data passed between pipeline stages."""


class TrainingError(DataError):
    """Model training cannot proceed on the given table."""


class NumericError(BenchNavError):
    """Numerical failure (non-finite inputs, factorization breakdown)."""


class GenerationError(BenchNavError):
    """Terrain generation could not satisfy its feasibility contract."""


class BoundsError(BenchNavError):
    """Spatial query outside the map extent."""


class PlanningFailure(BenchNavError):
    """A planner could not produce a usable plan or action."""
