"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, LearnerError -> 3,
everything else -> 1.
"""


class CerealsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CerealsError):
    """Invalid or inconsistent configuration / request parameters."""


class DataError(CerealsError):
    """Malformed data: bad tensors, out-of-bounds vertices, shape mismatches."""


class StateError(CerealsError):
    """Operation requested in an illegal state (e.g. predicting before training)."""


class InvariantError(CerealsError):
    """A structural invariant would be violated (e.g. overlapping labeled regions)."""


class LearnerError(CerealsError):
    """Learner or external-worker protocol failure."""
