from __future__ import annotations


class MetaMDLError(Exception):
    """Base class for library errors."""


class ConfigError(MetaMDLError, ValueError):
    pass


class ShapeError(MetaMDLError, ValueError):
    pass


class SplitError(MetaMDLError, ValueError):
    pass


class UndefinedMetricError(MetaMDLError, ValueError):
    pass


class TrainingDiverged(MetaMDLError, FloatingPointError):
    """Raised when a loss or gradient goes non-finite.

    ``params`` holds the parameters after the last completed outer step.
    """

    def __init__(self, step: int | None, what: str, params=None):
        where = "" if step is None else f" at step {step}"
        super().__init__(f"training diverged{where}: {what}")
        self.step = step
        self.params = params
