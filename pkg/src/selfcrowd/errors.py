"""Exception types shared across the toolkit.

The CLI maps these onto its exit-code contract: config errors exit 2,
data errors exit 3, divergence exits 4.
"""


class SelfCrowdError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SelfCrowdError):
    """Invalid configuration value; message names the offending field."""


class DataValidationError(SelfCrowdError):
    """Dataset file or in-memory dataset violates the format contract."""


class DivergenceError(SelfCrowdError):
    """Training produced a non-finite loss.

    ``epoch`` is the 0-based epoch in which the divergence was detected.
    ``history`` carries the partial self-training history when the failure
    happened inside a self-training run, otherwise None.
    """

    def __init__(self, message: str, epoch: int | None = None, history=None):
        super().__init__(message)
        self.epoch = epoch
        self.history = history
