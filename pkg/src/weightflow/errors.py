"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
NumericError (and subclasses) -> 4.
"""


class WeightFlowError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(WeightFlowError):
    """Invalid configuration: unknown keys, bad enum values, out-of-range settings."""


class ShapeError(WeightFlowError):
    """Tensor shapes inconsistent with the declared architecture."""


class ArgumentError(WeightFlowError):
    """Invalid argument outside of shape problems (empty data, bad ranges)."""


class DataError(WeightFlowError):
    """Dataset ingestion failure (bad magic, truncation, count mismatch)."""


class NumericError(WeightFlowError):
    """Numerical failure during training or integration."""


class TrainingDivergedError(NumericError):
    """Loss became non-finite; message names the failing step."""


class IntegrationError(NumericError):
    """ODE vector field produced a non-finite value; message names the step."""
