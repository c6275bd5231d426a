"""Exception types shared across the package."""


class AffgroundError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(AffgroundError, ValueError):
    """A caller violated an operation's precondition."""


class ShapeError(ContractError):
    """Operand shapes or dtypes are incompatible."""


class NumericError(AffgroundError, ArithmeticError):
    """A computation produced or received non-finite values."""


class ConfigError(AffgroundError, ValueError):
    """A run configuration is invalid or inconsistent."""


class DataFormatError(AffgroundError, ValueError):
    """A file on disk does not parse as the expected format."""


class CheckpointError(AffgroundError, ValueError):
    """A checkpoint directory is incomplete or inconsistent."""


class TrainingDiverged(AffgroundError, RuntimeError):
    """Training hit a non-finite loss; carries the offending step."""

    def __init__(self, step, message):
        super().__init__(message)
        self.step = step
