"""Exception hierarchy shared by every iamseq module."""


class IAMError(Exception):
    """Base class for all iamseq errors."""


class DimensionError(IAMError, ValueError):
    """Operand shapes are incompatible with an operation."""


class NumericError(IAMError, ArithmeticError):
    """A NaN or infinity was produced or consumed."""


class ContractError(IAMError, ValueError):
    """A precondition of an operation was violated."""


class ParameterError(IAMError, ValueError):
    """A hyperparameter is outside its admissible range."""


class DataLoadError(IAMError, ValueError):
    """Input data could not be parsed or failed validation."""


class CheckpointIntegrityError(IAMError, ValueError):
    """A checkpoint file is truncated or a record is corrupt."""


class CheckpointVersionError(IAMError, ValueError):
    """A checkpoint declares a format version this build cannot read."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss or gradient."""


class ConfigError(IAMError, ValueError):
    """A run configuration failed schema validation."""
