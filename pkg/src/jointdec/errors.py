"""Exception hierarchy shared by every jointdec module."""


class JointDecError(Exception):
    """Base class for all jointdec errors."""


class DimensionError(JointDecError, ValueError):
    """Tensor shapes do not line up."""


class ConfigurationError(JointDecError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ContractError(JointDecError, ValueError):
    """A caller broke an operation's precondition."""


class NumericError(JointDecError, ArithmeticError):
    """NaN or Inf appeared where finite values are required."""


class FormatError(JointDecError, ValueError):
    """An on-disk file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class JointDecisionWarning(UserWarning):
    """Degenerate but still computable joint-decision state."""
