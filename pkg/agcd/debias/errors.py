"""Package exceptions"""
from typing import Optional


class AgcdError(Exception):
    """Base of every error raised by this package"""
    message = "Unexpected error"

    def __init__(self, msg: Optional[str] = None):
        super().__init__(msg or self.message)


class ShapeError(AgcdError, ValueError):
    """Operand shapes or dtypes are not compatible"""
    message = "Incompatible tensor shapes"


class GraphError(AgcdError, RuntimeError):
    """The autodiff graph was used in an unsupported way"""
    message = "Invalid use of the autodiff graph"


class NumericalError(AgcdError, ArithmeticError):
    """A NaN or an infinity appeared"""
    message = "Non-finite value encountered"


class ConfigError(AgcdError, ValueError):
    """A configuration value makes no sense"""
    message = "Invalid configuration"


class DataError(AgcdError):
    """Dataset or checkpoint files are missing or broken"""
    message = "Invalid data"

    def __init__(self, msg: Optional[str] = None,
                 path: Optional[str] = None):
        self.path = path
        if path is not None:
            msg = f"{path}: {msg or self.message}"
        super().__init__(msg)


class TensorFormatError(DataError):
    """A tensor record does not follow the AGT1 format"""
    message = "Malformed tensor record"
