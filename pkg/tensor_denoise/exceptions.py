"""
Custom exceptions and error handling for the tensor denoising toolkit.
Every failure maps onto a stable command-line exit code.
"""
from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_NUMERICAL = 3


class TensorDenoiseError(Exception):
    """Base exception for tensor denoising errors"""

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}
        super().__init__(self.message)


class ShapeError(TensorDenoiseError, ValueError):
    """Raised when tensor or volume dimensions do not conform"""
    pass


class DataValidationError(TensorDenoiseError, ValueError):
    """Raised when input data violates a precondition"""
    pass


class ConfigurationError(TensorDenoiseError):
    """Raised when configuration is invalid or missing"""
    pass


class VolumeFormatError(TensorDenoiseError):
    """Raised when a volume file cannot be decoded"""
    pass


class NumericalConsistencyError(TensorDenoiseError):
    """Raised when a computed quantity breaks a numerical invariant"""
    pass


class DivergenceError(NumericalConsistencyError):
    """Raised when an iterative solver produces a non-finite objective"""
    pass


class RankDeficiencyError(NumericalConsistencyError):
    """Raised when a spectral slice system is singular"""
    pass


class UnidentifiableDictionaryError(NumericalConsistencyError):
    """Raised when the coefficients carry no information about the dictionary"""
    pass


_EXIT_CODE_MAPPING = (
    (ConfigurationError, EXIT_USAGE),
    (DataValidationError, EXIT_USAGE),
    (ShapeError, EXIT_USAGE),
    (VolumeFormatError, EXIT_FORMAT),
    (NumericalConsistencyError, EXIT_NUMERICAL),
)


def exit_code_for(error: BaseException) -> int:
    """
    Convert an exception to the command-line exit code contract.

    Args:
        error: The raised exception

    Returns:
        1 for usage/config, 2 for format and file I/O, 3 for numerical failures
    """
    for error_type, code in _EXIT_CODE_MAPPING:
        if isinstance(error, error_type):
            return code
    if isinstance(error, OSError):
        return EXIT_FORMAT
    return EXIT_NUMERICAL if isinstance(error, ArithmeticError) else EXIT_USAGE


def describe_error(error: BaseException) -> Dict[str, Any]:
    """
    Build a log-safe description of an error.

    Args:
        error: The raised exception

    Returns:
        Dictionary with error code, message and details
    """
    if isinstance(error, TensorDenoiseError):
        return {
            "error_code": error.error_code,
            "message": error.message,
            "details": dict(error.details),
        }
    return {
        "error_code": type(error).__name__,
        "message": str(error),
        "details": {},
    }
