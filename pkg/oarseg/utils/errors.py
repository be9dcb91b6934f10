"""
Error handling for oarseg.
"""

from typing import Any, Dict, Optional, Sequence


class OarsegError(Exception):
    """Base exception for oarseg."""

    def __init__(self, message: str, error_code: Optional[str] = None):
        """Initialize error.

        Args:
            message: Error message
            error_code: Error code
        """
        self.message = message
        self.error_code = error_code
        super().__init__(self.message)


class FileAccessError(OarsegError):
    """Error reading or writing case, checkpoint or report files."""
    pass


class ValidationError(OarsegError):
    """Error with validation of inputs or invariants."""
    pass


class DimensionError(ValidationError):
    """Shape mismatch between operands of a tensor operation."""

    def __init__(
        self,
        op: str,
        expected: Any,
        actual: Any,
        message: Optional[str] = None,
    ):
        """Initialize dimension error.

        Args:
            op: Name of the operation that rejected its operands
            expected: Expected extent or shape
            actual: Received extent or shape
            message: Optional override message
        """
        self.op = op
        self.expected = expected
        self.actual = actual
        super().__init__(
            message or f"{op}: expected {expected}, got {actual}",
            "VAL_004",
        )


class NumericError(OarsegError):
    """Non-finite values produced by an operation, layer or batch."""

    def __init__(
        self,
        message: str,
        error_code: str = "NUM_001",
        op: Optional[str] = None,
        layer: Optional[str] = None,
        batch_index: Optional[int] = None,
    ):
        """Initialize numeric error.

        Args:
            message: Error message
            error_code: Error code
            op: Tensor operation that produced the non-finite value
            layer: Dotted module path where the value surfaced
            batch_index: Training batch index, when raised by the training loop
        """
        self.op = op
        self.layer = layer
        self.batch_index = batch_index
        super().__init__(message, error_code)

    def __str__(self) -> str:
        parts = [self.message]
        if self.layer:
            parts.append(f"layer={self.layer}")
        if self.batch_index is not None:
            parts.append(f"batch={self.batch_index}")
        return " | ".join(parts)


class GraphError(OarsegError):
    """Misuse of the compute graph (backward on detached or freed tensors)."""
    pass


class ConfigurationError(OarsegError):
    """Error with configuration."""
    pass


ERROR_CODES: Dict[str, str] = {
    # File Access Errors
    "FILE_001": "File not found",
    "FILE_002": "Header and payload size mismatch",
    "FILE_003": "Unknown dtype",
    "FILE_004": "Malformed header",

    # Validation Errors
    "VAL_001": "Invalid input",
    "VAL_002": "Missing required field",
    "VAL_003": "Invalid field value",
    "VAL_004": "Dimension mismatch",
    "VAL_005": "Label exceeds class count",

    # Numeric Errors
    "NUM_001": "Non-finite value",
    "NUM_002": "Attention normalizer underflow",
    "NUM_003": "Non-finite loss",
    "NUM_004": "Non-finite gradient",

    # Graph Errors
    "GRAPH_001": "Tensor is detached from the graph",
    "GRAPH_002": "Graph already freed",
    "GRAPH_003": "Loss is not a scalar",

    # Configuration Errors
    "CONF_001": "Invalid configuration",
    "CONF_002": "Missing required setting",
    "CONF_003": "Invalid setting value",
}


def get_error_message(error_code: str) -> str:
    """Get error message for error code.

    Args:
        error_code: Error code

    Returns:
        Error message
    """
    return ERROR_CODES.get(error_code, "Unknown error")


def raise_error(error_code: str, message: Optional[str] = None) -> None:
    """Raise error with code and message.

    Args:
        error_code: Error code
        message: Error message (optional)
    """
    error_message = message or get_error_message(error_code)

    if error_code.startswith("FILE"):
        raise FileAccessError(error_message, error_code)
    elif error_code.startswith("VAL"):
        raise ValidationError(error_message, error_code)
    elif error_code.startswith("NUM"):
        raise NumericError(error_message, error_code)
    elif error_code.startswith("GRAPH"):
        raise GraphError(error_message, error_code)
    elif error_code.startswith("CONF"):
        raise ConfigurationError(error_message, error_code)
    else:
        raise OarsegError(error_message, error_code)


def check_shape(op: str, shape: Sequence[int], ndim: int) -> None:
    """Raise a DimensionError unless ``shape`` has ``ndim`` axes."""
    if len(shape) != ndim:
        raise DimensionError(op, f"{ndim}-D", tuple(shape))
