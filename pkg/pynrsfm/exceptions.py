"""
Custom Exception Hierarchy for NRSfM Operations

Every error carries a machine-readable ``error_code`` for logging and an
``exit_code`` used by the command-line entry point.
"""

from typing import Any, List, Optional


class NRSfMException(Exception):
    """Base exception for all pynrsfm errors"""

    exit_code: int = 2

    def __init__(self, message: str, error_code: Optional[str] = None):
        """
        Initialize pynrsfm exception.

        Args:
            message: Human-readable error message
            error_code: Machine-readable error code for logging
        """
        super().__init__(message)
        self.error_code = error_code or self.__class__.__name__


class ConfigurationError(NRSfMException):
    """Raised when configuration is invalid"""

    exit_code = 1

    def __init__(
        self,
        message: str,
        config_field: Optional[str] = None,
        suggestions: Optional[List[str]] = None
    ):
        """
        Initialize configuration error.

        Args:
            message: Error description
            config_field: Name of the invalid configuration field
            suggestions: Close matches for a misspelled key
        """
        if suggestions:
            message += f". Did you mean: {', '.join(suggestions[:3])}?"
        super().__init__(message, error_code="CONFIG_ERROR")
        self.config_field = config_field
        self.suggestions = suggestions or []


class UsageError(NRSfMException):
    """Raised when a command is invoked with missing or conflicting inputs"""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message, error_code="USAGE_ERROR")


class ShapeError(NRSfMException):
    """Raised when array dimensions do not agree"""

    def __init__(
        self,
        operation: str,
        expected: Any = None,
        actual: Any = None,
        message: Optional[str] = None
    ):
        """
        Initialize shape error.

        Args:
            operation: The operation being attempted (e.g., 'matmul')
            expected: Expected shape or dimension
            actual: Shape or dimension that was received
            message: Optional custom message
        """
        if message is None:
            message = f"Shape mismatch in {operation}"
            if expected is not None or actual is not None:
                message += f": expected {expected}, got {actual}"

        super().__init__(message, error_code="SHAPE_ERROR")
        self.operation = operation
        self.expected = expected
        self.actual = actual


class ContractError(NRSfMException):
    """Raised when an operation's precondition is violated"""

    def __init__(self, message: str, operation: Optional[str] = None):
        super().__init__(message, error_code="CONTRACT_ERROR")
        self.operation = operation


class LandmarkParseError(NRSfMException):
    """Raised when a landmark or mocap record cannot be parsed"""

    def __init__(self, path: str, line: int, reason: str):
        """
        Initialize parse error.

        Args:
            path: File being parsed
            line: 1-based line number of the offending record
            reason: What was wrong with it
        """
        super().__init__(f"{path}:{line}: {reason}", error_code="PARSE_ERROR")
        self.path = path
        self.line = line
        self.reason = reason


class SchemaError(NRSfMException):
    """Raised when data is well-formed but inconsistent"""

    def __init__(self, message: str, frame_id: Optional[str] = None):
        super().__init__(message, error_code="SCHEMA_ERROR")
        self.frame_id = frame_id


class CheckpointError(NRSfMException):
    """Raised when checkpoint files cannot be read or written"""

    def __init__(self, message: str, operation: Optional[str] = None):
        """
        Initialize checkpoint error.

        Args:
            message: Error description
            operation: The checkpoint operation that failed ('load', 'save')
        """
        super().__init__(message, error_code="CHECKPOINT_ERROR")
        self.operation = operation


class CombinatorialLimitError(NRSfMException):
    """Raised when the brute-force oracle is asked for too large a search"""

    def __init__(self, blocks: int, sparsity: int, max_blocks: int, max_sparsity: int):
        message = (
            f"Brute-force search refused for {blocks} blocks at sparsity {sparsity}. "
            f"Limits are {max_blocks} blocks and sparsity {max_sparsity}."
        )
        super().__init__(message, error_code="COMBINATORIAL_LIMIT")
        self.blocks = blocks
        self.sparsity = sparsity


class NumericError(NRSfMException):
    """Raised when a computation produces non-finite values or fails to converge"""

    exit_code = 3

    def __init__(self, message: str, residual: Optional[float] = None):
        """
        Initialize numeric error.

        Args:
            message: Error description
            residual: Residual at the point of failure, if known
        """
        if residual is not None:
            message += f" (residual {residual:.3e})"
        super().__init__(message, error_code="NUMERIC_ERROR")
        self.residual = residual


class DegenerateCameraError(NumericError):
    """Raised when a camera estimate is too close to rank deficient to orthonormalize"""

    def __init__(self, sigma_min: float, threshold: float):
        message = (
            f"Degenerate camera: smallest singular value {sigma_min:.3e} "
            f"is at or below {threshold:.3e}"
        )
        super().__init__(message)
        self.error_code = "DEGENERATE_CAMERA"
        self.sigma_min = sigma_min
        self.threshold = threshold


class TrainingAbortedError(NumericError):
    """Raised when training hits a non-finite loss"""

    def __init__(self, step: int, checkpoint: Any = None):
        """
        Initialize training abort.

        Args:
            step: Optimizer step at which the loss became non-finite
            checkpoint: Last good checkpoint before the failure
        """
        super().__init__(f"Non-finite loss at step {step}; training aborted")
        self.error_code = "TRAINING_ABORTED"
        self.step = step
        self.checkpoint = checkpoint
