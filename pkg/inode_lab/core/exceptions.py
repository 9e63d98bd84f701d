"""
Custom exceptions and the CLI error handler
"""
import functools
import logging
from typing import Any, Callable, Optional, Sequence

from pydantic import ValidationError as PydanticValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_MISSING_ARTIFACT = 2
EXIT_CONFIG = 3


class AppException(Exception):
    """Base application exception"""
    def __init__(self, message: str, exit_code: int = EXIT_RUNTIME):
        self.message = message
        self.exit_code = exit_code
        super().__init__(self.message)


class ConfigError(AppException):
    """Invalid configuration; message names the offending field path"""
    def __init__(self, message: str = "Invalid configuration", field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message, exit_code=EXIT_CONFIG)


class MissingArtifactError(AppException):
    """Dataset, checkpoint or manifest not found"""
    def __init__(self, message: str = "Artifact not found"):
        super().__init__(message, exit_code=EXIT_MISSING_ARTIFACT)


class FormatError(AppException):
    """Corrupt, truncated or version-mismatched container file"""
    def __init__(self, message: str = "Bad file format", expected: Any = None, found: Any = None):
        self.expected = expected
        self.found = found
        if expected is not None or found is not None:
            message = f"{message} (expected {expected!r}, found {found!r})"
        super().__init__(message)


class ShapeError(AppException):
    """Tensor shapes do not conform for an operation"""
    def __init__(self, op: str, *shapes: Sequence[int]):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"shape mismatch in '{op}': {joined}")


class ContractError(AppException):
    """An API precondition was violated"""


class IntegrationError(AppException):
    """ODE integration failed"""
    def __init__(self, message: str = "Integration failed", time: Optional[float] = None):
        self.time = time
        if time is not None:
            message = f"{message} at t={time:.6g}"
        super().__init__(message)


class StiffnessError(IntegrationError):
    """Adaptive step size underflowed"""


class DataGenerationError(AppException):
    """A benchmark sequence could not be generated"""
    def __init__(self, message: str, sequence_index: Optional[int] = None):
        self.sequence_index = sequence_index
        if sequence_index is not None:
            message = f"sequence {sequence_index}: {message}"
        super().__init__(message)


class TrainingError(AppException):
    """Non-finite loss or gradient during optimization"""
    def __init__(
        self,
        message: str,
        step: Optional[int] = None,
        sequence_index: Optional[int] = None,
    ):
        self.step = step
        self.sequence_index = sequence_index
        parts = []
        if step is not None:
            parts.append(f"step {step}")
        if sequence_index is not None:
            parts.append(f"sequence {sequence_index}")
        if parts:
            message = f"{message} ({', '.join(parts)})"
        super().__init__(message)


class DataMismatchError(AppException):
    """Checkpoint and dataset disagree on dimensions"""


def config_error_from_validation(exc: PydanticValidationError, root: str = "") -> ConfigError:
    """Convert a pydantic ValidationError into a ConfigError naming the first failing field."""
    errors = exc.errors()
    if not errors:
        return ConfigError(str(exc), field=root or None)
    first = errors[0]
    loc = ".".join(str(p) for p in first.get("loc", ()))
    if root:
        loc = f"{root}.{loc}" if loc else root
    return ConfigError(first.get("msg", "invalid value"), field=loc or None)


def handle_cli_errors(func: Callable[..., int]) -> Callable[..., int]:
    """Run a CLI command and map exceptions onto exit codes."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> int:
        try:
            return func(*args, **kwargs)
        except PydanticValidationError as exc:
            err = config_error_from_validation(exc)
            logger.warning("ConfigError -> %s: %s", err.exit_code, err.message)
            return err.exit_code
        except AppException as exc:
            logger.warning(
                "%s -> %s: %s",
                exc.__class__.__name__,
                exc.exit_code,
                exc.message,
            )
            return exc.exit_code
        except FileNotFoundError as exc:
            logger.warning("MissingArtifactError -> %s: %s", EXIT_MISSING_ARTIFACT, exc)
            return EXIT_MISSING_ARTIFACT
        except Exception:
            # Critical: log stacktrace so real failures can be debugged.
            logger.exception("Unhandled exception in %s", func.__name__)
            return EXIT_RUNTIME

    return wrapper
