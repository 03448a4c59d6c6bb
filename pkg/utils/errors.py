from typing import Optional


class BrainShiftError(Exception):
    """Base class for every error raised by the toolkit"""


class ValidationError(BrainShiftError, ValueError):
    """Input violates a pre-condition or type invariant"""


class GridMismatchError(ValidationError):
    def __init__(self, what: str, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: grid mismatch (expected {expected}, got {actual})")


class DegenerateConfigurationError(ValidationError):
    """Point configuration makes a geometric system singular"""

    def __init__(self, configuration: str, detail: str = ""):
        self.configuration = configuration
        message = f"degenerate configuration: {configuration}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class InsufficientDataError(ValidationError):
    """Empty mask, empty candidate list or too few samples for a statistic"""


class ConfigError(ValidationError):
    """Configuration schema violation"""


class FormatError(ValidationError):
    """File header or payload does not match the expected layout"""

    def __init__(self, message: str, path=None, byte_offset: Optional[int] = None,
                 expected=None, actual=None):
        self.path = str(path) if path is not None else None
        self.byte_offset = byte_offset
        self.expected = expected
        self.actual = actual
        parts = [message]
        if self.path:
            parts.append(f"file={self.path}")
        if byte_offset is not None:
            parts.append(f"byte_offset={byte_offset}")
        if expected is not None or actual is not None:
            parts.append(f"expected={expected} actual={actual}")
        super().__init__(" | ".join(parts))


class TrainingError(BrainShiftError, RuntimeError):
    """Training produced non-finite losses or parameters"""
