"""Exception types shared across the package."""

from __future__ import annotations


class IcanimError(Exception):
    """Base class for all package errors."""


class ValidationError(IcanimError, ValueError):
    """Structural problem with pose data."""


class ParameterError(IcanimError, ValueError):
    """An argument is outside its admissible range."""


class TopologyError(IcanimError, ValueError):
    """Bone graph is not a forest or references missing joints."""


class DegenerateExtentError(IcanimError, ValueError):
    """Bounding box has (near) zero width or height."""


class ShapeError(IcanimError, ValueError):
    """Array extents do not satisfy an operation's shape contract."""


class WarmupError(IcanimError, ValueError):
    """Clip too short to hold the one-second warm-up segment."""


class NumericalError(IcanimError, FloatingPointError):
    """Non-finite values appeared during a computation."""


class StateError(IcanimError, RuntimeError):
    """Operation called on an object in the wrong state."""


class CheckpointError(IcanimError):
    """Checkpoint file is malformed or has the wrong stage tag."""


class ConfigError(IcanimError, ValueError):
    """Configuration is inconsistent or unparseable."""


class GuidanceError(IcanimError):
    """Text-guidance service failed after retries."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(f"{message} (after {retries} retries)")
        self.retries = retries


class ScoringError(IcanimError):
    """A quality scorer failed on an input."""


class ManifestError(IcanimError):
    """Manifest row or file is inconsistent."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UsageError(IcanimError):
    """Command invoked with missing prerequisites or wrong inputs."""
