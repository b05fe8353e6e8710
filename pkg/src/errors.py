"""Exception hierarchy shared by every sub-package.

Input problems subclass ``ValueError`` so callers can keep catching the
builtin; the CLI maps each class to a stable exit code.
"""
from typing import List, Optional


class VolumilError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(VolumilError, ValueError):
    """A config file is missing, unreadable or fails validation."""

    exit_code = 2


class ArtifactIOError(VolumilError, OSError):
    """Reading or writing an on-disk artifact failed."""

    exit_code = 3


class ShapeError(VolumilError, ValueError):
    """Tensor shapes or extents do not satisfy an operation's preconditions."""

    exit_code = 4


class SpecMismatchError(VolumilError, ValueError):
    """Two model specs (or a checkpoint and a spec) disagree."""

    exit_code = 4

    def __init__(self, message: str, diff: Optional[List[str]] = None):
        self.diff = list(diff or [])
        if self.diff:
            message = message + "\n" + "\n".join(f"  {line}" for line in self.diff)
        super().__init__(message)


class MetricUndefinedError(VolumilError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""

    exit_code = 4


class TrainingDataError(VolumilError, ValueError):
    """Training data is empty or lacks one of the classes."""

    exit_code = 4


class AttentionUnavailableError(VolumilError, ValueError):
    """The model does not emit an attention trace."""

    exit_code = 4


class NonDeterministicError(VolumilError, ValueError):
    """A forward pass gave different outputs for identical inputs."""

    exit_code = 4


class NumericalAbortError(VolumilError, RuntimeError):
    """Training hit a NaN/Inf loss or gradient and was stopped."""

    exit_code = 5

    def __init__(self, message: str, last_good_checkpoint: Optional[str] = None):
        self.last_good_checkpoint = last_good_checkpoint
        if last_good_checkpoint:
            message = f"{message} (last good checkpoint: {last_good_checkpoint})"
        super().__init__(message)
