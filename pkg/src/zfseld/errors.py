"""Exception types shared across the toolkit.

``ValidationError`` subclasses signal bad user input (CLI exit code 2);
everything else derived from ``ZfseldError`` is a runtime failure (exit 3).
"""


class ZfseldError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ZfseldError, ValueError):
    """Invalid user-supplied input, configuration, or file content."""


class ConfigError(ValidationError):
    """Configuration file or option rejected."""


class InvalidDirectionError(ValidationError):
    """A direction vector that should be unit length is not."""


class FormatError(ValidationError):
    """Malformed file content or wrong array layout."""


class SceneError(ZfseldError):
    """Scene generation could not satisfy its constraints."""


class CapacityError(SceneError):
    """More simultaneous events than available output tracks."""


class TrainingDivergenceError(ZfseldError):
    """Loss became non-finite during training."""


class CompatibilityError(ValidationError):
    """Checkpoint, support set, or config disagree on shared dimensions."""
