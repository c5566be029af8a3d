"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
config problems -> ConfigError, malformed tensors/files -> TensorFormatError,
bad runtime inputs -> ValidationError.
"""


class PseudoMaskError(Exception):
    """Base class for all package errors."""


class ConfigError(PseudoMaskError):
    """Invalid or inconsistent configuration."""


class TensorFormatError(PseudoMaskError):
    """Malformed tensor file (bad magic, length mismatch, non-finite payload)."""


class ValidationError(PseudoMaskError):
    """Operation received inputs that violate its preconditions."""


class UninitializedClassError(ValidationError):
    """A semantic map was requested for a class with no trusted prototypes yet."""
