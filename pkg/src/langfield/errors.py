"""Exception types shared across the package."""


class LangfieldError(Exception):
    """Base class for all package errors."""


class FormatError(LangfieldError):
    """A file is missing, truncated, or not in the expected on-disk format."""


class ValidationError(LangfieldError):
    """Loaded data violates a documented invariant."""


class TrainingDiverged(LangfieldError):
    """A non-finite value appeared during optimization."""
