"""
Custom exceptions for artikin.
Provides specific exception types for better error handling and debugging.
"""


class ArtikinError(Exception):
    """Base exception for all artikin errors."""

    def __init__(self, message: str, error_code: str = None, details: dict = None):
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}


class ConfigurationError(ArtikinError):
    """Raised when there's a configuration issue."""
    pass


class ValidationError(ArtikinError):
    """Raised when an input array or parameter is rejected."""
    pass


class DegenerateSceneError(ArtikinError):
    """Raised when a scene has no usable foreground geometry."""
    pass


class InvalidAxisError(ValidationError):
    """Raised when a joint axis is too far from unit length to repair."""
    pass


class ClusteringError(ArtikinError):
    """Raised when part discovery receives inconsistent members."""
    pass


class UnsupportedConfigurationError(ArtikinError):
    """Raised when a model is asked for a setting it cannot run."""
    pass


class MissingTargetError(ArtikinError):
    """Raised when a movable part has no articulation target."""
    pass


class StorageError(ArtikinError):
    """Raised when reading or writing bundles, sets or checkpoints fails."""
    pass


class TrainingDivergedError(ArtikinError):
    """Raised when a training loss becomes non-finite."""
    pass


class EvaluationError(ArtikinError):
    """Raised when an evaluation protocol cannot be carried out."""
    pass
