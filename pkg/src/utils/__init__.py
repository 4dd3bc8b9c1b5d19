"""Utility modules for artikin."""
from .logger import setup_logger, run_log, log_training_step, log_error_with_context
from .exceptions import (
    ArtikinError,
    ConfigurationError,
    ValidationError,
    DegenerateSceneError,
    InvalidAxisError,
    ClusteringError,
    UnsupportedConfigurationError,
    MissingTargetError,
    StorageError,
    TrainingDivergedError,
    EvaluationError,
)
from .error_handler import exit_on_error

__all__ = [
    'setup_logger',
    'run_log',
    'log_training_step',
    'log_error_with_context',
    'ArtikinError',
    'ConfigurationError',
    'ValidationError',
    'DegenerateSceneError',
    'InvalidAxisError',
    'ClusteringError',
    'UnsupportedConfigurationError',
    'MissingTargetError',
    'StorageError',
    'TrainingDivergedError',
    'EvaluationError',
    'exit_on_error',
]
