"""Service layer for artikin."""
from .storage_service import StorageService
from .synth_service import SynthService
from .articulation_service import ArticulationService
from .render_service import GaussianRasterizer
from .loss_functions import StageLoss
from .dataset_service import DatasetService
from .training_service import TrainingService
from .inference_service import InferenceService
from .evaluation_service import EvaluationService

__all__ = [
    'StorageService',
    'SynthService',
    'ArticulationService',
    'GaussianRasterizer',
    'StageLoss',
    'DatasetService',
    'TrainingService',
    'InferenceService',
    'EvaluationService',
]
