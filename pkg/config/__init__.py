"""Configuration package for artikin."""
from .settings import (
    config,
    load_config,
    AppConfig,
    SynthConfig,
    ModelConfig,
    LossWeights,
    TrainingConfig,
    ClusteringConfig,
    RenderConfig,
    InferenceConfig,
)

__all__ = [
    'config',
    'load_config',
    'AppConfig',
    'SynthConfig',
    'ModelConfig',
    'LossWeights',
    'TrainingConfig',
    'ClusteringConfig',
    'RenderConfig',
    'InferenceConfig',
]
