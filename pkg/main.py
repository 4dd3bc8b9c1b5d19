"""
Main entry point for artikin.
Configures dependency injection and builds the click command group.
"""
import click

from config import (
    AppConfig,
    ClusteringConfig,
    InferenceConfig,
    ModelConfig,
    RenderConfig,
    SynthConfig,
    TrainingConfig,
)
from src.core import container
from src.services import (
    ArticulationService,
    DatasetService,
    EvaluationService,
    GaussianRasterizer,
    InferenceService,
    StorageService,
    SynthService,
    TrainingService,
)
from src.controllers import CLIController
from src.utils import setup_logger


logger = setup_logger(__name__)


def create_cli() -> click.Group:
    """
    Create the artikin command group.

    Returns:
        click group with every subcommand registered
    """
    @click.group(name='artikin')
    @click.version_option('1.0.0', prog_name='artikin')
    def cli():
        """Feed-forward articulated Gaussian splatting toolkit."""

    CLIController(cli, setup_dependencies)
    return cli


def setup_dependencies(app_config: AppConfig):
    """Configure dependency injection container for one invocation."""
    container.reset()

    # Configuration sections are injected by type
    container.register_instance(AppConfig, app_config)
    container.register_instance(SynthConfig, app_config.synth)
    container.register_instance(ModelConfig, app_config.model)
    container.register_instance(TrainingConfig, app_config.training)
    container.register_instance(ClusteringConfig, app_config.clustering)
    container.register_instance(RenderConfig, app_config.render)
    container.register_instance(InferenceConfig, app_config.inference)

    # Register services as singletons (order matters for dependencies)
    container.register_singleton(StorageService)
    container.register_singleton(GaussianRasterizer)
    container.register_instance(ArticulationService,
                                ArticulationService(app_config.clustering, seed=app_config.seed))
    container.register_singleton(SynthService)
    container.register_singleton(DatasetService)
    container.register_singleton(TrainingService)
    container.register_singleton(InferenceService)
    container.register_singleton(EvaluationService)
    logger.debug(f"Services wired for {app_config.environment} (seed {app_config.seed})")


cli = create_cli()

if __name__ == "__main__":
    cli()
