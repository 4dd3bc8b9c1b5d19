"""
CLI controller: registers the artikin subcommands on a click group.
"""
import math
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import click
import numpy as np
import torch

from config import AppConfig, load_config
from src.core import container, orbit_camera
from src.services import (
    ArticulationService,
    EvaluationService,
    GaussianRasterizer,
    InferenceService,
    StorageService,
    SynthService,
    TrainingService,
)
from src.services.storage_service import save_png
from src.utils import ConfigurationError, exit_on_error, setup_logger


logger = setup_logger(__name__)

CONFIG_COPY = 'config.env'


def parse_int_list(ctx, param, value: Optional[str]) -> Optional[List[int]]:
    """click callback for '0,1,2' style lists."""
    if value is None:
        return None
    try:
        items = [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got '{value}'")
    if not items or any(i < 0 for i in items):
        raise click.BadParameter(f"expected non-negative integers, got '{value}'")
    return items


def parse_targets(ctx, param, value: Optional[str]) -> Optional[Dict[int, float]]:
    """click callback for '1=0.8,2=0.1' (part label = target value)."""
    if value is None:
        return None
    targets = {}
    for item in value.split(','):
        label, sep, target = item.partition('=')
        try:
            if not sep:
                raise ValueError(item)
            targets[int(label)] = float(target)
        except ValueError:
            raise click.BadParameter(f"expected PART=VALUE pairs, got '{item}'")
    return targets


def parse_sweep(ctx, param, value: Optional[str]) -> Optional[np.ndarray]:
    """click callback for 'start:stop:count'."""
    if value is None:
        return None
    parts = value.split(':')
    try:
        if len(parts) != 3:
            raise ValueError(value)
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise click.BadParameter(f"expected START:STOP:COUNT, got '{value}'")
    if count < 1:
        raise click.BadParameter("sweep needs at least one step")
    return np.linspace(start, stop, count)


def parse_color(ctx, param, value: Optional[str]) -> Optional[Tuple[float, float, float]]:
    if value is None:
        return None
    try:
        color = tuple(float(c) for c in value.split(','))
    except ValueError:
        raise click.BadParameter(f"expected R,G,B in [0, 1], got '{value}'")
    if len(color) != 3 or any(not 0.0 <= c <= 1.0 for c in color):
        raise click.BadParameter(f"expected R,G,B in [0, 1], got '{value}'")
    return color


def load_app_config(path: Optional[str], overrides: Mapping[str, Optional[object]] = None) -> AppConfig:
    """
    Load the effective config; flags left unset do not override.

    Raises:
        ConfigurationError: If the file is missing, holds unknown keys or invalid values
    """
    given = {k: str(v) for k, v in (overrides or {}).items() if v is not None}
    try:
        return load_config(path, given)
    except FileNotFoundError as e:
        raise ConfigurationError(str(e), details={'path': path}) from e
    except ValueError as e:
        raise ConfigurationError(f"invalid configuration: {e}", details={'path': path}) from e


class CLIController:
    """Controller wiring click subcommands to the pipeline services."""

    def __init__(self, group: click.Group, bootstrap: Callable[[AppConfig], None]):
        self.group = group
        self.bootstrap = bootstrap

        self._register_commands()

    def prepare(self, config_path: Optional[str], overrides: Mapping[str, Optional[object]] = None) -> AppConfig:
        """Load config, wire services and seed torch."""
        app_config = load_app_config(config_path, overrides)
        self.bootstrap(app_config)
        torch.manual_seed(app_config.seed)
        return app_config

    @staticmethod
    def record(app_config: AppConfig, run_dir: Path) -> None:
        """Copy the effective config into a run directory."""
        run_dir.mkdir(parents=True, exist_ok=True)
        app_config.dump(run_dir / CONFIG_COPY)

    def _register_commands(self):
        """Register click subcommands."""

        @self.group.command('synth')
        @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                      help='KEY=VALUE config file')
        @click.option('--objects', type=click.IntRange(min=0), required=True, help='Number of objects')
        @click.option('--views', type=click.IntRange(min=1), default=None, help='Cameras per object')
        @click.option('--states', type=click.IntRange(min=1), default=None, help='Articulation states per object')
        @click.option('--res', type=click.IntRange(min=8), default=None, help='Render resolution')
        @click.option('--seed', type=int, default=None, help='Dataset seed')
        @click.option('--out', type=click.Path(file_okay=False), required=True, help='Output directory')
        @exit_on_error
        def synth(config_path, objects, views, states, res, seed, out):
            """Generate procedural articulated scene bundles."""
            app_config = self.prepare(config_path, {
                'ARTIKIN_SYNTH_VIEWS': views,
                'ARTIKIN_SYNTH_STATES': states,
                'ARTIKIN_SYNTH_RES': res,
                'ARTIKIN_SEED': seed,
            })
            self.record(app_config, Path(out))
            manifest = container.resolve(SynthService).generate_dataset(objects, app_config.seed, out)
            click.echo(str(manifest))

        @self.group.command('train')
        @click.option('--config', 'config_path', type=click.Path(dir_okay=False), required=True,
                      help='KEY=VALUE training config')
        @click.option('--data', type=click.Path(file_okay=False), default=None,
                      help='Dataset directory (overrides ARTIKIN_DATASET)')
        @click.option('--stage', type=click.Choice(['1', '2']), default=None,
                      help='Run only this stage')
        @click.option('--resume', type=click.Path(dir_okay=False), default=None, help='Checkpoint to resume from')
        @click.option('--run-dir', type=click.Path(file_okay=False), default=None, help='Output run directory')
        @click.option('--seed', type=int, default=None)
        @exit_on_error
        def train(config_path, data, stage, resume, run_dir, seed):
            """Train the network (stage 1, stage 2 or both)."""
            app_config = self.prepare(config_path, {'ARTIKIN_SEED': seed, 'ARTIKIN_DATASET': data})
            data = app_config.training.dataset
            if not data:
                raise ConfigurationError("no dataset given; pass --data or set ARTIKIN_DATASET")
            run_path = Path(run_dir or Path(app_config.run_dir) / 'train')
            self.record(app_config, run_path)
            result = container.resolve(TrainingService).train(
                data, run_path, stage=int(stage) if stage else None, resume=resume, run_id=run_path.name)
            click.echo(str(result.checkpoint))

        @self.group.command('infer')
        @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None)
        @click.option('--checkpoint', type=click.Path(dir_okay=False), required=True)
        @click.option('--bundle', type=click.Path(file_okay=False), required=True, help='Scene bundle directory')
        @click.option('--states', default='0,1', callback=parse_int_list, help='Two state indices')
        @click.option('--views', default='0,1,2,3', callback=parse_int_list, help='View indices, shared by both states')
        @click.option('--out', type=click.Path(file_okay=False), required=True)
        @exit_on_error
        def infer(config_path, checkpoint, bundle, states, views, out):
            """Reconstruct an articulated Gaussian set from two states."""
            self.prepare(config_path)
            inference = container.resolve(InferenceService)
            scene = container.resolve(StorageService).load_bundle(bundle)
            model = inference.load_model(checkpoint)
            result = inference.infer_bundle(model, scene, states, views, out)
            click.echo(f"{len(result.gaussians)} Gaussians, {len(result.joints)} parts -> {out}")

        @self.group.command('articulate')
        @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None)
        @click.option('--gaussians', type=click.Path(file_okay=False), required=True,
                      help='Directory holding a saved Gaussian set')
        @click.option('--targets', default=None, callback=parse_targets,
                      help='Explicit targets, e.g. 1=0.8,2=0.1 (radians or normalized displacement)')
        @click.option('--sweep', default=None, callback=parse_sweep,
                      help='Sweep START:STOP:COUNT; s maps to reference + s * span')
        @click.option('--span', type=float, default=None, help='Sweep span for every part')
        @click.option('--res', type=click.IntRange(min=8), default=None)
        @click.option('--bg', default=None, callback=parse_color, help='Background R,G,B')
        @click.option('--sh-degree', type=click.IntRange(0, 4), default=None)
        @click.option('--azimuth', type=float, default=0.0, help='Orbit azimuth in degrees')
        @click.option('--elevation', type=float, default=0.0, help='Orbit elevation in degrees')
        @click.option('--out', type=click.Path(file_okay=False), required=True)
        @exit_on_error
        def articulate(config_path, gaussians, targets, sweep, span, res, bg, sh_degree, azimuth, elevation, out):
            """Render a Gaussian set at new articulation states."""
            if (targets is None) == (sweep is None):
                raise click.UsageError("pass exactly one of --targets or --sweep")
            app_config = self.prepare(config_path)
            gset, joints = container.resolve(StorageService).load_gaussian_set(gaussians)
            articulation = container.resolve(ArticulationService)
            rasterizer = container.resolve(GaussianRasterizer)

            if targets is not None:
                poses = [targets]
            else:
                span_r = app_config.inference.sweep_span_revolute if span is None else span
                span_p = app_config.inference.sweep_span_prismatic if span is None else span
                poses = [articulation.sweep_targets(joints, float(s), span_r, span_p) for s in sweep]

            center = gset.means.mean(axis=0) if len(gset) else np.array([0.0, 0.0, 1.0])
            cam = orbit_camera(center, math.radians(azimuth), math.radians(elevation), app_config.synth.fov)
            res = res or app_config.synth.resolution
            out_dir = Path(out)
            out_dir.mkdir(parents=True, exist_ok=True)
            for i, pose in enumerate(poses):
                posed = articulation.articulate_set(gset, gset.labels, joints, pose)
                image, _ = rasterizer.render_set(posed, cam, res, background=bg, sh_degree=sh_degree)
                save_png(out_dir / f"frame_{i:03d}.png", image)
            logger.info(f"Rendered {len(poses)} articulation frames to {out_dir}")
            click.echo(str(out_dir))

        @self.group.command('eval')
        @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None)
        @click.option('--checkpoint', type=click.Path(dir_okay=False), default=None)
        @click.option('--oracle', is_flag=True, help='Score ground-truth-derived Gaussians instead of a model')
        @click.option('--data', type=click.Path(file_okay=False), required=True, help='Test split directory')
        @click.option('--out', type=click.Path(dir_okay=False), required=True, help='Metrics CSV path')
        @click.option('--seed', type=int, default=None)
        @exit_on_error
        def evaluate(config_path, checkpoint, oracle, data, out, seed):
            """Score a checkpoint on held-out objects and write the metrics CSV."""
            if oracle == (checkpoint is not None):
                raise click.UsageError("pass exactly one of --checkpoint or --oracle")
            app_config = self.prepare(config_path, {'ARTIKIN_SEED': seed})
            table = container.resolve(EvaluationService).evaluate(data, out, checkpoint, app_config.seed)
            click.echo(table.to_string(index=False))
