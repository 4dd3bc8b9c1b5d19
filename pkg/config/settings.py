"""
Configuration management for artikin.
Centralizes environment variables, key-value config files and run settings.
"""
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv

load_dotenv()


def _to_bool(value: str) -> bool:
    return str(value).strip().lower() in ('1', 'true', 'yes', 'on')


def _to_int_tuple(value: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in str(value).replace(' ', '').split(',') if v)


def _reader(values: Mapping[str, str]) -> Callable[[str, Any, Callable[[str], Any]], Any]:
    """Build a typed lookup over a merged environment/file mapping."""
    def read(key: str, default: Any, cast: Callable[[str], Any] = str) -> Any:
        raw = values.get(key)
        if raw is None or raw == '':
            return default
        return cast(raw)
    return read


@dataclass
class SynthConfig:
    """Procedural dataset generation settings."""
    resolution: int = 64
    views: int = 16
    states: int = 8
    camera_radius: float = 2.6
    fov: float = 0.87
    revolute_span_deg: Tuple[float, float] = (60.0, 120.0)
    prismatic_span_frac: Tuple[float, float] = (0.2, 0.5)
    max_joints: int = 4

    @classmethod
    def from_values(cls, read) -> 'SynthConfig':
        return cls(
            resolution=read('ARTIKIN_SYNTH_RES', 64, int),
            views=read('ARTIKIN_SYNTH_VIEWS', 16, int),
            states=read('ARTIKIN_SYNTH_STATES', 8, int),
            camera_radius=read('ARTIKIN_SYNTH_CAMERA_RADIUS', 2.6, float),
            fov=read('ARTIKIN_SYNTH_FOV', 0.87, float),
            max_joints=read('ARTIKIN_SYNTH_MAX_JOINTS', 4, int),
        )


@dataclass
class ModelConfig:
    """Toy network hyperparameters."""
    dim: int = 128
    layers: int = 4
    heads: int = 4
    patch: int = 8
    image_size: int = 64
    mlp_ratio: int = 4
    fusion_dim: int = 32
    taps: Tuple[int, ...] = (1, 2, 3, 4)
    cam_head_dim: int = 64
    point_mlp_dim: int = 32
    use_csa: bool = True
    use_state_token: bool = True
    dual_branch: bool = True

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim ({self.dim}) must be divisible by heads ({self.heads})")
        if self.image_size % self.patch != 0:
            raise ValueError(f"image_size ({self.image_size}) must be divisible by patch ({self.patch})")
        if len(self.taps) != 4:
            raise ValueError("exactly four joint-head taps are required")
        if any(t < 0 or t > self.layers for t in self.taps):
            raise ValueError(f"taps {self.taps} out of range for {self.layers} layers")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @classmethod
    def from_values(cls, read) -> 'ModelConfig':
        return cls(
            dim=read('ARTIKIN_MODEL_DIM', 128, int),
            layers=read('ARTIKIN_MODEL_LAYERS', 4, int),
            heads=read('ARTIKIN_MODEL_HEADS', 4, int),
            patch=read('ARTIKIN_MODEL_PATCH', 8, int),
            image_size=read('ARTIKIN_MODEL_IMAGE_SIZE', 64, int),
            fusion_dim=read('ARTIKIN_MODEL_FUSION_DIM', 32, int),
            taps=read('ARTIKIN_MODEL_TAPS', (1, 2, 3, 4), _to_int_tuple),
            use_csa=read('ARTIKIN_MODEL_USE_CSA', True, _to_bool),
            use_state_token=read('ARTIKIN_MODEL_USE_STATE_TOKEN', True, _to_bool),
            dual_branch=read('ARTIKIN_MODEL_DUAL_BRANCH', True, _to_bool),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            data[f.name] = list(value) if isinstance(value, tuple) else value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items() if k in known}
        return cls(**kwargs)


@dataclass
class LossWeights:
    """Loss weights for the two training stages."""
    pose: float = 3.0
    depth: float = 3.0
    joint: float = 5.0
    consist: float = 0.5
    smooth: float = 0.1
    rgb: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"loss weight '{f.name}' must be finite and non-negative, got {value}")

    @classmethod
    def from_values(cls, read) -> 'LossWeights':
        return cls(
            pose=read('ARTIKIN_LAMBDA_POSE', 3.0, float),
            depth=read('ARTIKIN_LAMBDA_DEPTH', 3.0, float),
            joint=read('ARTIKIN_LAMBDA_JOINT', 5.0, float),
            consist=read('ARTIKIN_LAMBDA_CONSIST', 0.5, float),
            smooth=read('ARTIKIN_LAMBDA_SMOOTH', 0.1, float),
            rgb=read('ARTIKIN_LAMBDA_RGB', 1.0, float),
        )


@dataclass
class TrainingConfig:
    """Optimizer, schedule and stage budgets."""
    stage1_steps: int = 2000
    stage2_steps: int = 1000
    warmup_steps: int = 100
    base_lr: float = 1e-4
    final_lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    grad_clip: float = 0.5
    views_per_state: int = 4
    render_res: int = 32
    gaussian_stride: int = 2
    huber_delta: float = 1.0
    depth_alpha: float = 0.2
    depth_conf_floor: float = 1e-3
    single_stage: bool = False
    checkpoint_every: int = 500
    dataset: Optional[str] = None

    @classmethod
    def from_values(cls, read) -> 'TrainingConfig':
        return cls(
            stage1_steps=read('ARTIKIN_STAGE1_STEPS', 2000, int),
            stage2_steps=read('ARTIKIN_STAGE2_STEPS', 1000, int),
            warmup_steps=read('ARTIKIN_WARMUP_STEPS', 100, int),
            base_lr=read('ARTIKIN_BASE_LR', 1e-4, float),
            final_lr=read('ARTIKIN_FINAL_LR', 1e-5, float),
            beta1=read('ARTIKIN_BETA1', 0.9, float),
            beta2=read('ARTIKIN_BETA2', 0.95, float),
            weight_decay=read('ARTIKIN_WEIGHT_DECAY', 0.05, float),
            grad_clip=read('ARTIKIN_GRAD_CLIP', 0.5, float),
            views_per_state=read('ARTIKIN_VIEWS_PER_STATE', 4, int),
            render_res=read('ARTIKIN_RENDER_RES', 32, int),
            gaussian_stride=read('ARTIKIN_GAUSSIAN_STRIDE', 2, int),
            huber_delta=read('ARTIKIN_HUBER_DELTA', 1.0, float),
            depth_alpha=read('ARTIKIN_DEPTH_ALPHA', 0.2, float),
            depth_conf_floor=read('ARTIKIN_DEPTH_CONF_FLOOR', 1e-3, float),
            single_stage=read('ARTIKIN_SINGLE_STAGE', False, _to_bool),
            checkpoint_every=read('ARTIKIN_CHECKPOINT_EVERY', 500, int),
            dataset=read('ARTIKIN_DATASET', None, str),
        )


@dataclass
class ClusteringConfig:
    """Part discovery settings."""
    min_cluster_frac: float = 0.005
    min_cluster_floor: int = 20
    min_samples: int = 10
    max_points: int = 2000

    @classmethod
    def from_values(cls, read) -> 'ClusteringConfig':
        return cls(
            min_cluster_frac=read('ARTIKIN_CLUSTER_MIN_FRAC', 0.005, float),
            min_cluster_floor=read('ARTIKIN_CLUSTER_MIN_SIZE', 20, int),
            min_samples=read('ARTIKIN_CLUSTER_MIN_SAMPLES', 10, int),
            max_points=read('ARTIKIN_CLUSTER_MAX_POINTS', 2000, int),
        )

    def min_cluster_size(self, n_points: int) -> int:
        return max(self.min_cluster_floor, int(math.ceil(self.min_cluster_frac * n_points)))


@dataclass
class RenderConfig:
    """Rasterizer settings."""
    background: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    sh_degree: int = 4
    dilation: float = 0.3
    cutoff_sigma: float = 3.0
    max_alpha: float = 0.99
    near: float = 0.01
    chunk_size: int = 2048

    @classmethod
    def from_values(cls, read) -> 'RenderConfig':
        bg = read('ARTIKIN_RENDER_BG', (1.0, 1.0, 1.0),
                  lambda v: tuple(float(c) for c in v.split(',')))
        return cls(
            background=bg,
            sh_degree=read('ARTIKIN_RENDER_SH_DEGREE', 4, int),
            chunk_size=read('ARTIKIN_RENDER_CHUNK', 2048, int),
        )


@dataclass
class InferenceConfig:
    """Inference pipeline settings."""
    conf_threshold: float = 0.1
    voxel_size: float = 0.003
    views_per_state: int = 4
    sweep_span_revolute: float = math.pi / 2
    sweep_span_prismatic: float = 0.3

    @classmethod
    def from_values(cls, read) -> 'InferenceConfig':
        return cls(
            conf_threshold=read('ARTIKIN_CONF_THRESHOLD', 0.1, float),
            voxel_size=read('ARTIKIN_VOXEL_SIZE', 0.003, float),
            views_per_state=read('ARTIKIN_INFER_VIEWS_PER_STATE', 4, int),
            sweep_span_revolute=read('ARTIKIN_SWEEP_SPAN_REVOLUTE', math.pi / 2, float),
            sweep_span_prismatic=read('ARTIKIN_SWEEP_SPAN_PRISMATIC', 0.3, float),
        )


@dataclass
class AppConfig:
    """Main application configuration."""
    environment: str = 'development'
    log_level: str = 'INFO'
    seed: int = 0
    run_dir: str = 'runs'
    source_values: Dict[str, str] = field(default_factory=dict, repr=False)

    # Sub-configurations
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def dump(self, path: Union[str, Path]) -> None:
        """Write the file-level keys this config was built from, for provenance."""
        lines = [f"{key}={value}" for key, value in sorted(self.source_values.items())]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


KNOWN_PREFIX = 'ARTIKIN_'
_GENERAL_KEYS = {'ENVIRONMENT', 'LOG_LEVEL', 'ARTIKIN_SEED', 'ARTIKIN_RUN_DIR'}
_SECTIONS = (SynthConfig, ModelConfig, LossWeights, TrainingConfig, ClusteringConfig, RenderConfig, InferenceConfig)


def known_keys() -> set:
    """Every key a config file may set."""
    keys = set(_GENERAL_KEYS)

    def record(key, default, cast=str):
        keys.add(key)
        return default

    for section in _SECTIONS:
        section.from_values(record)
    return keys


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, str]] = None) -> AppConfig:
    """
    Build the application config from the environment, an optional key-value
    file and explicit overrides (later sources win).

    Args:
        path: Optional KEY=VALUE config file
        overrides: Optional mapping applied last

    Returns:
        Populated AppConfig

    Raises:
        FileNotFoundError: If path is given but missing
        ValueError: If the file holds keys this program does not know
    """
    file_values: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        file_values = {k: v for k, v in dotenv_values(path).items() if v is not None}
        allowed = known_keys()
        unknown = [k for k in file_values if k not in allowed]
        if unknown:
            raise ValueError(f"unknown config keys in {path}: {', '.join(sorted(unknown))}")

    values: Dict[str, str] = {k: v for k, v in os.environ.items()
                              if k.startswith(KNOWN_PREFIX) or k in _GENERAL_KEYS}
    values.update(file_values)
    values.update(dict(overrides or {}))
    read = _reader(values)

    return AppConfig(
        environment=read('ENVIRONMENT', 'development'),
        log_level=read('LOG_LEVEL', 'INFO'),
        seed=read('ARTIKIN_SEED', 0, int),
        run_dir=read('ARTIKIN_RUN_DIR', 'runs'),
        source_values={k: v for k, v in values.items() if k.startswith(KNOWN_PREFIX)},
        synth=SynthConfig.from_values(read),
        model=ModelConfig.from_values(read),
        weights=LossWeights.from_values(read),
        training=TrainingConfig.from_values(read),
        clustering=ClusteringConfig.from_values(read),
        render=RenderConfig.from_values(read),
        inference=InferenceConfig.from_values(read),
    )


# Global configuration instance
config = load_config()
