"""
Two-stage training loop: geometry and joint supervision first, then the
articulated rendering loss is added.
"""
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from config import AppConfig, ModelConfig
from src.network import ArticulatedSplatNet
from src.utils import TrainingDivergedError, ValidationError, log_training_step, run_log, setup_logger
from .dataset_service import DatasetService
from .loss_functions import StageLoss
from .render_service import GaussianRasterizer
from .storage_service import StorageService

logger = setup_logger(__name__)

LOG_EVERY = 10


def learning_rate(step: int, total: int, warmup: int, base_lr: float, final_lr: float) -> float:
    """Linear warmup to base_lr, then cosine decay to final_lr at `total` steps."""
    if warmup > 0 and step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(total - warmup, 1)
    progress = min(max(step - warmup, 0) / span, 1.0)
    return final_lr + 0.5 * (base_lr - final_lr) * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainingResult:
    checkpoint: Path
    loss_log: Path
    steps: Dict[int, int] = field(default_factory=dict)
    final_losses: Dict[str, float] = field(default_factory=dict)


class TrainingService:
    """Runs stage 1, stage 2 or both on a directory of scene bundles."""

    def __init__(self, storage: StorageService, dataset: DatasetService, app_config: AppConfig):
        self.storage = storage
        self.dataset = dataset
        self.config = app_config
        self.loss = StageLoss(app_config.weights, app_config.training, GaussianRasterizer(app_config.render))

    def build_model(self, resume: Optional[Union[str, Path]] = None) -> Tuple[ArticulatedSplatNet, Dict]:
        """Fresh model from the config, or the checkpointed model and its header."""
        if resume is None:
            return ArticulatedSplatNet(self.config.model), {}
        state, header = self.storage.load_checkpoint(resume)
        model = ArticulatedSplatNet(ModelConfig.from_dict(header['model_config']))
        model.load_state_dict(state)
        logger.info(f"Resumed from {resume} (stage {header.get('stage')}, step {header.get('step')})")
        return model, header

    def stage_plan(self, stage: Optional[int]) -> List[Tuple[int, int]]:
        """(stage, steps) pairs to run."""
        cfg = self.config.training
        if cfg.single_stage:
            return [(2, cfg.stage1_steps + cfg.stage2_steps)]
        if stage is None:
            return [(1, cfg.stage1_steps), (2, cfg.stage2_steps)]
        if stage not in (1, 2):
            raise ValidationError("stage must be 1 or 2", details={'stage': stage})
        return [(stage, cfg.stage1_steps if stage == 1 else cfg.stage2_steps)]

    def optimizer(self, model: torch.nn.Module) -> torch.optim.Optimizer:
        cfg = self.config.training
        return torch.optim.AdamW(model.parameters(), lr=cfg.base_lr, betas=(cfg.beta1, cfg.beta2),
                                 weight_decay=cfg.weight_decay)

    def train(self, data_root: Union[str, Path], run_dir: Union[str, Path], stage: Optional[int] = None,
              resume: Optional[Union[str, Path]] = None, run_id: Optional[str] = None) -> TrainingResult:
        """
        Train on the bundles under data_root, writing checkpoints and a loss CSV to run_dir.

        Raises:
            TrainingDivergedError: If a loss becomes non-finite
            ValidationError: If bundle resolution does not match the model
        """
        run_dir = Path(run_dir)
        (run_dir / 'checkpoints').mkdir(parents=True, exist_ok=True)
        with run_log(run_dir / 'train.log'):
            return self._run(data_root, run_dir, stage, resume, run_id)

    def _run(self, data_root: Union[str, Path], run_dir: Path, stage: Optional[int],
             resume: Optional[Union[str, Path]], run_id: Optional[str]) -> TrainingResult:
        torch.manual_seed(self.config.seed)
        rng = np.random.default_rng(self.config.seed)

        model, _ = self.build_model(resume)
        bundles = self.dataset.bundles(data_root)
        if not bundles:
            raise ValidationError("no scene bundles to train on", details={'path': str(data_root)})
        size = model.config.image_size
        if any(tuple(b.resolution) != (size, size) for b in bundles):
            raise ValidationError("bundle resolution does not match the model image size",
                                  details={'image_size': size})

        cfg = self.config.training
        rows: List[Dict[str, float]] = []
        log_path = run_dir / 'losses.csv'
        checkpoint = run_dir / 'model.artk'
        result = TrainingResult(checkpoint, log_path)
        model.train()

        for stage_id, n_steps in self.stage_plan(stage):
            opt = self.optimizer(model)
            logger.info(f"Stage {stage_id}: {n_steps} steps", extra={'run_id': run_id} if run_id else None)
            started = time.time()
            for step in tqdm(range(n_steps), desc=f'stage {stage_id}', disable=n_steps == 0):
                lr = learning_rate(step, n_steps, cfg.warmup_steps, cfg.base_lr, cfg.final_lr)
                for group in opt.param_groups:
                    group['lr'] = lr

                batch = self.dataset.sample_batch(bundles, rng)
                output = model(batch.images)
                total, comps = self.loss(output, batch, stage_id)
                values = {name: float(v.detach()) for name, v in comps.items()}
                if not torch.isfinite(total):
                    raise TrainingDivergedError(f"non-finite loss at stage {stage_id} step {step}",
                                                details={'stage': stage_id, 'step': step, 'components': values})
                opt.zero_grad()
                total.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                opt.step()

                row = {'stage': stage_id, 'step': step, 'lr': lr, 'total': float(total.detach()), **values}
                rows.append(row)
                if step % LOG_EVERY == 0 or step == n_steps - 1:
                    log_training_step(logger, step, stage_id, run_id, total=row['total'], **values)
                if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                    self._save(model, run_dir / 'checkpoints' / f"stage{stage_id}_step{step + 1}.artk",
                               stage_id, step + 1)
                    pd.DataFrame(rows).to_csv(log_path, index=False)

            result.steps[stage_id] = n_steps
            logger.info(f"Stage {stage_id} finished in {time.time() - started:.1f}s")
            self._save(model, checkpoint, stage_id, n_steps)

        pd.DataFrame(rows).to_csv(log_path, index=False)
        if rows:
            result.final_losses = {k: v for k, v in rows[-1].items() if k not in ('stage', 'step', 'lr')}
        return result

    def _save(self, model: ArticulatedSplatNet, path: Path, stage: int, step: int) -> Path:
        return self.storage.save_checkpoint(path, model.state_dict(), model.config.to_dict(), stage, step,
                                            extra={'seed': self.config.seed})
