"""
Single-pass reconstruction: network forward, per-pixel Gaussian assembly,
per-state voxel merge, part discovery and cross-state alignment.
"""
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from config import InferenceConfig, ModelConfig
from src.core.geometry import assemble_gaussians
from src.models import GaussianSet, JointKind, ModelOutput, PartJoint, PointMap, RenderedFrame
from src.models.maps import ANGLE_CHANNEL, AXIS_CHANNELS, DISP_CHANNEL
from src.network import ArticulatedSplatNet
from src.utils import ValidationError, setup_logger
from .articulation_service import ArticulationService, PartDiscovery
from .render_service import voxel_merge
from .storage_service import SceneBundle, StorageService

logger = setup_logger(__name__)


def frames_to_images(frames: Sequence[Sequence[RenderedFrame]]) -> torch.Tensor:
    """frames[s][v] → (S, V, 3, H, W) float tensor in [0, 1]."""
    rows = [np.stack([f.rgb.astype(np.float32).transpose(2, 0, 1) / 255.0 for f in row]) for row in frames]
    return torch.as_tensor(np.stack(rows))


def part_reference(joint_params: np.ndarray, members: np.ndarray, joint: PartJoint) -> float:
    """Mean joint value of the members, each sign-aligned with the part axis."""
    vecs = joint_params[members]
    signs = np.where(vecs[:, AXIS_CHANNELS] @ joint.axis < 0, -1.0, 1.0)
    channel = ANGLE_CHANNEL if joint.kind == JointKind.REVOLUTE else DISP_CHANNEL
    return float(np.mean(vecs[:, channel] * signs))


@dataclass
class InferenceResult:
    """Merged Gaussians in the state-0 configuration plus the discovered parts."""
    gaussians: GaussianSet
    joints: List[PartJoint]
    per_state: List[GaussianSet]
    elapsed: float

    @property
    def labels(self) -> np.ndarray:
        return self.gaussians.labels


class InferenceService:
    """Runs a trained network on S = 2 states × V views and builds the articulated Gaussian set."""

    def __init__(self, storage: StorageService, articulation: ArticulationService,
                 inference: InferenceConfig = None):
        self.storage = storage
        self.articulation = articulation
        self.config = inference or InferenceConfig()

    def load_model(self, checkpoint: Union[str, Path]) -> ArticulatedSplatNet:
        state, header = self.storage.load_checkpoint(checkpoint)
        model = ArticulatedSplatNet(ModelConfig.from_dict(header['model_config']))
        model.load_state_dict(state)
        model.eval()
        return model

    def predict(self, model: ArticulatedSplatNet, images: torch.Tensor) -> ModelOutput:
        """
        Raises:
            ValidationError: If the view count per state differs from the configured one
        """
        if images.dim() != 5 or images.shape[1] != self.config.views_per_state:
            raise ValidationError(f"expected {self.config.views_per_state} input views per state",
                                  details={'shape': tuple(images.shape)})
        with torch.no_grad():
            return model(images.to(next(model.parameters()).dtype))

    def state_gaussians(self, output: ModelOutput) -> List[GaussianSet]:
        """Confident per-pixel Gaussians of every image, voxel-merged per state."""
        sets = []
        for s in range(output.n_states):
            per_image = []
            for v in range(output.n_views):
                b = output.index(s, v)
                per_image.append(assemble_gaussians(
                    PointMap(output.points[b].detach().double().cpu().numpy()),
                    output.gaussians[b].detach().double().cpu().numpy(),
                    output.gaussian_conf[b].detach().double().cpu().numpy(),
                    self.config.conf_threshold,
                    joints=output.joint_map(b),
                    source_state=s,
                ))
            sets.append(voxel_merge(GaussianSet.concat(per_image), self.config.voxel_size))
        return sets

    def align_states(self, sets: Sequence[GaussianSet], discovery: PartDiscovery) -> Tuple[GaussianSet, List[PartJoint]]:
        """
        Move every state's Gaussians into the state-0 configuration.

        Part joints take their state-0 reference values; a part missing from
        state 0 keeps the value of the first state that shows it.
        """
        labels = discovery.labels
        offsets = np.cumsum([0] + [len(s) for s in sets])
        refs: List[Dict[int, float]] = []
        for i, gset in enumerate(sets):
            own = labels[offsets[i]:offsets[i + 1]]
            refs.append({k: part_reference(gset.joint_params, own == k, joint)
                         for k, joint in enumerate(discovery.joints, start=1)
                         if joint.is_movable and np.any(own == k)})

        joints = []
        for k, joint in enumerate(discovery.joints, start=1):
            ref = next((r[k] for r in refs if k in r), joint.reference)
            if joint.kind == JointKind.REVOLUTE:
                joints.append(PartJoint(joint.kind, joint.axis, joint.pivot, ref_angle=ref))
            else:
                joints.append(PartJoint(joint.kind, joint.axis, joint.pivot, ref_disp=ref))

        aligned = []
        for i, gset in enumerate(sets):
            own = labels[offsets[i]:offsets[i + 1]]
            labelled = gset.replace(labels=own)
            deltas = {k: joints[k - 1].reference - r for k, r in refs[i].items()}
            aligned.append(self.articulation.articulate_by_delta(labelled, own, joints, deltas))
        return GaussianSet.concat(aligned), joints

    def reconstruct(self, output: ModelOutput) -> InferenceResult:
        started = time.time()
        per_state = self.state_gaussians(output)
        union = GaussianSet.concat(per_state)
        if len(union) == 0:
            raise ValidationError("no Gaussian passed the confidence threshold",
                                  details={'threshold': self.config.conf_threshold})
        discovery = self.articulation.discover_parts(union)
        aligned, joints = self.align_states(per_state, discovery)
        merged = voxel_merge(aligned, self.config.voxel_size, by_label=True)
        elapsed = time.time() - started
        return InferenceResult(merged, joints, per_state, elapsed)

    def infer(self, model: ArticulatedSplatNet, images: torch.Tensor) -> InferenceResult:
        started = time.time()
        result = self.reconstruct(self.predict(model, images))
        result.elapsed = time.time() - started
        logger.info(f"Inference: {len(result.gaussians)} Gaussians, {len(result.joints)} parts "
                    f"in {result.elapsed:.2f}s")
        return result

    def infer_bundle(self, model: ArticulatedSplatNet, bundle: SceneBundle, states: Sequence[int],
                     views: Sequence[int], out_dir: Optional[Union[str, Path]] = None) -> InferenceResult:
        """Run on stored frames of a bundle; views are shared by both states."""
        if len(states) != 2:
            raise ValidationError("inference needs exactly two states", details={'states': list(states)})
        if len(views) != self.config.views_per_state:
            raise ValidationError(f"expected {self.config.views_per_state} input views per state, got {len(views)}",
                                  details={'views': list(views)})
        frames = [[self.storage.load_frame(bundle, s, v).frame for v in views] for s in states]
        result = self.infer(model, frames_to_images(frames))
        if out_dir is not None:
            self.storage.save_gaussian_set(out_dir, result.gaussians, result.joints)
        return result
