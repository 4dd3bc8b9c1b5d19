"""
Tensors flowing into and out of the articulated splatting network.

Images are batched state-major: index b = s * V + v.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from src.utils.exceptions import ValidationError
from .camera import CameraPose
from .gaussian import GAUSSIAN_ATTR_DIM
from .maps import JOINT_CHANNELS, DepthMap, JointMap, PartLabelMap


@dataclass
class TokenSet:
    """Patch tokens (B, N_p, D), camera tokens (B, D) and state tokens (S, D) or None."""
    patch: torch.Tensor
    cam_tok: torch.Tensor
    state_tok: Optional[torch.Tensor]
    n_states: int
    n_views: int

    def __post_init__(self):
        b = self.n_states * self.n_views
        if self.patch.dim() != 3 or self.patch.shape[0] != b:
            raise ValidationError("patch tokens must be (S*V, N_p, D)", details={'shape': tuple(self.patch.shape)})
        if self.cam_tok.shape != (b, self.patch.shape[-1]):
            raise ValidationError("camera tokens must be (S*V, D)", details={'shape': tuple(self.cam_tok.shape)})
        if self.state_tok is not None and self.state_tok.shape != (self.n_states, self.patch.shape[-1]):
            raise ValidationError("state tokens must be (S, D)", details={'shape': tuple(self.state_tok.shape)})

    @property
    def dim(self) -> int:
        return self.patch.shape[-1]

    def is_finite(self) -> bool:
        tensors = [self.patch, self.cam_tok] + ([self.state_tok] if self.state_tok is not None else [])
        return all(bool(torch.isfinite(t).all()) for t in tensors)

    def state_patches(self, state: int) -> torch.Tensor:
        """(V * N_p, D) patch tokens of one state."""
        start = state * self.n_views
        return self.patch[start:start + self.n_views].reshape(-1, self.dim)


@dataclass
class ModelOutput:
    """
    Per-image predictions for a (S*V)-image batch.

    cameras: (B, 9) translation, normalized quaternion, FoV
    depth, depth_conf: (B, H, W)
    points: (B, H, W, 3) canonical points from predicted depth and camera
    gaussians: (B, H, W, 83) raw attributes (log-scale, raw quat, opacity logit, SH)
    gaussian_conf: (B, H, W)
    joints: (B, H, W, 11) with unit axis channels
    state_summary: (S, D) refined state summaries, or None without state tokens
    """
    cameras: torch.Tensor
    depth: torch.Tensor
    depth_conf: torch.Tensor
    points: torch.Tensor
    gaussians: torch.Tensor
    gaussian_conf: torch.Tensor
    joints: torch.Tensor
    n_states: int
    n_views: int
    state_summary: Optional[torch.Tensor] = None

    def __post_init__(self):
        b, h, w = self.depth.shape
        if b != self.n_states * self.n_views:
            raise ValidationError("batch size does not match S*V")
        if self.cameras.shape != (b, 9) or self.joints.shape != (b, h, w, JOINT_CHANNELS):
            raise ValidationError("camera or joint output has the wrong shape")
        if self.gaussians.shape != (b, h, w, GAUSSIAN_ATTR_DIM):
            raise ValidationError("gaussian output has the wrong shape")

    @property
    def resolution(self) -> Tuple[int, int]:
        return tuple(self.depth.shape[1:])

    def index(self, state: int, view: int) -> int:
        return state * self.n_views + view

    def camera_pose(self, b: int) -> CameraPose:
        return CameraPose.from_vector(self.cameras[b].detach().double().cpu().numpy())

    def depth_map(self, b: int) -> DepthMap:
        return DepthMap(self.depth[b].detach().double().cpu().numpy(),
                        self.depth_conf[b].detach().double().cpu().numpy())

    def joint_map(self, b: int) -> JointMap:
        return JointMap(self.joints[b].detach().double().cpu().numpy())


@dataclass
class TrainingBatch:
    """
    One training example: one object seen in S states from V views each,
    everything expressed in the canonical frame of image (state 0, view 0).

    images: (S, V, 3, H, W) in [0, 1]
    cameras: (S, V, 9) canonical camera vectors
    depth: (S, V, H, W) canonical depth (0 on background)
    labels: (S, V, H, W) part labels
    joints: (S, V, H, W, 11) ground-truth joint maps
    part_kinds: (K,) JointKind values of movable parts 1..K
    part_values: (S, K) canonical ground-truth joint values per state
    """
    images: torch.Tensor
    cameras: torch.Tensor
    depth: torch.Tensor
    labels: torch.Tensor
    joints: torch.Tensor
    part_kinds: torch.Tensor
    part_values: torch.Tensor
    object_id: str = ''
    state_ids: Tuple[int, ...] = ()

    @property
    def n_states(self) -> int:
        return self.images.shape[0]

    @property
    def n_views(self) -> int:
        return self.images.shape[1]

    @property
    def n_parts(self) -> int:
        return int(self.part_kinds.shape[0])

    def flat_images(self) -> torch.Tensor:
        s, v = self.images.shape[:2]
        return self.images.reshape(s * v, *self.images.shape[2:])

    def label_maps(self) -> List[PartLabelMap]:
        flat = self.labels.reshape(-1, *self.labels.shape[-2:]).cpu().numpy()
        return [PartLabelMap(l) for l in flat]

    def to(self, dtype: torch.dtype) -> 'TrainingBatch':
        return TrainingBatch(self.images.to(dtype), self.cameras.to(dtype), self.depth.to(dtype),
                             self.labels, self.joints.to(dtype), self.part_kinds,
                             self.part_values.to(dtype), self.object_id, self.state_ids)

    @staticmethod
    def stack_numpy(arrays, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(np.stack(arrays), dtype=dtype)
