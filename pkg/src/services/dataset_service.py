"""
Training batches from scene bundles.

Each batch is one object in two distinct states seen from V views per state,
re-expressed in the canonical frame of its own first image (state 0, view 0).
Ground-truth joint maps are rebuilt for that frame.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import torch

from config import TrainingConfig
from src.core.geometry import canonical_frame, unproject
from src.models import CanonicalFrame, DepthMap, RenderedFrame, TrainingBatch
from src.utils import ValidationError, setup_logger
from .storage_service import SceneBundle, StorageService
from .synth_service import build_gt_joint_map, canonical_part_joints

logger = setup_logger(__name__)


def reference_frame(frames: Sequence[Sequence[RenderedFrame]]) -> CanonicalFrame:
    """Canonical frame of the first image, scaled by the mean foreground distance of all frames."""
    flat = [f for row in frames for f in row]
    if not flat:
        raise ValidationError("a batch needs at least one frame")
    point_maps = [unproject(DepthMap.from_depth(f.depth), f.cam) for f in flat]
    return canonical_frame(flat[0].cam, point_maps)


def frames_to_batch(frames: Sequence[Sequence[RenderedFrame]], bundle_scene, object_id: str = '',
                    state_ids: Sequence[int] = ()) -> TrainingBatch:
    """
    Canonicalize S×V rendered frames on their first image and stack them.

    Args:
        frames: frames[s][v], all at one resolution
        bundle_scene: The ArticulatedScene the frames were rendered from
    """
    frame = reference_frame(frames)
    flat = [f for row in frames for f in row]
    ref_cam = flat[0].cam

    s, v = len(frames), len(frames[0])
    h, w = flat[0].shape
    images = np.stack([f.rgb.astype(np.float64).transpose(2, 0, 1) / 255.0 for f in flat])
    cams = np.stack([frame.apply_camera(f.cam).to_vector() for f in flat])
    depth = np.stack([f.depth.astype(np.float64) / frame.r_bar for f in flat])
    labels = np.stack([f.labels.labels for f in flat])
    joints = np.stack([build_gt_joint_map(f, bundle_scene, ref_cam, frame.r_bar).data for f in flat])

    kinds = np.array([int(j.kind) for j in bundle_scene.joints], dtype=np.int64)
    values = np.array([[pj.reference for pj in canonical_part_joints(bundle_scene, row[0].state, frame)]
                       for row in frames], dtype=np.float64).reshape(s, len(kinds))

    return TrainingBatch(
        images=torch.as_tensor(images.reshape(s, v, 3, h, w), dtype=torch.float32),
        cameras=torch.as_tensor(cams.reshape(s, v, 9), dtype=torch.float32),
        depth=torch.as_tensor(depth.reshape(s, v, h, w), dtype=torch.float32),
        labels=torch.as_tensor(labels.reshape(s, v, h, w), dtype=torch.int64),
        joints=torch.as_tensor(joints.reshape(s, v, h, w, -1), dtype=torch.float32),
        part_kinds=torch.as_tensor(kinds),
        part_values=torch.as_tensor(values, dtype=torch.float32),
        object_id=object_id,
        state_ids=tuple(int(i) for i in state_ids),
    )


@dataclass
class BatchSpec:
    """Which bundle, states and views make up one batch."""
    bundle: int
    states: List[int]
    views: List[List[int]]


class DatasetService:
    """Samples canonicalized two-state batches from a directory of scene bundles."""

    def __init__(self, storage: StorageService, training: TrainingConfig = None):
        self.storage = storage
        self.config = training or TrainingConfig()
        self._bundles: Dict[Path, List[SceneBundle]] = {}

    def bundles(self, root: Union[str, Path]) -> List[SceneBundle]:
        root = Path(root)
        if root not in self._bundles:
            self._bundles[root] = [self.storage.load_bundle(p) for p in self.storage.list_bundles(root)]
            logger.info(f"Loaded {len(self._bundles[root])} scene bundles from {root}")
        return self._bundles[root]

    def sample_spec(self, bundles: Sequence[SceneBundle], rng: np.random.Generator,
                    n_states: int = 2) -> BatchSpec:
        """
        One object, n_states distinct states drawn uniformly and
        views_per_state distinct views per state.

        Raises:
            ValidationError: If no bundle has enough states or views
        """
        v = self.config.views_per_state
        usable = [i for i, b in enumerate(bundles) if b.n_states >= n_states and b.n_views >= v]
        if not usable:
            raise ValidationError("no scene bundle has enough states and views for a batch",
                                  details={'states': n_states, 'views': v})
        index = int(usable[rng.integers(len(usable))])
        bundle = bundles[index]
        states = sorted(rng.choice(bundle.n_states, size=n_states, replace=False).tolist())
        views = [rng.choice(bundle.n_views, size=v, replace=False).tolist() for _ in states]
        return BatchSpec(index, states, views)

    def make_batch(self, bundle: SceneBundle, states: Sequence[int], views: Sequence[Sequence[int]]) -> TrainingBatch:
        frames = [[self.storage.load_frame(bundle, s, view).frame for view in row]
                  for s, row in zip(states, views)]
        return frames_to_batch(frames, bundle.scene, bundle.object_id, states)

    def sample_batch(self, bundles: Sequence[SceneBundle], rng: np.random.Generator) -> TrainingBatch:
        spec = self.sample_spec(bundles, rng)
        return self.make_batch(bundles[spec.bundle], spec.states, spec.views)
