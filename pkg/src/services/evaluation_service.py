"""
Evaluation protocol: reconstruct each test object from the same 4 input views
per state, then score geometry, joints and appearance on 12 held-out target
views per state.
"""
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import InferenceConfig, SynthConfig
from src.core.geometry import unproject
from src.models import ArticulatedScene, CanonicalFrame, DepthMap, GaussianSet, PartJoint, RenderedFrame
from src.models.gaussian import SH_COEFFS
from src.network import ArticulatedSplatNet
from src.utils import EvaluationError, setup_logger
from .articulation_service import ArticulationService
from .dataset_service import frames_to_batch, reference_frame
from .inference_service import InferenceService, frames_to_images
from .metrics_service import cd_suite, joint_errors, match_joints, psnr, ssim, write_results
from .render_service import COLOR_OFFSET, SH_C0, GaussianRasterizer, voxel_merge
from .storage_service import StorageService
from .synth_service import canonical_part_joints, input_camera_layout, raycast_frame, target_camera_layout

logger = setup_logger(__name__)

SURFACE_SAMPLES = 2000
ORACLE_SCALE = 0.008
ORACLE_OPACITY = 0.99


class EvaluationService:
    """Scores a checkpoint (or ground-truth oracle Gaussians) on a split of scene bundles."""

    def __init__(self, storage: StorageService, inference: InferenceService, articulation: ArticulationService,
                 rasterizer: GaussianRasterizer, synth: SynthConfig = None, inference_config: InferenceConfig = None):
        self.storage = storage
        self.inference = inference
        self.articulation = articulation
        self.rasterizer = rasterizer
        self.synth = synth or SynthConfig()
        self.inference_config = inference_config or InferenceConfig()

    def render_views(self, scene: ArticulatedScene, states: Sequence[np.ndarray], cams) -> List[List[RenderedFrame]]:
        res = self.synth.resolution
        return [[raycast_frame(scene, state, cam, res) for cam in cams] for state in states]

    def oracle(self, frames: Sequence[Sequence[RenderedFrame]], scene: ArticulatedScene,
               frame: CanonicalFrame) -> Tuple[GaussianSet, List[PartJoint]]:
        """
        Gaussians built from ground-truth depth, colors, labels and joint maps,
        aligned to the first state with ground-truth joints.
        """
        batch = frames_to_batch(frames, scene)
        s_count, v_count = batch.n_states, batch.n_views
        ref_joints = canonical_part_joints(scene, frames[0][0].state, frame)
        sets = []
        for s in range(s_count):
            state_joints = canonical_part_joints(scene, frames[s][0].state, frame)
            per_view = []
            for v in range(v_count):
                f = frames[s][v]
                cam = frame.apply_camera(f.cam)
                depth = batch.depth[s, v].double().numpy()
                points = unproject(DepthMap.from_depth(depth), cam)
                fg = f.labels.labels >= 0
                n = int(fg.sum())
                sh = np.zeros((n, SH_COEFFS, 3))
                sh[:, 0] = (f.rgb[fg].astype(np.float64) / 255.0 - COLOR_OFFSET) / SH_C0
                per_view.append(GaussianSet(
                    means=points.points[fg],
                    log_scales=np.full((n, 3), math.log(ORACLE_SCALE)),
                    quats=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
                    opacities=np.full(n, ORACLE_OPACITY),
                    sh=sh,
                    joint_params=batch.joints[s, v].double().numpy()[fg],
                    labels=f.labels.labels[fg],
                    source_state=np.full(n, s),
                ))
            state_set = GaussianSet.concat(per_view)
            deltas = {k: ref.reference - cur.reference
                      for k, (ref, cur) in enumerate(zip(ref_joints, state_joints), start=1)}
            sets.append(self.articulation.articulate_by_delta(state_set, state_set.labels, ref_joints, deltas))
        merged = voxel_merge(GaussianSet.concat(sets), self.inference_config.voxel_size, by_label=True)
        return merged, ref_joints

    def posed_for_state(self, gaussians: GaussianSet, joints: Sequence[PartJoint], gt_ref: Sequence[PartJoint],
                        gt_state: Sequence[PartJoint], gt_to_pred: Dict[int, int]) -> GaussianSet:
        """Move matched predicted parts by the ground-truth motion between the reference and a state."""
        deltas = {}
        for g, p in gt_to_pred.items():
            sign = 1.0 if joints[p - 1].axis @ gt_ref[g - 1].axis >= 0 else -1.0
            deltas[p] = sign * (gt_state[g - 1].reference - gt_ref[g - 1].reference)
        return self.articulation.articulate_by_delta(gaussians, gaussians.labels, joints, deltas)

    def evaluate_object(self, scene: ArticulatedScene, states: Sequence[np.ndarray],
                        model: Optional[ArticulatedSplatNet], rng: np.random.Generator,
                        object_id: str = '') -> Dict[str, object]:
        cfg = self.synth
        inputs = input_camera_layout(cfg.camera_radius, rng, cfg.fov)
        frames = self.render_views(scene, states, inputs)
        frame = reference_frame(frames)

        if model is None:
            gaussians, joints = self.oracle(frames, scene, frame)
        else:
            result = self.inference.infer(model, frames_to_images(frames))
            gaussians, joints = result.gaussians, result.joints
        if len(gaussians) == 0:
            raise EvaluationError("reconstruction is empty", details={'object': object_id})

        gt_ref = canonical_part_joints(scene, states[0], frame)
        match = match_joints(joints, gt_ref)
        gt_to_pred = {g + 1: p + 1 for p, g in match.pairs}
        ang, pos = joint_errors(joints, gt_ref, match, scene.radius() / frame.r_bar)

        samples = scene.sample_surface(SURFACE_SAMPLES, rng, states[0])
        gt_points = {label: frame.apply_points(pts) for label, pts in samples.items() if len(pts)}
        cds = cd_suite(gaussians.means, gaussians.labels, gt_points, gt_to_pred)

        targets = target_camera_layout(cfg.camera_radius, rng, cfg.fov)
        psnrs, ssims = [], []
        for s, state in enumerate(states):
            gt_state = canonical_part_joints(scene, state, frame)
            posed = self.posed_for_state(gaussians, joints, gt_ref, gt_state, gt_to_pred) if s else gaussians
            for cam in targets:
                truth = raycast_frame(scene, state, cam, cfg.resolution).rgb.astype(np.float64) / 255.0
                image, _ = self.rasterizer.render_set(posed, frame.apply_camera(cam), cfg.resolution)
                image = np.clip(image, 0.0, 1.0)
                psnrs.append(psnr(image, truth))
                ssims.append(ssim(image, truth))

        return {
            'object': object_id,
            'split': 'single' if scene.n_joints <= 1 else 'multi',
            **cds,
            'Ang_m': ang,
            'Pos_m': pos,
            'PSNR': float(np.mean(psnrs)),
            'SSIM': float(np.mean(ssims)),
        }

    def evaluate(self, data_root: Union[str, Path], out_csv: Union[str, Path],
                 checkpoint: Optional[Union[str, Path]] = None, seed: int = 0) -> pd.DataFrame:
        """
        Evaluate every bundle under data_root; oracle Gaussians when no checkpoint is given.

        Raises:
            EvaluationError: If a bundle has fewer than two states
        """
        model = None if checkpoint is None else self.inference.load_model(checkpoint)
        rows = []
        for index, path in enumerate(self.storage.list_bundles(data_root)):
            bundle = self.storage.load_bundle(path)
            if bundle.n_states < 2:
                raise EvaluationError("evaluation needs two articulation states",
                                      details={'object': bundle.object_id, 'states': bundle.n_states})
            rng = np.random.default_rng([seed, index])
            row = self.evaluate_object(bundle.scene, bundle.states[:2], model, rng, bundle.object_id)
            logger.info(f"{bundle.object_id}: CD-w={row['CD-w']:.4f} PSNR={row['PSNR']:.2f}")
            rows.append(row)
        table = write_results(out_csv, rows)
        logger.info(f"Wrote {len(rows)} objects to {out_csv} (CD columns are unsquared, canonical units)")
        return table
