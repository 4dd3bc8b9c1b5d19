"""
Procedural ground-truth factory: articulated box objects, protocol camera and
state sampling, a ray-cast reference renderer and ground-truth joint maps.
"""
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from config import SynthConfig
from src.core.geometry import canonical_frame, look_at, pixel_rays, spherical_eye, unproject
from src.models import (
    ArticulatedScene,
    CameraPose,
    CanonicalFrame,
    DepthMap,
    JointKind,
    JointMap,
    OrientedBox,
    PartJoint,
    PartLabelMap,
    RenderedFrame,
    SceneJoint,
    ScenePart,
)
from src.models.maps import (
    ANGLE_CHANNEL,
    AXIS_CHANNELS,
    BACKGROUND_LABEL,
    DISP_CHANNEL,
    PIVOT_CHANNELS,
    TYPE_CHANNELS,
)
from src.utils import StorageError, ValidationError, setup_logger
from .storage_service import StorageService

logger = setup_logger(__name__)

LIGHT_DIR = np.array([0.35, 0.5, 0.8]) / np.linalg.norm([0.35, 0.5, 0.8])
AMBIENT = 0.35
DIFFUSE = 0.65
AZIMUTH_RANGE = (-180.0, 180.0)

SeedLike = Union[int, np.random.Generator, None]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# Camera and state sampling

def sample_view_angles(n_e: int, n_a: int, elev_range: Tuple[float, float],
                       azim_range: Tuple[float, float] = AZIMUTH_RANGE, seed: SeedLike = None,
                       jitter: float = 1.0) -> np.ndarray:
    """
    Stratified (elevation, azimuth) pairs in degrees, one per bin, elevation-major.

    Raises:
        ValidationError: On empty bin counts or ranges
    """
    if n_e < 1 or n_a < 1:
        raise ValidationError("camera layout needs at least one bin per axis", details={'n_e': n_e, 'n_a': n_a})
    if not (elev_range[1] > elev_range[0] and azim_range[1] > azim_range[0]):
        raise ValidationError("camera ranges must be non-empty",
                              details={'elev_range': elev_range, 'azim_range': azim_range})
    rng = _rng(seed)
    de = (elev_range[1] - elev_range[0]) / n_e
    da = (azim_range[1] - azim_range[0]) / n_a
    angles = []
    for i in range(n_e):
        for j in range(n_a):
            ue, ua = rng.uniform(-0.5, 0.5, size=2) * jitter
            angles.append((elev_range[0] + (i + 0.5 + ue) * de, azim_range[0] + (j + 0.5 + ua) * da))
    return np.asarray(angles)


def sample_cameras(n_e: int, n_a: int, elev_range: Tuple[float, float],
                   azim_range: Tuple[float, float] = AZIMUTH_RANGE, radius: float = 2.6,
                   seed: SeedLike = None, fov: float = 0.87, jitter: float = 1.0) -> List[CameraPose]:
    """
    One camera per (elevation bin, azimuth bin), jittered inside its bin,
    looking at the origin with zero roll. Ranges are in degrees.
    """
    angles = sample_view_angles(n_e, n_a, elev_range, azim_range, seed, jitter)
    return [look_at(spherical_eye(math.radians(e), math.radians(a), radius), fov=fov) for e, a in angles]


def training_camera_layout(radius: float = 2.6, seed: SeedLike = None, fov: float = 0.87) -> List[CameraPose]:
    """48 views: 5x8 over [0°, 72°] plus a 2x4 top layer over [72°, 85°]."""
    rng = _rng(seed)
    return (sample_cameras(5, 8, (0.0, 72.0), radius=radius, seed=rng, fov=fov)
            + sample_cameras(2, 4, (72.0, 85.0), radius=radius, seed=rng, fov=fov))


def input_camera_layout(radius: float = 2.6, seed: SeedLike = None, fov: float = 0.87) -> List[CameraPose]:
    """Four input views per state over elevation [5°, 60°]."""
    return sample_cameras(1, 4, (5.0, 60.0), radius=radius, seed=seed, fov=fov)


def target_camera_layout(radius: float = 2.6, seed: SeedLike = None, fov: float = 0.87) -> List[CameraPose]:
    """Twelve held-out views per state: 3x4 over [0°, 90°]."""
    return sample_cameras(3, 4, (0.0, 90.0), radius=radius, seed=seed, fov=fov)


def generic_camera_layout(n_views: int, radius: float, seed: SeedLike, fov: float) -> List[CameraPose]:
    """n_e x n_a grid over [0°, 85°] with n_e the largest divisor of n_views not above its square root."""
    n_e = max(d for d in range(1, int(math.isqrt(n_views)) + 1) if n_views % d == 0)
    return sample_cameras(n_e, n_views // n_e, (0.0, 85.0), radius=radius, seed=seed, fov=fov)


def sample_states(n_states: int, n_joints: int, seed: SeedLike = None) -> np.ndarray:
    """
    Stratified normalized states: per joint one sample in each of n_states
    equal bins, bin order independently permuted per joint.

    Returns:
        (n_states, n_joints) values in [0, 1)
    """
    if n_states < 1:
        raise ValidationError("need at least one articulation state")
    rng = _rng(seed)
    out = np.zeros((n_states, n_joints))
    for j in range(n_joints):
        bins = rng.permutation(n_states)
        out[:, j] = (bins + rng.uniform(0.0, 1.0, size=n_states)) / n_states
    return np.minimum(out, np.nextafter(1.0, 0.0))


# Procedural object families

def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _albedo(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.2, 0.9, size=3)


def _box(center, half) -> OrientedBox:
    return OrientedBox(np.asarray(center, dtype=np.float64), np.asarray(half, dtype=np.float64))


def _revolute_span(rng, config: SynthConfig) -> float:
    return math.radians(rng.uniform(*config.revolute_span_deg))


def make_cabinet(rng: np.random.Generator, config: SynthConfig) -> ArticulatedScene:
    """Box body with one hinged front door."""
    w, d, h = rng.uniform(0.25, 0.35), rng.uniform(0.22, 0.32), rng.uniform(0.3, 0.45)
    body = ScenePart('body', (_box((0, 0, 0), (d, w, h)),), _albedo(rng))
    door = ScenePart('door', (_box((d + 0.015, 0, 0), (0.012, w - 0.01, h - 0.01)),), _albedo(rng))
    left = rng.uniform() < 0.5
    pivot = np.array([d + 0.015, -(w - 0.01) if left else (w - 0.01), 0.0])
    axis = np.array([0.0, 0.0, -1.0 if left else 1.0])
    joint = SceneJoint(JointKind.REVOLUTE, axis, pivot, 0.0, _revolute_span(rng, config))
    return ArticulatedScene(body, (door,), (joint,), family='cabinet')


def make_drawer(rng: np.random.Generator, config: SynthConfig) -> ArticulatedScene:
    """Hollow carcass with one drawer sliding along +x."""
    s = rng.uniform(0.26, 0.34)
    t = 0.02
    carcass = (
        _box((0, 0, s - t), (s, s, t)),
        _box((0, 0, -(s - t)), (s, s, t)),
        _box((0, s - t, 0), (s, t, s - 2 * t)),
        _box((0, -(s - t), 0), (s, t, s - 2 * t)),
        _box((-(s - t), 0, 0), (t, s - 2 * t, s - 2 * t)),
    )
    inner = s - 2 * t - 0.01
    drawer = ScenePart('drawer', (_box((t + 0.005, 0, 0), (s - t - 0.005, inner, inner)),), _albedo(rng))
    travel = rng.uniform(*config.prismatic_span_frac) * 2 * s
    joint = SceneJoint(JointKind.PRISMATIC, np.array([1.0, 0.0, 0.0]), np.array([t, 0.0, 0.0]), 0.0, travel)
    return ArticulatedScene(ScenePart('carcass', carcass, _albedo(rng)), (drawer,), (joint,), family='drawer')


def make_laptop(rng: np.random.Generator, config: SynthConfig) -> ArticulatedScene:
    """Flat base with a lid hinged about +x; rest pose is upright."""
    w, d = rng.uniform(0.28, 0.36), rng.uniform(0.2, 0.26)
    t = 0.015
    base = ScenePart('base', (_box((0, 0, -0.1), (w, d, t)),), _albedo(rng))
    lid_h = d - 0.01
    lid = ScenePart('lid', (_box((0, -d + t, -0.1 + t + lid_h), (w, t, lid_h)),), _albedo(rng))
    span = _revolute_span(rng, config)
    joint = SceneJoint(JointKind.REVOLUTE, np.array([1.0, 0.0, 0.0]), np.array([0.0, -d + t, -0.1 + t]),
                       -span / 2, span / 2)
    return ArticulatedScene(base, (lid,), (joint,), family='laptop')


def make_multi(rng: np.random.Generator, config: SynthConfig, n_joints: Optional[int] = None) -> ArticulatedScene:
    """Tall body with a column of doors and drawers on its front face."""
    k = n_joints or int(rng.integers(2, max(2, config.max_joints) + 1))
    w, d, h = rng.uniform(0.25, 0.32), rng.uniform(0.22, 0.28), rng.uniform(0.5, 0.6)
    body = ScenePart('body', (_box((0, 0, 0), (d, w, h)),), _albedo(rng))
    slot = 2 * h / k
    parts, joints = [], []
    for i in range(k):
        zc = -h + (i + 0.5) * slot
        half_z = slot / 2 - 0.012
        if rng.uniform() < 0.5:
            front = _box((d + 0.015, 0, zc), (0.012, w - 0.01, half_z))
            left = rng.uniform() < 0.5
            pivot = np.array([d + 0.015, -(w - 0.01) if left else (w - 0.01), zc])
            axis = np.array([0.0, 0.0, -1.0 if left else 1.0])
            joints.append(SceneJoint(JointKind.REVOLUTE, axis, pivot, 0.0, _revolute_span(rng, config)))
            parts.append(ScenePart(f'door_{i}', (front,), _albedo(rng)))
        else:
            front = _box((d + 0.03, 0, zc), (0.028, w - 0.03, half_z))
            travel = rng.uniform(*config.prismatic_span_frac) * 2 * d
            joints.append(SceneJoint(JointKind.PRISMATIC, np.array([1.0, 0.0, 0.0]),
                                     np.array([d + 0.03, 0.0, zc]), 0.0, travel))
            parts.append(ScenePart(f'drawer_{i}', (front,), _albedo(rng)))
    return ArticulatedScene(body, tuple(parts), tuple(joints), family='multi')


FAMILIES: Dict[str, Callable[[np.random.Generator, SynthConfig], ArticulatedScene]] = {
    'cabinet': make_cabinet,
    'drawer': make_drawer,
    'laptop': make_laptop,
    'multi': make_multi,
}


def yawed(scene: ArticulatedScene, yaw: float) -> ArticulatedScene:
    """Rotate a whole scene (geometry, axes and pivots) about world z."""
    R = _rot_z(yaw)
    zero = np.zeros(3)

    def turn(part: ScenePart) -> ScenePart:
        return part.posed(R, zero)

    joints = tuple(SceneJoint(j.kind, R @ j.axis, R @ j.pivot, j.lo, j.hi) for j in scene.joints)
    return ArticulatedScene(turn(scene.base), tuple(turn(p) for p in scene.parts), joints,
                            scene.family, scene.name)


def random_scene(rng: np.random.Generator, config: SynthConfig, family: Optional[str] = None,
                 name: str = 'object') -> ArticulatedScene:
    """Sample a procedural object with a random family (unless given) and yaw."""
    if family is None:
        names = list(FAMILIES)
        if config.max_joints < 2:
            names.remove('multi')
        family = names[int(rng.integers(len(names)))]
    if family not in FAMILIES:
        raise ValidationError(f"unknown object family '{family}'", details={'families': list(FAMILIES)})
    scene = FAMILIES[family](rng, config)
    scene = yawed(scene, rng.uniform(-math.pi, math.pi))
    return ArticulatedScene(scene.base, scene.parts, scene.joints, scene.family, name)


# Rendering and ground truth

def raycast_frame(scene: ArticulatedScene, state: Optional[Sequence[float]], cam: CameraPose,
                  res: Union[int, Tuple[int, int]]) -> RenderedFrame:
    """
    Ray-cast the posed scene: nearest box hit per pixel, Lambertian shading
    under one fixed light plus ambient, white background.

    Depth is the ray parameter along rays with unit camera-z, i.e. z-depth.
    """
    h, w = (res, res) if isinstance(res, int) else res
    state = np.zeros(scene.n_joints) if state is None else np.asarray(state, dtype=np.float64)
    dirs = (pixel_rays(cam, h, w).reshape(-1, 3)) @ cam.rotation
    origins = np.broadcast_to(cam.center, dirs.shape)

    best_t = np.full(len(dirs), np.inf)
    labels = np.full(len(dirs), BACKGROUND_LABEL, dtype=np.int32)
    normals = np.zeros_like(dirs)
    albedo = np.ones_like(dirs)
    for label, part in scene.posed_parts(state):
        for box in part.boxes:
            t, n = box.intersect(origins, dirs)
            closer = t < best_t
            best_t[closer] = t[closer]
            labels[closer] = label
            normals[closer] = n[closer]
            albedo[closer] = part.albedo

    hit = labels >= 0
    shade = AMBIENT + DIFFUSE * np.clip(normals @ LIGHT_DIR, 0.0, None)
    rgb = np.where(hit[:, None], albedo * shade[:, None], 1.0)
    rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    depth = np.where(hit, best_t, 0.0).astype(np.float32)
    # f32 rounding must not turn a hit into background
    depth[hit & (depth <= 0)] = np.float32(1e-6)
    return RenderedFrame(rgb.reshape(h, w, 3), depth.reshape(h, w), PartLabelMap(labels.reshape(h, w)),
                         cam, state)


def frame_from_camera(frame0_cam: CameraPose, r_bar: float) -> CanonicalFrame:
    return CanonicalFrame(frame0_cam.rotation, frame0_cam.t, r_bar)


def canonical_part_joints(scene: ArticulatedScene, state: Optional[Sequence[float]],
                          canonical: CanonicalFrame) -> List[PartJoint]:
    """Ground-truth PartJoints in the canonical frame, referenced at the given state."""
    state = np.zeros(scene.n_joints) if state is None else np.asarray(state, dtype=np.float64)
    out = []
    for joint, s in zip(scene.joints, state):
        value = joint.value(s)
        axis = canonical.apply_directions(joint.axis)
        pivot = canonical.apply_points(joint.pivot)
        if joint.kind == JointKind.REVOLUTE:
            out.append(PartJoint(joint.kind, axis, pivot, ref_angle=value))
        else:
            out.append(PartJoint(joint.kind, axis, pivot, ref_disp=float(canonical.scale_length(value))))
    return out


def build_gt_joint_map(frame: RenderedFrame, scene: ArticulatedScene, frame0_cam: CameraPose,
                       r_bar: float) -> JointMap:
    """
    Per-pixel ground-truth joint map in the canonical frame of frame0_cam.

    Movable pixels carry the one-hot kind, canonical unit axis, canonical
    pivot / r_bar and the joint value (radians, or displacement / r_bar);
    static and background pixels carry the static one-hot and zeros.

    Raises:
        ValidationError: If a pixel label has no part in the scene
    """
    labels = frame.labels.labels
    if labels.max(initial=BACKGROUND_LABEL) > scene.n_joints:
        raise ValidationError("frame contains a label with no scene part",
                              details={'max_label': int(labels.max()), 'parts': scene.n_joints})
    h, w = labels.shape
    jm = JointMap.background(h, w).data
    canonical = frame_from_camera(frame0_cam, r_bar)
    for k, joint in enumerate(canonical_part_joints(scene, frame.state, canonical), start=1):
        mask = labels == k
        if not mask.any():
            continue
        vec = np.zeros(11)
        vec[TYPE_CHANNELS][int(joint.kind)] = 1.0
        vec[AXIS_CHANNELS] = joint.axis
        vec[PIVOT_CHANNELS] = joint.pivot
        vec[ANGLE_CHANNEL] = joint.ref_angle
        vec[DISP_CHANNEL] = joint.ref_disp
        jm[mask] = vec
    return JointMap(jm)


class SynthService:
    """Generates procedural scene bundles on disk."""

    def __init__(self, storage: StorageService, synth: SynthConfig = None):
        self.storage = storage
        self.config = synth or SynthConfig()

    def cameras_for(self, rng: np.random.Generator) -> List[CameraPose]:
        cfg = self.config
        if cfg.views == 48:
            return training_camera_layout(cfg.camera_radius, rng, cfg.fov)
        return generic_camera_layout(cfg.views, cfg.camera_radius, rng, cfg.fov)

    def render_object(self, scene: ArticulatedScene, cams: List[CameraPose],
                      states: np.ndarray) -> Tuple[CanonicalFrame, List[List[RenderedFrame]]]:
        """Render every (state, view) and derive the canonical frame of camera 0."""
        res = self.config.resolution
        frames = [[raycast_frame(scene, s, cam, res) for cam in cams] for s in states]
        point_maps = [unproject(DepthMap.from_depth(f.depth), f.cam) for row in frames for f in row]
        return canonical_frame(cams[0], point_maps), frames

    def generate_object(self, index: int, seed: int, out_dir: Path) -> Dict[str, object]:
        rng = np.random.default_rng([seed, index])
        object_id = f"obj_{index:04d}"
        scene = random_scene(rng, self.config, name=object_id)
        cams = self.cameras_for(rng)
        states = sample_states(self.config.states, scene.n_joints, rng)
        canonical, frames = self.render_object(scene, cams, states)

        root = out_dir / object_id
        self.storage.write_bundle_metadata(root, scene, cams, states, canonical,
                                           (self.config.resolution, self.config.resolution))
        for s, row in enumerate(frames):
            for v, frame in enumerate(row):
                gt = build_gt_joint_map(frame, scene, cams[0], canonical.r_bar)
                self.storage.write_frame(root, s, v, frame, gt)
        return {
            'id': object_id,
            'family': scene.family,
            'joints': scene.n_joints,
            'split': 'single' if scene.n_joints <= 1 else 'multi',
            'views': len(cams),
            'states': len(states),
            'resolution': self.config.resolution,
        }

    def generate_dataset(self, n_objects: int, seed: int, out_dir: Union[str, Path]) -> Path:
        """
        Write n_objects scene bundles plus manifest.json under out_dir.

        Returns:
            Path of the manifest

        Raises:
            StorageError: On I/O failure, with the offending path
        """
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create dataset directory {out_dir}: {e}",
                               details={'path': str(out_dir)}) from e
        logger.info(f"Generating {n_objects} objects ({self.config.views} views x {self.config.states} states, "
                    f"{self.config.resolution}px) into {out_dir}")
        entries = [self.generate_object(i, seed, out_dir)
                   for i in tqdm(range(n_objects), desc='synth', disable=n_objects == 0)]
        return self.storage.write_manifest(out_dir, entries, seed)
