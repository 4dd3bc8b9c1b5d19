"""
Pinhole geometry primitives: projection, unprojection, Gaussian assembly and
canonical-frame normalization.

All functions are pure and operate on the immutable models in src.models.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.models import (
    CameraPose,
    CanonicalFrame,
    DepthMap,
    GaussianSet,
    JointMap,
    PointMap,
)
from src.models.gaussian import (
    GAUSSIAN_ATTR_DIM,
    OPACITY_INDEX,
    ROT_SLICE,
    SCALE_SLICE,
    SH_COEFFS,
    SH_SLICE,
)
from src.utils import DegenerateSceneError, ValidationError
from src.utils.rotations import orthonormalize, quat_normalize

WORLD_UP = np.array([0.0, 0.0, 1.0])


def pixel_rays(cam: CameraPose, height: int, width: int) -> np.ndarray:
    """Camera-frame ray directions with unit z through every pixel center, (H, W, 3)."""
    fx, fy, cx, cy = cam.intrinsics(height, width)
    jj, ii = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    return np.stack([(jj - cx) / fx, (ii - cy) / fy, np.ones_like(jj)], axis=-1)


def project(points: np.ndarray, cam: CameraPose, height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project world points to pixel coordinates.

    Args:
        points: (..., 3) points in the camera's world frame
        cam: Camera pose
        height: Image height
        width: Image width

    Returns:
        (uv, z): pixel coordinates (x along columns, y along rows) and z-depth
    """
    x_cam = np.asarray(points, dtype=np.float64) @ cam.rotation.T + cam.t
    fx, fy, cx, cy = cam.intrinsics(height, width)
    z = x_cam[..., 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        u = fx * x_cam[..., 0] / z + cx
        v = fy * x_cam[..., 1] / z + cy
    return np.stack([u, v], axis=-1), z


def unproject(depth: DepthMap, cam: CameraPose, frame: Optional[CanonicalFrame] = None) -> PointMap:
    """
    Back-project a depth map to canonical-frame points.

    Args:
        depth: Depth map (z-depth, 0 on background)
        cam: Camera that observed the depth, in the frame `frame` maps from
        frame: Canonical frame; identity when the camera is already canonical

    Returns:
        PointMap with the zero vector on background pixels

    Raises:
        ValidationError: If depth is not finite
    """
    values = np.asarray(depth.depth, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValidationError("depth must be finite")
    h, w = values.shape
    x_cam = pixel_rays(cam, h, w) * values[..., None]
    world = (x_cam - cam.t) @ cam.rotation
    if frame is not None:
        world = frame.apply_points(world)
    world[values <= 0] = 0.0
    return PointMap(world)


def assemble_gaussians(points: PointMap, attrs: np.ndarray, conf: np.ndarray, threshold: float,
                       joints: Optional[JointMap] = None, labels: Optional[np.ndarray] = None,
                       source_state: int = 0) -> GaussianSet:
    """
    Build one Gaussian per pixel whose confidence reaches the threshold.

    Raw attributes carry a pre-sigmoid opacity and an unnormalized quaternion;
    the returned Gaussians hold sigmoid opacity and unit quaternions.

    Args:
        points: Canonical point map providing the means
        attrs: (H, W, 83) raw Gaussian attributes
        conf: (H, W) confidence
        threshold: Minimum confidence for inclusion
        joints: Optional joint map carried along per Gaussian
        labels: Optional (H, W) part labels carried along per Gaussian
        source_state: State index recorded on every Gaussian

    Returns:
        GaussianSet (possibly empty)
    """
    attrs = np.asarray(attrs, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    h, w = points.shape
    if attrs.shape != (h, w, GAUSSIAN_ATTR_DIM) or conf.shape != (h, w):
        raise ValidationError("points, attrs and conf must share HxW",
                              details={'points': (h, w), 'attrs': attrs.shape, 'conf': conf.shape})
    keep = conf >= threshold
    raw = attrs[keep]
    quats = raw[:, ROT_SLICE]
    degenerate = np.linalg.norm(quats, axis=-1) < 1e-12
    quats[degenerate] = np.array([1.0, 0.0, 0.0, 0.0])
    n = int(keep.sum())
    return GaussianSet(
        means=points.points[keep],
        log_scales=raw[:, SCALE_SLICE],
        quats=quat_normalize(quats),
        opacities=expit(raw[:, OPACITY_INDEX]),
        sh=raw[:, SH_SLICE].reshape(n, SH_COEFFS, 3),
        joint_params=None if joints is None else joints.data[keep],
        labels=None if labels is None else np.asarray(labels)[keep],
        source_state=np.full(n, source_state, dtype=np.int32),
    )


@dataclass(frozen=True)
class CanonicalData:
    """Point maps and cameras re-expressed in a canonical frame."""
    points: List[PointMap]
    cams: List[CameraPose]


def canonical_frame(first_cam: CameraPose, point_maps: Sequence[PointMap]) -> CanonicalFrame:
    """
    Frame anchored at the first camera with r_bar the mean foreground distance
    from its center.

    Raises:
        DegenerateSceneError: If no point map has a foreground pixel
    """
    R0 = orthonormalize(first_cam.rotation)
    t0 = np.array(first_cam.t)
    fg = [pm.points[pm.foreground] for pm in point_maps]
    fg = np.concatenate(fg) if fg else np.zeros((0, 3))
    if len(fg) == 0:
        raise DegenerateSceneError("cannot canonicalize a scene without foreground points")
    r_bar = float(np.mean(np.linalg.norm(fg @ R0.T + t0, axis=-1)))
    if r_bar <= 0:
        raise DegenerateSceneError("foreground collapses onto the reference camera center")
    return CanonicalFrame(R0, t0, r_bar)


def canonicalize(point_maps: Sequence[PointMap], cams: Sequence[CameraPose]) -> Tuple[CanonicalFrame, CanonicalData]:
    """
    Express world-frame point maps and cameras in the frame of the first camera,
    divided by the mean foreground radius.

    Args:
        point_maps: World-frame point maps (background = zero vector)
        cams: World-to-camera poses, first camera is the reference

    Returns:
        (frame, data) with data.cams[0] the identity pose

    Raises:
        ValidationError: If no camera is given
        DegenerateSceneError: If there are no foreground points
    """
    if not cams:
        raise ValidationError("canonicalize needs at least one camera")
    frame = canonical_frame(cams[0], point_maps)
    new_points = []
    for pm in point_maps:
        mapped = frame.apply_points(pm.points)
        mapped[~pm.foreground] = 0.0
        new_points.append(PointMap(mapped))
    return frame, CanonicalData(new_points, [frame.apply_camera(c) for c in cams])


def look_at(eye: np.ndarray, target: np.ndarray = None, fov: float = 0.87,
            up: np.ndarray = WORLD_UP) -> CameraPose:
    """
    World-to-camera pose at `eye` looking at `target` with zero roll (OpenCV axes).

    Rows of R are (right, down, forward); when forward is parallel to `up`
    the x axis is used as the up hint instead.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.zeros(3) if target is None else np.asarray(target, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValidationError("camera eye coincides with its target")
    forward = forward / norm
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return CameraPose.from_rotation(R, -R @ eye, fov)


def spherical_eye(elevation: float, azimuth: float, radius: float) -> np.ndarray:
    """Camera center on a sphere; elevation from the xy-plane, azimuth from +x."""
    return radius * np.array([np.cos(elevation) * np.cos(azimuth),
                              np.cos(elevation) * np.sin(azimuth),
                              np.sin(elevation)])


def orbit_camera(center: np.ndarray, azimuth: float = 0.0, elevation: float = 0.0,
                 fov: float = 0.87) -> CameraPose:
    """
    Camera orbiting `center` in a canonical frame whose reference camera sits at
    the origin looking down +z. Azimuth turns about the image-up axis (−y) and
    elevation lifts towards it; (0, 0) looks from the reference camera's center.
    """
    center = np.asarray(center, dtype=np.float64)
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    ce, se = np.cos(elevation), np.sin(elevation)
    turn = np.array([[ca, 0.0, -sa], [0.0, 1.0, 0.0], [sa, 0.0, ca]])
    lift = np.array([[1.0, 0.0, 0.0], [0.0, ce, se], [0.0, -se, ce]])
    offset = turn @ lift @ -center
    return look_at(center + offset, center, fov, up=np.array([0.0, -1.0, 0.0]))
