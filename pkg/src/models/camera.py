"""
Camera and canonical-frame models.

CameraPose is world-to-camera: x_cam = R(q) @ x_world + t, OpenCV axes
(x right, y down, z forward). Principal point at the image center, square pixels.
"""
import math
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from src.utils.exceptions import ValidationError
from src.utils.rotations import matrix_to_quat, quat_normalize, quat_to_matrix


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CameraPose:
    """9-parameter pinhole camera: translation, unit quaternion, two FoVs."""
    t: np.ndarray
    q: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        t, q, f = _frozen(self.t), _frozen(self.q), _frozen(self.f)
        if t.shape != (3,) or q.shape != (4,) or f.shape != (2,):
            raise ValidationError("camera expects t(3), q(4), f(2)",
                                  details={'shapes': [t.shape, q.shape, f.shape]})
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q)) and np.all(np.isfinite(f))):
            raise ValidationError("camera parameters must be finite")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValidationError("camera quaternion must be unit length",
                                  details={'norm': float(np.linalg.norm(q))})
        if np.any(f <= 0) or np.any(f >= math.pi):
            raise ValidationError("field of view must lie in (0, pi)", details={'f': f.tolist()})
        object.__setattr__(self, 't', t)
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 'f', f)

    @classmethod
    def identity(cls, fov: float = math.pi / 2) -> 'CameraPose':
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.array([fov, fov]))

    @classmethod
    def from_rotation(cls, R: np.ndarray, t: np.ndarray, f) -> 'CameraPose':
        return cls(np.asarray(t, dtype=np.float64), matrix_to_quat(R), np.broadcast_to(np.asarray(f, dtype=np.float64), (2,)))

    @classmethod
    def from_vector(cls, vec) -> 'CameraPose':
        """Build from a raw 9-vector (t, q, f); the quaternion is renormalized."""
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:3], quat_normalize(vec[3:7]), vec[7:9])

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.t

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.q, self.f])

    def intrinsics(self, height: int, width: int) -> Tuple[float, float, float, float]:
        """Return (fx, fy, cx, cy) for an image of the given size."""
        fx = (width / 2.0) / math.tan(self.f[0] / 2.0)
        fy = (height / 2.0) / math.tan(self.f[1] / 2.0)
        return fx, fy, width / 2.0, height / 2.0

    def to_dict(self) -> Dict[str, Any]:
        return {'t': self.t.tolist(), 'q': self.q.tolist(), 'f': self.f.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CameraPose':
        return cls(np.array(data['t']), quat_normalize(np.array(data['q'])), np.array(data['f']))


@dataclass(frozen=True, eq=False)
class CanonicalFrame:
    """Reference-camera frame [R0 | t0] plus radius normalization r_bar."""
    R0: np.ndarray
    t0: np.ndarray
    r_bar: float

    def __post_init__(self):
        R0, t0 = _frozen(self.R0), _frozen(self.t0)
        if R0.shape != (3, 3) or t0.shape != (3,):
            raise ValidationError("canonical frame expects R0(3x3), t0(3)")
        if np.max(np.abs(R0.T @ R0 - np.eye(3))) > 1e-9:
            raise ValidationError("R0 must be orthonormal")
        if not (self.r_bar > 0 and math.isfinite(self.r_bar)):
            raise ValidationError("r_bar must be positive", details={'r_bar': self.r_bar})
        object.__setattr__(self, 'R0', R0)
        object.__setattr__(self, 't0', t0)
        object.__setattr__(self, 'r_bar', float(self.r_bar))

    @classmethod
    def identity(cls) -> 'CanonicalFrame':
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        """World points -> canonical, radius-normalized points."""
        points = np.asarray(points, dtype=np.float64)
        return (points @ self.R0.T + self.t0) / self.r_bar

    def apply_directions(self, dirs: np.ndarray) -> np.ndarray:
        return np.asarray(dirs, dtype=np.float64) @ self.R0.T

    def scale_length(self, value):
        return np.asarray(value, dtype=np.float64) / self.r_bar

    def apply_camera(self, cam: CameraPose) -> CameraPose:
        """Express a world camera in this frame: R' = R R0^T, t' = (t - R R0^T t0) / r_bar."""
        R = cam.rotation @ self.R0.T
        t = (cam.t - R @ self.t0) / self.r_bar
        return CameraPose.from_rotation(R, t, cam.f)

    def to_dict(self) -> Dict[str, Any]:
        return {'R0': self.R0.tolist(), 't0': self.t0.tolist(), 'r_bar': self.r_bar}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CanonicalFrame':
        return cls(np.array(data['R0']), np.array(data['t0']), float(data['r_bar']))
