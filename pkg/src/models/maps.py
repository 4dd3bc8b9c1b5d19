"""
Per-pixel grid models: depth, point, joint and part-label maps.

Background uses sentinels rather than separate masks: depth 0 / conf 0,
point (0, 0, 0), label -1.
"""
from dataclasses import dataclass

import numpy as np

from src.utils.exceptions import ValidationError
from .joint import JointKind

# Joint map channel layout
JOINT_CHANNELS = 11
TYPE_CHANNELS = slice(0, 3)
AXIS_CHANNELS = slice(3, 6)
PIVOT_CHANNELS = slice(6, 9)
ANGLE_CHANNEL = 9
DISP_CHANNEL = 10
INVARIANT_CHANNELS = slice(0, 9)
VARIANT_CHANNELS = slice(9, 11)

BACKGROUND_LABEL = -1
STATIC_LABEL = 0


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Depth and confidence grids."""
    depth: np.ndarray
    conf: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        conf = np.asarray(self.conf, dtype=np.float64)
        if depth.ndim != 2 or depth.shape != conf.shape:
            raise ValidationError("depth and conf must be matching HxW grids",
                                  details={'depth': depth.shape, 'conf': conf.shape})
        if not np.all(np.isfinite(depth)):
            raise ValidationError("depth must be finite everywhere")
        object.__setattr__(self, 'depth', depth)
        object.__setattr__(self, 'conf', conf)

    @classmethod
    def from_depth(cls, depth: np.ndarray) -> 'DepthMap':
        """Ground-truth style map: unit confidence on foreground, zero elsewhere."""
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, (depth > 0).astype(np.float64))

    @property
    def shape(self):
        return self.depth.shape

    @property
    def foreground(self) -> np.ndarray:
        return self.depth > 0


@dataclass(frozen=True, eq=False)
class PointMap:
    """HxWx3 canonical-frame points; background pixels hold the zero vector."""
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 3 or points.shape[-1] != 3:
            raise ValidationError("point map must be HxWx3", details={'shape': points.shape})
        object.__setattr__(self, 'points', points)

    @property
    def shape(self):
        return self.points.shape[:2]

    @property
    def foreground(self) -> np.ndarray:
        return np.any(self.points != 0.0, axis=-1)


@dataclass(frozen=True, eq=False)
class PartLabelMap:
    """Per-pixel part labels: -1 background, 0 static base, k >= 1 moving part k."""
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValidationError("label map must be HxW", details={'shape': labels.shape})
        labels = labels.astype(np.int32)
        if labels.size and labels.min() < BACKGROUND_LABEL:
            raise ValidationError("labels below -1 are not allowed")
        object.__setattr__(self, 'labels', labels)

    @property
    def foreground(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def part_ids(self) -> np.ndarray:
        """Moving part ids present in this map."""
        ids = np.unique(self.labels)
        return ids[ids > STATIC_LABEL]


@dataclass(frozen=True, eq=False)
class JointMap:
    """HxWx11 articulation field (type logits, axis, pivot, angle, displacement)."""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[-1] != JOINT_CHANNELS:
            raise ValidationError("joint map must be HxWx11", details={'shape': data.shape})
        object.__setattr__(self, 'data', data)

    @classmethod
    def background(cls, height: int, width: int) -> 'JointMap':
        data = np.zeros((height, width, JOINT_CHANNELS))
        data[..., JointKind.STATIC] = 1.0
        return cls(data)

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def type_logits(self) -> np.ndarray:
        return self.data[..., TYPE_CHANNELS]

    @property
    def kinds(self) -> np.ndarray:
        return np.argmax(self.type_logits, axis=-1)

    @property
    def axis(self) -> np.ndarray:
        return self.data[..., AXIS_CHANNELS]

    @property
    def pivot(self) -> np.ndarray:
        return self.data[..., PIVOT_CHANNELS]

    @property
    def angle(self) -> np.ndarray:
        return self.data[..., ANGLE_CHANNEL]

    @property
    def displacement(self) -> np.ndarray:
        return self.data[..., DISP_CHANNEL]

    @property
    def invariant(self) -> np.ndarray:
        return self.data[..., INVARIANT_CHANNELS]

    @property
    def variant(self) -> np.ndarray:
        return self.data[..., VARIANT_CHANNELS]

    def normalize_axes(self, foreground: np.ndarray = None) -> 'JointMap':
        """Return a copy whose axis channels are unit length on foreground pixels."""
        data = self.data.copy()
        axis = data[..., AXIS_CHANNELS]
        norm = np.linalg.norm(axis, axis=-1, keepdims=True)
        mask = norm[..., 0] > 1e-12
        if foreground is not None:
            mask &= np.asarray(foreground, dtype=bool)
        axis[mask] = axis[mask] / norm[mask]
        data[..., AXIS_CHANNELS] = axis
        return JointMap(data)

    def to_bytes(self) -> bytes:
        """Little-endian f32, row-major HxWx11."""
        return self.data.astype('<f4').tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, height: int, width: int) -> 'JointMap':
        data = np.frombuffer(raw, dtype='<f4').reshape(height, width, JOINT_CHANNELS)
        return cls(data.astype(np.float64))
