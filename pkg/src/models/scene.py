"""
Procedural articulated scenes and the frames rendered from them.

Part geometry is stored at joint value 0. A part's pose at value v is a
rotation by v about (axis, pivot) for revolute joints or a translation v * axis
for prismatic ones.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.exceptions import ValidationError
from src.utils.rotations import skew
from .camera import CameraPose
from .joint import JointKind
from .maps import BACKGROUND_LABEL, PartLabelMap


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Box with world center, half extents and a local-to-world rotation."""
    center: np.ndarray
    half: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64)
        half = np.array(self.half, dtype=np.float64)
        rotation = np.array(self.rotation, dtype=np.float64)
        if center.shape != (3,) or half.shape != (3,) or rotation.shape != (3, 3):
            raise ValidationError("box expects center(3), half(3), rotation(3x3)")
        if np.any(half <= 0):
            raise ValidationError("box half extents must be positive", details={'half': half.tolist()})
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'half', half)
        object.__setattr__(self, 'rotation', rotation)

    def transformed(self, R: np.ndarray, t: np.ndarray) -> 'OrientedBox':
        """Box after x -> R x + t."""
        return OrientedBox(R @ self.center + t, self.half, R @ self.rotation)

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        local = self.to_local(points)
        return np.all(np.abs(local) <= self.half + tol, axis=-1)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        return (signs * self.half) @ self.rotation.T + self.center

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Slab-method ray intersection.

        Args:
            origins: (N, 3) ray origins
            dirs: (N, 3) ray directions (not necessarily unit)

        Returns:
            (t, normal): entry parameter per ray (inf on miss or when the box is
            behind the origin) and the world-space outward normal at the hit.
        """
        o = self.to_local(origins)
        d = np.asarray(dirs, dtype=np.float64) @ self.rotation
        with np.errstate(divide='ignore', invalid='ignore'):
            inv = 1.0 / d
            t0 = (-self.half - o) * inv
            t1 = (self.half - o) * inv
        # Rays parallel to a slab: inside keeps (-inf, inf), outside misses.
        parallel = d == 0.0
        inside = np.abs(o) <= self.half
        t0 = np.where(parallel, np.where(inside, -np.inf, np.inf), t0)
        t1 = np.where(parallel, np.where(inside, np.inf, -np.inf), t1)
        t_near = np.minimum(t0, t1)
        t_far = np.maximum(t0, t1)
        entry_axis = np.argmax(t_near, axis=-1)
        t_enter = np.max(t_near, axis=-1)
        t_exit = np.min(t_far, axis=-1)
        hit = (t_enter <= t_exit) & (t_enter > 0.0)
        t = np.where(hit, t_enter, np.inf)

        normal_local = np.zeros_like(o)
        rows = np.arange(len(o))
        normal_local[rows, entry_axis] = -np.sign(d[rows, entry_axis])
        return t, normal_local @ self.rotation.T

    def face_areas(self) -> np.ndarray:
        hx, hy, hz = self.half
        return np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy]) * 4.0

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Area-weighted uniform samples on the box surface."""
        if n <= 0:
            return np.zeros((0, 3))
        areas = self.face_areas()
        faces = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1.0, 1.0, size=(n, 3))
        axis = faces // 2
        sign = np.where(faces % 2 == 0, -1.0, 1.0)
        uv[np.arange(n), axis] = sign
        return (uv * self.half) @ self.rotation.T + self.center

    def to_dict(self) -> Dict[str, Any]:
        return {'center': self.center.tolist(), 'half': self.half.tolist(),
                'rotation': self.rotation.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'OrientedBox':
        return cls(np.array(data['center']), np.array(data['half']), np.array(data['rotation']))


@dataclass(frozen=True, eq=False)
class SceneJoint:
    """Ground-truth joint with its motion range in native units (radians or scene units)."""
    kind: JointKind
    axis: np.ndarray
    pivot: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        kind = JointKind.parse(self.kind)
        if kind == JointKind.STATIC:
            raise ValidationError("scene joints must be revolute or prismatic")
        axis = np.array(self.axis, dtype=np.float64)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValidationError("scene joint axis must be unit length")
        if not self.hi > self.lo:
            raise ValidationError("motion range must be non-degenerate", details={'lo': self.lo, 'hi': self.hi})
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'axis', axis)
        object.__setattr__(self, 'pivot', np.array(self.pivot, dtype=np.float64))
        object.__setattr__(self, 'lo', float(self.lo))
        object.__setattr__(self, 'hi', float(self.hi))

    def value(self, s: float) -> float:
        """Native joint value for a normalized state s in [0, 1]."""
        return self.lo + float(s) * (self.hi - self.lo)

    def pose(self, s: float) -> Tuple[np.ndarray, np.ndarray]:
        """(R, t) with x_posed = R x + t."""
        v = self.value(s)
        if self.kind == JointKind.REVOLUTE:
            R = _rotation(self.axis, v)
            return R, self.pivot - R @ self.pivot
        return np.eye(3), v * self.axis

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind.name.lower(), 'axis': self.axis.tolist(),
                'pivot': self.pivot.tolist(), 'lo': self.lo, 'hi': self.hi}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SceneJoint':
        return cls(JointKind.parse(data['kind']), np.array(data['axis']), np.array(data['pivot']),
                   float(data['lo']), float(data['hi']))


@dataclass(frozen=True, eq=False)
class ScenePart:
    """Rigid group of boxes sharing one albedo."""
    name: str
    boxes: Tuple[OrientedBox, ...]
    albedo: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'boxes', tuple(self.boxes))
        object.__setattr__(self, 'albedo', np.clip(np.array(self.albedo, dtype=np.float64), 0.0, 1.0))

    def posed(self, R: np.ndarray, t: np.ndarray) -> 'ScenePart':
        return ScenePart(self.name, tuple(b.transformed(R, t) for b in self.boxes), self.albedo)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not self.boxes or n <= 0:
            return np.zeros((0, 3))
        areas = np.array([b.face_areas().sum() for b in self.boxes])
        counts = rng.multinomial(n, areas / areas.sum())
        return np.concatenate([b.sample_surface(int(c), rng) for b, c in zip(self.boxes, counts)])

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'boxes': [b.to_dict() for b in self.boxes],
                'albedo': self.albedo.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenePart':
        return cls(data['name'], tuple(OrientedBox.from_dict(b) for b in data['boxes']),
                   np.array(data['albedo']))


@dataclass(frozen=True, eq=False)
class ArticulatedScene:
    """
    Procedural ground-truth object: a static base and movable parts, each
    attached to the base by exactly one joint. Part k (0-based) carries
    label k + 1 and moves with joints[k].
    """
    base: ScenePart
    parts: Tuple[ScenePart, ...] = ()
    joints: Tuple[SceneJoint, ...] = ()
    family: str = 'custom'
    name: str = 'object'

    def __post_init__(self):
        object.__setattr__(self, 'parts', tuple(self.parts))
        object.__setattr__(self, 'joints', tuple(self.joints))
        if len(self.parts) != len(self.joints):
            raise ValidationError("every movable part needs exactly one joint",
                                  details={'parts': len(self.parts), 'joints': len(self.joints)})

    @classmethod
    def empty(cls) -> 'ArticulatedScene':
        return cls(ScenePart('base', (), np.ones(3)))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def _state(self, state: Optional[Sequence[float]]) -> np.ndarray:
        if state is None:
            return np.zeros(self.n_joints)
        state = np.asarray(state, dtype=np.float64).reshape(-1)
        if len(state) != self.n_joints:
            raise ValidationError("state must hold one value per joint",
                                  details={'expected': self.n_joints, 'got': len(state)})
        return state

    def posed_parts(self, state: Optional[Sequence[float]] = None) -> List[Tuple[int, ScenePart]]:
        """(label, posed part) pairs, base first with label 0."""
        state = self._state(state)
        out = [(0, self.base)]
        for k, (part, joint) in enumerate(zip(self.parts, self.joints)):
            R, t = joint.pose(state[k])
            out.append((k + 1, part.posed(R, t)))
        return out

    def label_at(self, points: np.ndarray, state: Optional[Sequence[float]] = None) -> np.ndarray:
        """Part label of each point by point-in-posed-box test (-1 outside all parts)."""
        points = np.asarray(points, dtype=np.float64)
        labels = np.full(len(points), BACKGROUND_LABEL, dtype=np.int32)
        for label, part in self.posed_parts(state):
            for box in part.boxes:
                labels[(labels < 0) & box.contains(points)] = label
        return labels

    def radius(self) -> float:
        """Largest distance from the origin to a base or rest-pose part corner."""
        corners = [b.corners() for _, p in self.posed_parts() for b in p.boxes]
        if not corners:
            return 0.0
        return float(np.max(np.linalg.norm(np.concatenate(corners), axis=-1)))

    def sample_surface(self, n_per_part: int, rng: np.random.Generator,
                       state: Optional[Sequence[float]] = None) -> Dict[int, np.ndarray]:
        """Surface samples per label for the posed object."""
        return {label: part.sample_surface(n_per_part, rng) for label, part in self.posed_parts(state)}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'family': self.family,
            'base': self.base.to_dict(),
            'parts': [p.to_dict() for p in self.parts],
            'joints': [j.to_dict() for j in self.joints],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ArticulatedScene':
        return cls(ScenePart.from_dict(data['base']),
                   tuple(ScenePart.from_dict(p) for p in data.get('parts', [])),
                   tuple(SceneJoint.from_dict(j) for j in data.get('joints', [])),
                   data.get('family', 'custom'), data.get('name', 'object'))


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    """One ray-cast view of a scene at a given articulation state."""
    rgb: np.ndarray
    depth: np.ndarray
    labels: PartLabelMap
    cam: CameraPose
    state: np.ndarray

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.uint8)
        depth = np.asarray(self.depth, dtype=np.float32)
        labels = self.labels if isinstance(self.labels, PartLabelMap) else PartLabelMap(self.labels)
        if rgb.shape != depth.shape + (3,) or labels.labels.shape != depth.shape:
            raise ValidationError("rgb, depth and labels must share HxW")
        if np.any((depth > 0) != (labels.labels >= 0)):
            raise ValidationError("depth must be positive exactly on labelled pixels")
        object.__setattr__(self, 'rgb', rgb)
        object.__setattr__(self, 'depth', depth)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'state', np.asarray(self.state, dtype=np.float64).reshape(-1))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape
