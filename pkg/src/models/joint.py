"""
Joint models: joint kinds, part-level joints and Plücker lines.
"""
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Dict

import numpy as np

from src.utils.exceptions import ValidationError


class JointKind(IntEnum):
    """Joint type; the value is the type-logit channel index."""
    STATIC = 0
    REVOLUTE = 1
    PRISMATIC = 2

    @classmethod
    def parse(cls, value) -> 'JointKind':
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


@dataclass(frozen=True, eq=False)
class PluckerLine:
    """Line (a, a x p) with unit direction a."""
    dir: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        d = np.array(self.dir, dtype=np.float64)
        m = np.array(self.moment, dtype=np.float64)
        if abs(float(d @ m)) > 1e-6:
            raise ValidationError("Plücker direction and moment must be orthogonal",
                                  details={'dot': float(d @ m)})
        object.__setattr__(self, 'dir', d)
        object.__setattr__(self, 'moment', m)

    @classmethod
    def from_axis_pivot(cls, axis, pivot) -> 'PluckerLine':
        a = np.asarray(axis, dtype=np.float64)
        a = a / np.linalg.norm(a)
        return cls(a, np.cross(a, np.asarray(pivot, dtype=np.float64)))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.dir, self.moment])

    def closest_point(self) -> np.ndarray:
        """Point on the line nearest the origin: a x m for unit a."""
        return np.cross(self.dir, self.moment)


@dataclass(frozen=True, eq=False)
class PartJoint:
    """Part-level joint estimate: axis, pivot and reference angle/displacement."""
    kind: JointKind
    axis: np.ndarray
    pivot: np.ndarray
    ref_angle: float = 0.0
    ref_disp: float = 0.0

    def __post_init__(self):
        kind = JointKind.parse(self.kind)
        axis = np.array(self.axis, dtype=np.float64)
        pivot = np.array(self.pivot, dtype=np.float64)
        if axis.shape != (3,) or pivot.shape != (3,):
            raise ValidationError("joint axis and pivot must be 3-vectors")
        if not np.all(np.isfinite(pivot)):
            raise ValidationError("joint pivot must be finite")
        if kind == JointKind.STATIC:
            axis = np.zeros(3)
            pivot = np.zeros(3)
            ref_angle, ref_disp = 0.0, 0.0
        else:
            if abs(np.linalg.norm(axis) - 1.0) > 1e-6:
                raise ValidationError("joint axis must be unit length",
                                      details={'norm': float(np.linalg.norm(axis))})
            ref_angle, ref_disp = float(self.ref_angle), float(self.ref_disp)
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'axis', axis)
        object.__setattr__(self, 'pivot', pivot)
        object.__setattr__(self, 'ref_angle', ref_angle)
        object.__setattr__(self, 'ref_disp', ref_disp)

    @property
    def is_movable(self) -> bool:
        return self.kind != JointKind.STATIC

    @property
    def reference(self) -> float:
        """Reference value in the joint's own unit (radians or displacement)."""
        return self.ref_angle if self.kind == JointKind.REVOLUTE else self.ref_disp

    def plucker(self) -> PluckerLine:
        return PluckerLine.from_axis_pivot(self.axis, self.pivot)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.name.lower(),
            'axis': self.axis.tolist(),
            'pivot': self.pivot.tolist(),
            'ref_angle': self.ref_angle,
            'ref_disp': self.ref_disp,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PartJoint':
        return cls(JointKind.parse(data['kind']), np.array(data['axis']), np.array(data['pivot']),
                   float(data.get('ref_angle', 0.0)), float(data.get('ref_disp', 0.0)))
