"""
Gaussian splatting primitives.

Per-pixel attribute vectors from the network hold 83 values:
[0:3] log-scale, [3:7] raw quaternion, [7] opacity logit, [8:83] SH (25x3,
coefficient-major). Gaussian3D stores the opacity after the sigmoid and a
normalized quaternion; adding the 3-vector mean gives 86 parameters.
"""
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, List, Sequence

import numpy as np

from src.utils.exceptions import ValidationError
from .maps import JOINT_CHANNELS

SH_DEGREE = 4
SH_COEFFS = (SH_DEGREE + 1) ** 2
SH_VALUES = SH_COEFFS * 3

SCALE_SLICE = slice(0, 3)
ROT_SLICE = slice(3, 7)
OPACITY_INDEX = 7
SH_SLICE = slice(8, 8 + SH_VALUES)
GAUSSIAN_ATTR_DIM = 3 + 4 + 1 + SH_VALUES
GAUSSIAN_PARAM_COUNT = 3 + GAUSSIAN_ATTR_DIM

assert GAUSSIAN_ATTR_DIM == 83
assert GAUSSIAN_PARAM_COUNT == 86


@dataclass(frozen=True, eq=False)
class Gaussian3D:
    """One splatting primitive: mean, log-scale, unit quaternion, opacity, SH."""
    mu: np.ndarray
    s: np.ndarray
    r: np.ndarray
    alpha: float
    sh: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        s = np.array(self.s, dtype=np.float64)
        r = np.array(self.r, dtype=np.float64)
        sh = np.array(self.sh, dtype=np.float64).reshape(SH_COEFFS, 3)
        if mu.shape != (3,) or s.shape != (3,) or r.shape != (4,):
            raise ValidationError("Gaussian expects mu(3), s(3), r(4)")
        if abs(np.linalg.norm(r) - 1.0) > 1e-9:
            raise ValidationError("Gaussian rotation must be a unit quaternion",
                                  details={'norm': float(np.linalg.norm(r))})
        if not 0.0 <= float(self.alpha) <= 1.0:
            raise ValidationError("Gaussian opacity must lie in [0, 1]", details={'alpha': float(self.alpha)})
        object.__setattr__(self, 'mu', mu)
        object.__setattr__(self, 's', s)
        object.__setattr__(self, 'r', r)
        object.__setattr__(self, 'alpha', float(self.alpha))
        object.__setattr__(self, 'sh', sh)
        assert self.to_vector().shape == (GAUSSIAN_PARAM_COUNT,)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.s, self.r, [self.alpha], self.sh.reshape(-1)])

    @classmethod
    def from_vector(cls, vec) -> 'Gaussian3D':
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (GAUSSIAN_PARAM_COUNT,):
            raise ValidationError(f"expected {GAUSSIAN_PARAM_COUNT} parameters, got {vec.shape}")
        return cls(vec[0:3], vec[3:6], vec[6:10], float(vec[10]), vec[11:])


def _empty(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


@dataclass
class GaussianSet:
    """
    Struct-of-arrays Gaussian collection with per-Gaussian joint vectors and part labels.

    Behaves as a sequence of Gaussian3D.
    """
    means: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    log_scales: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    quats: np.ndarray = field(default_factory=lambda: _empty((0, 4)))
    opacities: np.ndarray = field(default_factory=lambda: _empty((0,)))
    sh: np.ndarray = field(default_factory=lambda: _empty((0, SH_COEFFS, 3)))
    joint_params: np.ndarray = None
    labels: np.ndarray = None
    source_state: np.ndarray = None

    def __post_init__(self):
        n = len(self.means)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, SH_COEFFS, 3)
        if self.joint_params is None:
            self.joint_params = np.zeros((n, JOINT_CHANNELS))
            self.joint_params[:, 0] = 1.0
        self.joint_params = np.asarray(self.joint_params, dtype=np.float64).reshape(n, JOINT_CHANNELS)
        if self.labels is None:
            self.labels = np.zeros(n, dtype=np.int32)
        self.labels = np.asarray(self.labels, dtype=np.int32).reshape(n)
        if self.source_state is None:
            self.source_state = np.zeros(n, dtype=np.int32)
        self.source_state = np.asarray(self.source_state, dtype=np.int32).reshape(n)

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, index: int) -> Gaussian3D:
        return Gaussian3D(self.means[index], self.log_scales[index], self.quats[index],
                          float(self.opacities[index]), self.sh[index])

    def __iter__(self) -> Iterator[Gaussian3D]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> 'GaussianSet':
        return GaussianSet(self.means[index], self.log_scales[index], self.quats[index],
                           self.opacities[index], self.sh[index], self.joint_params[index],
                           self.labels[index], self.source_state[index])

    def replace(self, **changes) -> 'GaussianSet':
        return replace(self, **changes)

    def to_matrix(self) -> np.ndarray:
        """(N, 86) parameter matrix in Gaussian3D.to_vector order."""
        return np.concatenate([
            self.means, self.log_scales, self.quats, self.opacities[:, None],
            self.sh.reshape(len(self), -1)], axis=1)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, joint_params=None, labels=None) -> 'GaussianSet':
        matrix = np.asarray(matrix, dtype=np.float64).reshape(-1, GAUSSIAN_PARAM_COUNT)
        return cls(matrix[:, 0:3], matrix[:, 3:6], matrix[:, 6:10], matrix[:, 10],
                   matrix[:, 11:].reshape(-1, SH_COEFFS, 3), joint_params, labels)

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian3D]) -> 'GaussianSet':
        rows = [g.to_vector() for g in gaussians]
        if not rows:
            return cls()
        return cls.from_matrix(np.stack(rows))

    @classmethod
    def concat(cls, sets: Sequence['GaussianSet']) -> 'GaussianSet':
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls()
        return cls(*(np.concatenate([getattr(s, name) for s in sets])
                     for name in ('means', 'log_scales', 'quats', 'opacities', 'sh',
                                  'joint_params', 'labels', 'source_state')))

    def to_list(self) -> List[Gaussian3D]:
        return list(self)
