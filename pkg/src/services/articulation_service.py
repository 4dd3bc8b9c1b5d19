"""
Rigid articulation of Gaussian sets and part discovery.

Joint vectors follow the joint-map channel layout: type logits, axis, pivot,
angle, displacement. Part label k >= 1 corresponds to joints[k - 1]; label 0 is
the static base.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from config import ClusteringConfig
from src.models import Gaussian3D, GaussianSet, JointKind, PartJoint
from src.models.maps import (
    ANGLE_CHANNEL,
    AXIS_CHANNELS,
    DISP_CHANNEL,
    PIVOT_CHANNELS,
    STATIC_LABEL,
    TYPE_CHANNELS,
)
from src.utils import (
    ClusteringError,
    InvalidAxisError,
    MissingTargetError,
    ValidationError,
    setup_logger,
)
from src.utils.rotations import quat_multiply, quat_normalize, skew
from .clustering import assign_to_nearest, cluster_centroids, hdbscan

logger = setup_logger(__name__)

AXIS_TOLERANCE = 1e-6
AXIS_REPAIR_TOLERANCE = 1e-3
SIGN_MARGIN = 0.1


def _checked_axis(axis) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) <= AXIS_TOLERANCE:
        return axis
    if abs(norm - 1.0) <= AXIS_REPAIR_TOLERANCE:
        logger.warning(f"Renormalizing joint axis with norm {norm:.6f}")
        return axis / norm
    raise InvalidAxisError("joint axis must be unit length", details={'norm': norm})


def rodrigues(axis, angle: float) -> np.ndarray:
    """
    Rotation matrix I + sin θ [a]x + (1 − cos θ) [a]x².

    Raises:
        InvalidAxisError: If the axis norm is off by more than 1e-3
    """
    a = _checked_axis(axis)
    K = skew(a)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    """Unit quaternion (cos θ/2, sin θ/2 · a)."""
    a = _checked_axis(axis)
    return np.concatenate([[math.cos(angle / 2.0)], math.sin(angle / 2.0) * a])


def _move(means: np.ndarray, quats: np.ndarray, joint: PartJoint, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    if joint.kind == JointKind.REVOLUTE:
        R = rodrigues(joint.axis, delta)
        moved = (means - joint.pivot) @ R.T + joint.pivot
        rotated = quat_normalize(quat_multiply(axis_angle_quat(joint.axis, delta), quats))
        return moved, rotated
    return means + delta * joint.axis, quats


def articulate_gaussian(g: Gaussian3D, joint: PartJoint, delta: float) -> Gaussian3D:
    """
    Apply a relative joint motion to one Gaussian.

    Revolute: mu' = R(a, Δ)(mu − p) + p, r' = q(a, Δ) ⊗ r.
    Prismatic: mu' = mu + Δ a. Scale, opacity and SH are unchanged.
    Static joints and Δ = 0 return the input unchanged.
    """
    if joint.kind == JointKind.STATIC or delta == 0.0:
        return g
    means, quats = _move(g.mu[None], g.r[None], joint, float(delta))
    return Gaussian3D(means[0], g.s, quats[0], g.alpha, g.sh)


def hemisphere_signs(axes: np.ndarray) -> np.ndarray:
    """
    ±1 per axis so that flipped axes share one hemisphere.

    The reference is the dominant direction of Σ a aᵀ; axes nearly
    perpendicular to it are decided by the next principal directions.
    """
    axes = np.asarray(axes, dtype=np.float64)
    signs = np.ones(len(axes))
    if len(axes) == 0:
        return signs
    _, vecs = np.linalg.eigh(axes.T @ axes)
    undecided = np.ones(len(axes), dtype=bool)
    for ref in (vecs[:, 2], vecs[:, 1], vecs[:, 0]):
        dots = axes @ ref
        pick = undecided & (np.abs(dots) >= SIGN_MARGIN)
        signs[pick] = np.where(dots[pick] < 0, -1.0, 1.0)
        undecided &= ~pick
    dots = axes[undecided] @ vecs[:, 2]
    signs[undecided] = np.where(dots < 0, -1.0, 1.0)
    return signs


def flip_joint_vectors(joint_params: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """Negate axis, angle and displacement where sign is −1 (the line is unchanged)."""
    out = np.array(joint_params, dtype=np.float64)
    out[:, AXIS_CHANNELS] *= signs[:, None]
    out[:, ANGLE_CHANNEL] *= signs
    out[:, DISP_CHANNEL] *= signs
    return out


def joint_kinds(joint_params: np.ndarray) -> np.ndarray:
    return np.argmax(np.asarray(joint_params)[:, TYPE_CHANNELS], axis=-1)


def aggregate_part(joint_params: np.ndarray, members) -> PartJoint:
    """
    Reduce per-Gaussian joint vectors of one part to a PartJoint.

    Axes are flipped to the hemisphere of the first member (negating angle
    and displacement with them), averaged and renormalized; pivot and
    reference values are plain means.

    Raises:
        ValidationError: If members is empty
        ClusteringError: If members disagree on the joint type
    """
    joint_params = np.asarray(joint_params, dtype=np.float64)
    members = np.asarray(members)
    if members.dtype == bool:
        members = np.flatnonzero(members)
    if len(members) == 0:
        raise ValidationError("cannot aggregate an empty part")
    vecs = joint_params[members]
    kinds = np.unique(joint_kinds(vecs))
    if len(kinds) != 1:
        raise ClusteringError("part members disagree on joint type", details={'kinds': kinds.tolist()})
    kind = JointKind(int(kinds[0]))
    if kind == JointKind.STATIC:
        return PartJoint(kind, np.zeros(3), np.zeros(3))

    axes = vecs[:, AXIS_CHANNELS]
    ref = axes[0]
    signs = np.where(axes @ ref < 0, -1.0, 1.0)
    aligned = flip_joint_vectors(vecs, signs)
    mean_axis = aligned[:, AXIS_CHANNELS].mean(axis=0)
    norm = np.linalg.norm(mean_axis)
    if norm < 1e-12:
        raise InvalidAxisError("part axes cancel out", details={'members': len(members)})
    return PartJoint(
        kind,
        mean_axis / norm,
        aligned[:, PIVOT_CHANNELS].mean(axis=0),
        float(aligned[:, ANGLE_CHANNEL].mean()),
        float(aligned[:, DISP_CHANNEL].mean()),
    )


@dataclass
class PartDiscovery:
    """Per-Gaussian part labels and the part joints (joints[k-1] for label k)."""
    labels: np.ndarray
    joints: List[PartJoint]

    @property
    def n_parts(self) -> int:
        return len(self.joints)


class ArticulationService:
    """Part discovery and state-conditioned articulation of Gaussian sets."""

    def __init__(self, clustering: ClusteringConfig = None, seed: int = 0):
        self.clustering = clustering or ClusteringConfig()
        self.seed = seed

    def _cluster_type(self, features: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Cluster features, assigning unsampled and noise points to the nearest centroid."""
        n = len(features)
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        sample = np.arange(n)
        if n > self.clustering.max_points:
            sample = np.sort(rng.choice(n, size=self.clustering.max_points, replace=False))
        mcs = self.clustering.min_cluster_size(len(sample))
        sub_labels = hdbscan(features[sample], mcs, self.clustering.min_samples)
        if sub_labels.max(initial=-1) < 0:
            return np.full(n, -1, dtype=np.int64)
        centroids = cluster_centroids(features[sample], sub_labels)
        labels = assign_to_nearest(features, centroids)
        labels[sample[sub_labels >= 0]] = sub_labels[sub_labels >= 0]
        return labels

    def discover_parts(self, gaussians) -> PartDiscovery:
        """
        Group movable Gaussians into parts.

        Revolute Gaussians cluster on Plücker coordinates (a, a × p) and
        prismatic ones on the axis alone, after sign alignment. Types that
        yield no cluster fall back to the static base.

        Args:
            gaussians: GaussianSet, or its (N, 11) per-Gaussian joint vectors

        Returns:
            PartDiscovery with labels 0 (static), 1..K_r revolute, then prismatic
        """
        if isinstance(gaussians, GaussianSet):
            gaussians = gaussians.joint_params
        joint_params = np.asarray(gaussians, dtype=np.float64)
        n = len(joint_params)
        labels = np.full(n, STATIC_LABEL, dtype=np.int32)
        joints: List[PartJoint] = []
        if n == 0:
            return PartDiscovery(labels, joints)
        rng = np.random.default_rng(self.seed)
        kinds = joint_kinds(joint_params)

        for kind in (JointKind.REVOLUTE, JointKind.PRISMATIC):
            idx = np.flatnonzero(kinds == kind)
            if len(idx) == 0:
                continue
            vecs = joint_params[idx].copy()
            axes = vecs[:, AXIS_CHANNELS]
            norms = np.linalg.norm(axes, axis=-1, keepdims=True)
            vecs[:, AXIS_CHANNELS] = axes / np.maximum(norms, 1e-12)
            vecs = flip_joint_vectors(vecs, hemisphere_signs(vecs[:, AXIS_CHANNELS]))
            axes = vecs[:, AXIS_CHANNELS]
            if kind == JointKind.REVOLUTE:
                features = np.concatenate([axes, np.cross(axes, vecs[:, PIVOT_CHANNELS])], axis=1)
            else:
                features = axes
            type_labels = self._cluster_type(features, rng)
            if type_labels.max(initial=-1) < 0:
                logger.info(f"No {kind.name.lower()} clusters among {len(idx)} Gaussians; treating them as static")
                continue
            for cluster in range(int(type_labels.max()) + 1):
                members = type_labels == cluster
                if not members.any():
                    continue
                joints.append(aggregate_part(vecs, members))
                labels[idx[members]] = len(joints)
        logger.info(f"Discovered {len(joints)} movable parts from {n} Gaussians")
        return PartDiscovery(labels, joints)

    @staticmethod
    def _check_labels(labels: np.ndarray, joints: Sequence[PartJoint]) -> None:
        if len(labels) and (labels.min() < 0 or labels.max() > len(joints)):
            raise ValidationError("every part label needs a joint",
                                  details={'max_label': int(labels.max()), 'joints': len(joints)})

    def articulate_by_delta(self, gaussians: GaussianSet, labels, joints: Sequence[PartJoint],
                            deltas: Mapping[int, float]) -> GaussianSet:
        """Apply relative motions (part label -> Δ) to every member of each part."""
        labels = np.asarray(labels, dtype=np.int64)
        self._check_labels(labels, joints)
        means = gaussians.means.copy()
        quats = gaussians.quats.copy()
        for k, joint in enumerate(joints, start=1):
            delta = float(deltas.get(k, 0.0))
            members = labels == k
            if not joint.is_movable or delta == 0.0 or not members.any():
                continue
            means[members], quats[members] = _move(means[members], quats[members], joint, delta)
        return gaussians.replace(means=means, quats=quats)

    def articulate_set(self, gaussians: GaussianSet, labels, joints: Sequence[PartJoint],
                       targets: Mapping[int, float]) -> GaussianSet:
        """
        Pose every movable part at its target value.

        Args:
            gaussians: Gaussian set in the reference configuration
            labels: Per-Gaussian part labels
            joints: Part joints, joints[k-1] for label k
            targets: Part label -> target angle (radians) or displacement

        Returns:
            New GaussianSet with Δ = target − reference applied per part

        Raises:
            MissingTargetError: If a movable part has no target
        """
        deltas: Dict[int, float] = {}
        for k, joint in enumerate(joints, start=1):
            if not joint.is_movable:
                continue
            if k not in targets:
                raise MissingTargetError(f"no articulation target for part {k}", details={'part': k})
            deltas[k] = float(targets[k]) - joint.reference
        return self.articulate_by_delta(gaussians, labels, joints, deltas)

    def sweep_targets(self, joints: Sequence[PartJoint], s: float,
                      span_revolute: float, span_prismatic: float) -> Dict[int, float]:
        """Targets θ̄ + s · span for every movable part."""
        targets = {}
        for k, joint in enumerate(joints, start=1):
            if joint.is_movable:
                span = span_revolute if joint.kind == JointKind.REVOLUTE else span_prismatic
                targets[k] = joint.reference + s * span
        return targets


def articulate_points(points: np.ndarray, joint: PartJoint, delta: float) -> np.ndarray:
    """Move bare points by a relative joint motion."""
    if not joint.is_movable or delta == 0.0:
        return np.asarray(points, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    dummy = np.tile([1.0, 0.0, 0.0, 0.0], (len(points), 1))
    return _move(points, dummy, joint, delta)[0]
