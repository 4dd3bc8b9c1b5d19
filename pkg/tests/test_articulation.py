"""
Tests for rigid articulation, joint aggregation and part discovery.
"""
import itertools
import math

import numpy as np
import pytest
import torch
from scipy.linalg import expm

from src.core import torch_geometry as tg
from src.models import Gaussian3D, GaussianSet, JointKind, PartJoint
from src.models.gaussian import SH_COEFFS
from src.services.articulation_service import (
    ArticulationService,
    aggregate_part,
    articulate_gaussian,
    articulate_points,
    axis_angle_quat,
    hemisphere_signs,
    rodrigues,
)
from src.services.clustering import hdbscan, mutual_reachability, prim_mst
from src.utils import ClusteringError, InvalidAxisError, MissingTargetError, ValidationError
from src.utils.rotations import quat_to_matrix, skew


def joint_vector(kind, axis=(0, 0, 0), pivot=(0, 0, 0), angle=0.0, disp=0.0):
    vec = np.zeros(11)
    vec[int(kind)] = 1.0
    vec[3:6] = axis
    vec[6:9] = pivot
    vec[9] = angle
    vec[10] = disp
    return vec


def random_set(n, rng, labels=None):
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=-1, keepdims=True)
    return GaussianSet(rng.normal(size=(n, 3)), rng.normal(size=(n, 3)) - 3.0, quats,
                       rng.uniform(0.1, 0.9, n), rng.normal(size=(n, SH_COEFFS, 3)), labels=labels)


class TestRodrigues:
    def test_matches_quaternion_rotation(self):
        axis = np.array([1.0, 2.0, 2.0]) / 3.0
        for angle in (-2.0, 0.3, math.pi):
            np.testing.assert_allclose(rodrigues(axis, angle), quat_to_matrix(axis_angle_quat(axis, angle)),
                                       atol=1e-12)

    def test_matches_matrix_exponential(self):
        axis = np.ones(3) / math.sqrt(3.0)
        np.testing.assert_allclose(rodrigues(axis, 0.7), expm(0.7 * skew(axis)), atol=1e-9)

    def test_near_unit_axis_is_renormalized(self):
        axis = np.array([0.0, 0.0, 1.0005])
        np.testing.assert_allclose(rodrigues(axis, 0.5), rodrigues(np.array([0.0, 0.0, 1.0]), 0.5))

    def test_non_unit_axis_raises(self):
        with pytest.raises(InvalidAxisError):
            rodrigues(np.array([0.0, 0.0, 1.1]), 0.5)

    def test_invalid_axis_is_a_validation_error(self):
        assert issubclass(InvalidAxisError, ValidationError)


class TestArticulateGaussian:
    def _gaussian(self):
        return Gaussian3D(np.array([1.0, 0.0, 0.5]), np.full(3, -3.0), np.array([1.0, 0.0, 0.0, 0.0]),
                          0.7, np.zeros((SH_COEFFS, 3)))

    def test_quarter_turn_about_z(self):
        joint = PartJoint(JointKind.REVOLUTE, np.array([0.0, 0.0, 1.0]), np.zeros(3))
        moved = articulate_gaussian(self._gaussian(), joint, math.pi / 2)
        np.testing.assert_allclose(moved.mu, [0.0, 1.0, 0.5], atol=1e-12)
        np.testing.assert_allclose(moved.r, [math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)])
        assert moved.alpha == 0.7

    def test_prismatic_translation(self):
        joint = PartJoint(JointKind.PRISMATIC, np.array([0.0, 1.0, 0.0]), np.zeros(3))
        moved = articulate_gaussian(self._gaussian(), joint, 0.25)
        np.testing.assert_allclose(moved.mu, [1.0, 0.25, 0.5])
        np.testing.assert_allclose(moved.r, [1.0, 0.0, 0.0, 0.0])

    def test_static_and_zero_motion_are_identity(self):
        g = self._gaussian()
        assert articulate_gaussian(g, PartJoint(JointKind.STATIC, np.zeros(3), np.zeros(3)), 1.0) is g
        assert articulate_gaussian(g, PartJoint(JointKind.REVOLUTE, np.array([1.0, 0, 0]), np.zeros(3)), 0.0) is g

    def test_pivot_points_stay_fixed(self):
        joint = PartJoint(JointKind.REVOLUTE, np.array([0.0, 0.6, 0.8]), np.array([0.3, -0.2, 0.1]))
        line = joint.pivot + np.outer([-1.0, 0.5, 2.0], joint.axis)
        np.testing.assert_allclose(articulate_points(line, joint, 1.3), line, atol=1e-12)


class TestArticulationService:
    def setup_method(self):
        self.service = ArticulationService()
        self.joints = [
            PartJoint(JointKind.REVOLUTE, np.array([0.0, 0.0, 1.0]), np.array([0.5, 0.0, 0.0]), ref_angle=0.2),
            PartJoint(JointKind.PRISMATIC, np.array([1.0, 0.0, 0.0]), np.zeros(3), ref_disp=0.1),
        ]

    def test_static_gaussians_never_move(self):
        rng = np.random.default_rng(0)
        gs = random_set(30, rng, labels=rng.integers(0, 3, 30))
        posed = self.service.articulate_set(gs, gs.labels, self.joints, {1: 1.0, 2: 0.4})
        static = gs.labels == 0
        np.testing.assert_array_equal(posed.means[static], gs.means[static])
        np.testing.assert_array_equal(posed.quats[static], gs.quats[static])

    def test_rigid_distances_preserved_within_parts(self):
        rng = np.random.default_rng(1)
        gs = random_set(40, rng, labels=np.repeat([0, 1, 2, 1], 10))
        posed = self.service.articulate_set(gs, gs.labels, self.joints, {1: -0.9, 2: 0.35})
        for k in (0, 1, 2):
            m = gs.labels == k
            before = np.linalg.norm(gs.means[m][:, None] - gs.means[m][None], axis=-1)
            after = np.linalg.norm(posed.means[m][:, None] - posed.means[m][None], axis=-1)
            np.testing.assert_allclose(after, before, atol=1e-12)

    def test_posing_at_reference_is_identity(self):
        rng = np.random.default_rng(2)
        gs = random_set(20, rng, labels=np.repeat([1, 2], 10))
        posed = self.service.articulate_set(gs, gs.labels, self.joints, {1: 0.2, 2: 0.1})
        np.testing.assert_allclose(posed.means, gs.means)

    def test_round_trip_returns_to_start(self):
        rng = np.random.default_rng(3)
        gs = random_set(20, rng, labels=np.repeat([1, 2], 10))
        there = self.service.articulate_set(gs, gs.labels, self.joints, {1: 1.4, 2: 0.5})
        moved = [PartJoint(j.kind, j.axis, j.pivot, ref_angle=1.4, ref_disp=0.5) for j in self.joints]
        back = self.service.articulate_set(there, there.labels, moved, {1: 0.2, 2: 0.1})
        np.testing.assert_allclose(back.means, gs.means, atol=1e-12)
        dots = np.abs(np.sum(back.quats * gs.quats, axis=-1))
        np.testing.assert_allclose(dots, 1.0, atol=1e-12)

    def test_missing_target_raises(self):
        gs = random_set(4, np.random.default_rng(4), labels=[0, 1, 2, 2])
        with pytest.raises(MissingTargetError):
            self.service.articulate_set(gs, gs.labels, self.joints, {1: 0.5})

    def test_label_without_joint_raises(self):
        gs = random_set(2, np.random.default_rng(5), labels=[0, 3])
        with pytest.raises(ValidationError):
            self.service.articulate_by_delta(gs, gs.labels, self.joints, {})

    def test_sweep_targets_scale_by_kind(self):
        targets = self.service.sweep_targets(self.joints, 0.5, math.pi / 2, 0.3)
        assert targets[1] == pytest.approx(0.2 + math.pi / 4)
        assert targets[2] == pytest.approx(0.1 + 0.15)


class TestAggregation:
    def test_flipped_members_agree_on_axis_and_value(self):
        up = joint_vector(JointKind.REVOLUTE, (0, 0, 1), (1, 2, 3), angle=0.5)
        down = joint_vector(JointKind.REVOLUTE, (0, 0, -1), (1, 2, 3), angle=-0.5)
        joint = aggregate_part(np.stack([up, down, up]), np.arange(3))
        np.testing.assert_allclose(joint.axis, [0, 0, 1])
        assert joint.ref_angle == pytest.approx(0.5)
        np.testing.assert_allclose(joint.pivot, [1, 2, 3])

    def test_mixed_kinds_raise(self):
        vecs = np.stack([joint_vector(JointKind.REVOLUTE, (0, 0, 1)), joint_vector(JointKind.PRISMATIC, (1, 0, 0))])
        with pytest.raises(ClusteringError):
            aggregate_part(vecs, [0, 1])

    def test_empty_part_raises(self):
        with pytest.raises(ValidationError):
            aggregate_part(np.zeros((3, 11)), np.zeros(3, dtype=bool))

    def test_hemisphere_signs_align_axes(self):
        axes = np.array([[0, 0, 1], [0, 0, -1], [0.1, 0, 0.995], [0, 0.05, -0.9987]])
        signs = hemisphere_signs(axes)
        flipped = axes * signs[:, None]
        assert np.all(flipped @ flipped[0] > 0)


def assert_membership(found, truth, min_fraction=0.99):
    """Every true group maps to its own found label, covering min_fraction of its members."""
    claimed = set()
    for group in np.unique(truth):
        values, counts = np.unique(found[truth == group], return_counts=True)
        best = values[np.argmax(counts)]
        assert best >= 0 and best not in claimed
        assert counts.max() >= min_fraction * (truth == group).sum()
        claimed.add(best)


class TestHdbscan:
    @pytest.mark.parametrize('seed', [0, 1, 2])
    def test_two_gaussian_blobs(self, seed):
        rng = np.random.default_rng(seed)
        pts = np.concatenate([rng.normal(0.0, 1.0, size=(100, 2)), rng.normal(10.0, 1.0, size=(100, 2))])
        truth = np.repeat([0, 1], 100)
        labels = hdbscan(pts, min_cluster_size=20, min_samples=10)
        assert labels.max() == 1
        assert_membership(labels, truth)

    def test_coincident_groups_split(self):
        pts = np.concatenate([np.zeros((100, 6)), np.tile([0, 0, 0, 0, 1, 0], (100, 1))])
        labels = hdbscan(pts, min_cluster_size=20, min_samples=10)
        assert labels.max() == 1
        assert_membership(labels, np.repeat([0, 1], 100), min_fraction=1.0)

    def test_spanning_tree_keeps_zero_edges(self):
        mr = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        edges = prim_mst(mr)
        assert len(edges) == 2
        assert sorted(edges[:, 2].tolist()) == [0.0, 1.0]
        assert any({int(a), int(b)} == {0, 1} and d == 0.0 for a, b, d in edges)

    def test_spanning_tree_weight_matches_brute_force(self):
        rng = np.random.default_rng(3)
        mr = mutual_reachability(rng.normal(size=(7, 2)), 2)
        best = np.inf
        # Cayley: every spanning tree of 7 nodes as a Prüfer sequence
        for code in itertools.product(range(7), repeat=5):
            degree = np.ones(7, dtype=int)
            for c in code:
                degree[c] += 1
            weight = 0.0
            for c in code:
                leaf = int(np.flatnonzero(degree == 1)[0])
                weight += mr[leaf, c]
                degree[leaf] -= 1
                degree[c] -= 1
            u, v = np.flatnonzero(degree == 1)
            best = min(best, weight + mr[u, v])
        assert prim_mst(mr)[:, 2].sum() == pytest.approx(best)

    def test_single_cluster_allowed(self):
        labels = hdbscan(np.zeros((30, 3)), min_cluster_size=10, min_samples=5)
        np.testing.assert_array_equal(labels, 0)

    def test_too_few_points_are_noise(self):
        labels = hdbscan(np.zeros((5, 3)), min_cluster_size=10, min_samples=5)
        np.testing.assert_array_equal(labels, -1)


class TestDiscoverParts:
    def _joint_params(self):
        door_a = joint_vector(JointKind.REVOLUTE, (0, 0, 1), (0.5, 0.3, 0.0), angle=0.4)
        door_b = joint_vector(JointKind.REVOLUTE, (1, 0, 0), (0.0, -0.3, 0.6), angle=1.1)
        # same line as door_a, opposite direction convention
        door_a_flipped = joint_vector(JointKind.REVOLUTE, (0, 0, -1), (0.5, 0.3, 0.0), angle=-0.4)
        drawer = joint_vector(JointKind.PRISMATIC, (0, 1, 0), (0, 0, 0), disp=0.2)
        static = joint_vector(JointKind.STATIC)
        params = np.concatenate([
            np.tile(door_a, (40, 1)), np.tile(door_a_flipped, (40, 1)),
            np.tile(door_b, (60, 1)), np.tile(drawer, (50, 1)), np.tile(static, (70, 1)),
        ])
        groups = np.repeat([0, 0, 1, 2, 3], [40, 40, 60, 50, 70])
        return params, groups

    def test_recovers_ground_truth_parts(self, clustering_config):
        params, groups = self._joint_params()
        found = ArticulationService(clustering_config).discover_parts(params)
        assert found.n_parts == 3
        np.testing.assert_array_equal(found.labels[groups == 3], 0)
        part_of = {g: set(found.labels[groups == g].tolist()) for g in range(3)}
        assert all(len(v) == 1 for v in part_of.values())
        assert len({next(iter(v)) for v in part_of.values()}) == 3
        # revolute parts are numbered before prismatic ones
        assert part_of[2] == {3}

    def test_recovered_joint_lines_match(self, clustering_config):
        params, groups = self._joint_params()
        found = ArticulationService(clustering_config).discover_parts(params)
        door_a = found.joints[int(found.labels[0]) - 1]
        assert abs(door_a.axis @ np.array([0, 0, 1])) == pytest.approx(1.0)
        np.testing.assert_allclose(door_a.axis * door_a.ref_angle, [0, 0, 0.4], atol=1e-9)
        np.testing.assert_allclose(door_a.pivot, [0.5, 0.3, 0.0], atol=1e-9)
        drawer = found.joints[2]
        assert drawer.kind == JointKind.PRISMATIC
        np.testing.assert_allclose(drawer.axis * drawer.ref_disp, [0, 0.2, 0], atol=1e-9)

    def test_all_static_yields_no_parts(self):
        found = ArticulationService().discover_parts(np.tile(joint_vector(JointKind.STATIC), (25, 1)))
        assert found.n_parts == 0
        np.testing.assert_array_equal(found.labels, 0)

    def test_accepts_gaussian_sets(self, clustering_config):
        params, _ = self._joint_params()
        rng = np.random.default_rng(0)
        gs = random_set(len(params), rng).replace(joint_params=params)
        found = ArticulationService(clustering_config).discover_parts(gs)
        assert found.n_parts == 3

    def test_shared_axis_different_pivots_are_two_parts(self):
        params = np.concatenate([
            np.tile(joint_vector(JointKind.REVOLUTE, (0, 0, 1), (0, 0, 0), angle=0.3), (100, 1)),
            np.tile(joint_vector(JointKind.REVOLUTE, (0, 0, 1), (1, 0, 0), angle=0.3), (100, 1)),
        ])
        found = ArticulationService().discover_parts(params)
        assert found.n_parts == 2
        assert_membership(found.labels, np.repeat([0, 1], 100), min_fraction=1.0)


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def synthetic_parts(rng, n_parts, axis_noise=0.0):
    """
    Joint vectors for n_parts movable parts (revolute first, then prismatic)
    plus a static base; returns (params, groups) with group -1 for the base.
    """
    kinds = [JointKind.REVOLUTE, JointKind.PRISMATIC, JointKind.REVOLUTE, JointKind.PRISMATIC][:n_parts]
    blocks, groups = [], []
    for g, kind in enumerate(kinds):
        n = int(rng.integers(80, 200))
        axis = random_unit(rng)
        axes = axis + axis_noise * rng.normal(size=(n, 3))
        axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
        block = np.tile(joint_vector(kind, pivot=rng.uniform(-0.5, 0.5, size=3),
                                     angle=rng.uniform(0, 1), disp=rng.uniform(0, 0.3)), (n, 1))
        block[:, 3:6] = axes
        blocks.append(block)
        groups.append(np.full(n, g))
    blocks.append(np.tile(joint_vector(JointKind.STATIC), (60, 1)))
    groups.append(np.full(60, -1))
    return np.concatenate(blocks), np.concatenate(groups)


class TestDiscoverPartsDefaults:
    @pytest.mark.parametrize('n_parts', [1, 2, 3, 4])
    def test_noise_free_maps_recover_every_part(self, n_parts):
        for seed in range(20):
            params, groups = synthetic_parts(np.random.default_rng(seed), n_parts)
            found = ArticulationService().discover_parts(params)
            assert found.n_parts == n_parts, seed
            np.testing.assert_array_equal(found.labels[groups < 0], 0)
            assert found.labels[groups >= 0].min() >= 1
            assert_membership(found.labels[groups >= 0], groups[groups >= 0])

    @pytest.mark.parametrize('n_parts', [1, 2])
    def test_noisy_axes_keep_the_part_count(self, n_parts):
        for seed in range(20):
            params, _ = synthetic_parts(np.random.default_rng(100 + seed), n_parts, axis_noise=0.02)
            assert ArticulationService().discover_parts(params).n_parts == n_parts, seed


class TestDifferentiableArticulation:
    def test_matches_numpy_rotation(self):
        axis = np.array([0.0, 0.6, 0.8])
        expected = rodrigues(axis, 0.7)
        got = tg.rodrigues(torch.tensor(axis), torch.tensor(0.7, dtype=torch.float64))
        np.testing.assert_allclose(got.numpy(), expected, atol=1e-12)

    def test_gradcheck(self):
        torch.manual_seed(0)
        means = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
        quats = torch.nn.functional.normalize(torch.randn(4, 4, dtype=torch.float64), dim=-1)
        axis = torch.nn.functional.normalize(torch.randn(4, 3, dtype=torch.float64), dim=-1).requires_grad_()
        pivot = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
        delta = torch.rand(4, dtype=torch.float64, requires_grad=True)
        revolute = torch.tensor([True, True, False, False])

        assert torch.autograd.gradcheck(lambda m, a, p, d: tg.articulate(m, quats, a, p, d, revolute),
                                        (means, axis, pivot, delta))
