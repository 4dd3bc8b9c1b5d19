"""
Tests for procedural scenes, protocol cameras, the ray-cast renderer and
ground-truth joint maps.
"""
import json
import math

import numpy as np
import pytest

from config import SynthConfig
from src.core.geometry import look_at, unproject
from src.models import ArticulatedScene, CanonicalFrame, DepthMap, JointKind
from src.models.maps import ANGLE_CHANNEL, AXIS_CHANNELS, PIVOT_CHANNELS
from src.services.articulation_service import articulate_points
from src.services.synth_service import (
    FAMILIES,
    SynthService,
    build_gt_joint_map,
    canonical_part_joints,
    input_camera_layout,
    make_multi,
    random_scene,
    raycast_frame,
    sample_states,
    sample_view_angles,
    target_camera_layout,
    training_camera_layout,
    yawed,
)
from src.utils import ValidationError


def elevations_deg(cams):
    centers = np.stack([c.center for c in cams])
    return np.degrees(np.arcsin(centers[:, 2] / np.linalg.norm(centers, axis=1)))


def front_camera():
    return look_at(np.array([2.6, 0.0, 0.0]))


class TestCameraLayouts:
    def test_training_layout(self):
        cams = training_camera_layout(seed=0)
        assert len(cams) == 48
        elev = elevations_deg(cams)
        assert np.all((elev[:40] >= -1e-9) & (elev[:40] <= 72 + 1e-9))
        assert np.all((elev[40:] >= 72 - 1e-9) & (elev[40:] <= 85 + 1e-9))
        np.testing.assert_allclose([np.linalg.norm(c.center) for c in cams], 2.6)

    def test_input_and_target_layouts(self):
        inputs, targets = input_camera_layout(seed=1), target_camera_layout(seed=1)
        assert len(inputs) == 4 and len(targets) == 12
        assert np.all((elevations_deg(inputs) >= 5 - 1e-9) & (elevations_deg(inputs) <= 60 + 1e-9))
        assert np.all((elevations_deg(targets) >= -1e-9) & (elevations_deg(targets) <= 90 + 1e-9))

    def test_one_view_per_bin(self):
        angles = sample_view_angles(3, 4, (0.0, 90.0), seed=2)
        elev_bins = np.floor(angles[:, 0] / 30.0).astype(int)
        azim_bins = np.floor((angles[:, 1] + 180.0) / 90.0).astype(int)
        assert sorted(zip(elev_bins, azim_bins)) == [(i, j) for i in range(3) for j in range(4)]

    def test_empty_bins_rejected(self):
        with pytest.raises(ValidationError):
            sample_view_angles(0, 4, (0.0, 90.0))

    def test_same_seed_same_layout(self):
        a, b = input_camera_layout(seed=7), input_camera_layout(seed=7)
        np.testing.assert_array_equal(np.stack([c.to_vector() for c in a]), np.stack([c.to_vector() for c in b]))


class TestStates:
    def test_one_sample_per_bin_per_joint(self):
        states = sample_states(8, 3, seed=0)
        assert states.shape == (8, 3)
        assert np.all((states >= 0) & (states < 1))
        for j in range(3):
            assert sorted(np.floor(states[:, j] * 8).astype(int)) == list(range(8))

    def test_joint_bins_are_decorrelated(self):
        bins = np.concatenate([np.floor(sample_states(8, 2, seed=i) * 8) for i in range(10_000)])
        rho = np.corrcoef(bins[:, 0], bins[:, 1])[0, 1]
        assert abs(rho) < 0.05

    def test_zero_states_rejected(self):
        with pytest.raises(ValidationError):
            sample_states(0, 1)


class TestScenes:
    @pytest.mark.parametrize('family', sorted(FAMILIES))
    def test_every_family_builds_a_movable_scene(self, family):
        scene = random_scene(np.random.default_rng(0), SynthConfig(), family=family)
        assert scene.family == family
        assert scene.n_joints >= 1
        assert all(j.kind != JointKind.STATIC for j in scene.joints)
        assert 0.0 < scene.radius() < 1.5

    def test_unknown_family_rejected(self):
        with pytest.raises(ValidationError):
            random_scene(np.random.default_rng(0), SynthConfig(), family='robot')

    def test_single_joint_config_never_draws_multi(self):
        rng = np.random.default_rng(1)
        assert all(random_scene(rng, SynthConfig(max_joints=1)).n_joints == 1 for _ in range(20))

    def test_multi_joint_count(self):
        scene = make_multi(np.random.default_rng(2), SynthConfig(), n_joints=3)
        assert scene.n_joints == 3
        assert [label for label, _ in scene.posed_parts()] == [0, 1, 2, 3]

    def test_yaw_keeps_joint_geometry_rigid(self, cabinet_scene):
        turned = yawed(cabinet_scene, 0.7)
        assert turned.radius() == pytest.approx(cabinet_scene.radius())
        joint = turned.joints[0]
        np.testing.assert_allclose(joint.axis, [0.0, 0.0, 1.0], atol=1e-12)
        assert np.linalg.norm(joint.pivot) == pytest.approx(np.linalg.norm(cabinet_scene.joints[0].pivot))


class TestRaycast:
    def test_closed_door_faces_the_camera(self, cabinet_scene):
        frame = raycast_frame(cabinet_scene, [0.0], front_camera(), 9)
        assert frame.labels.labels[4, 4] == 1
        assert frame.depth[4, 4] == pytest.approx(2.6 - 0.327, rel=1e-6)

    def test_open_door_reveals_the_body(self, cabinet_scene):
        frame = raycast_frame(cabinet_scene, [1.0], front_camera(), 9)
        assert frame.labels.labels[4, 4] == 0
        assert frame.depth[4, 4] == pytest.approx(2.6 - 0.3, rel=1e-6)

    def test_background_is_white_with_zero_depth(self, cabinet_scene):
        frame = raycast_frame(cabinet_scene, None, front_camera(), 9)
        assert frame.labels.labels[0, 0] == -1
        assert frame.depth[0, 0] == 0.0
        np.testing.assert_array_equal(frame.rgb[0, 0], [255, 255, 255])

    def test_unprojected_hits_lie_on_their_part(self, drawer_scene):
        frame = raycast_frame(drawer_scene, [0.5], look_at(np.array([1.8, 1.2, 1.0])), 24)
        points = unproject(DepthMap.from_depth(frame.depth), frame.cam)
        fg = frame.labels.foreground
        hit_labels = frame.labels.labels[fg]
        for label, part in drawer_scene.posed_parts([0.5]):
            box = part.boxes[0]
            local = np.abs(box.to_local(points.points[fg][hit_labels == label]))
            # every hit sits on the box surface
            assert np.all(local <= box.half + 1e-4)
            assert np.all(np.min(np.abs(local - box.half), axis=-1) < 1e-4)


class TestGroundTruthJointMap:
    def test_channels_follow_pixel_labels(self, cabinet_scene):
        cam = front_camera()
        frame = raycast_frame(cabinet_scene, [0.5], look_at(np.array([2.0, 1.2, 0.8])), 16)
        jm = build_gt_joint_map(frame, cabinet_scene, cam, 2.0)
        labels = frame.labels.labels
        door = labels == 1
        assert door.any() and (labels == 0).any()

        canonical = CanonicalFrame(cam.rotation, cam.t, 2.0)
        expected = canonical_part_joints(cabinet_scene, [0.5], canonical)[0]
        np.testing.assert_allclose(jm.data[door][:, AXIS_CHANNELS], np.broadcast_to(expected.axis, (door.sum(), 3)))
        np.testing.assert_allclose(jm.data[door][:, PIVOT_CHANNELS], np.broadcast_to(expected.pivot, (door.sum(), 3)))
        np.testing.assert_allclose(jm.data[door][:, ANGLE_CHANNEL], math.radians(45.0))
        assert np.all(jm.kinds[door] == JointKind.REVOLUTE)

        rest = ~door
        assert np.all(jm.kinds[rest] == JointKind.STATIC)
        np.testing.assert_array_equal(jm.data[rest][:, 3:], 0.0)

    def test_canonical_pivot_is_scaled(self, drawer_scene):
        cam = front_camera()
        canonical = CanonicalFrame(cam.rotation, cam.t, 2.0)
        joint = canonical_part_joints(drawer_scene, [0.5], canonical)[0]
        np.testing.assert_allclose(joint.pivot, (cam.rotation @ np.array([0.3, 0.0, 0.0]) + cam.t) / 2.0)
        assert joint.ref_disp == pytest.approx(0.15 / 2.0)

    def test_label_without_part_rejected(self, cabinet_scene):
        frame = raycast_frame(cabinet_scene, [0.0], front_camera(), 9)
        with pytest.raises(ValidationError):
            build_gt_joint_map(frame, ArticulatedScene(cabinet_scene.base), front_camera(), 1.0)


class TestSynthService:
    def test_generates_loadable_bundles(self, tmp_path, storage, tiny_synth_config):
        service = SynthService(storage, tiny_synth_config)
        manifest_path = service.generate_dataset(1, 11, tmp_path / 'data')
        manifest = json.loads(manifest_path.read_text())
        assert manifest['seed'] == 11
        assert [e['id'] for e in manifest['objects']] == ['obj_0000']

        bundle = storage.load_bundle(tmp_path / 'data' / 'obj_0000')
        assert (bundle.n_states, bundle.n_views) == (2, 4)
        record = storage.load_frame(bundle, 1, 2)
        assert record.frame.shape == (16, 16)
        assert np.array_equal(record.frame.depth > 0, record.frame.labels.labels >= 0)
        assert record.joints.shape == (16, 16)

    def test_same_seed_is_reproducible(self, tmp_path, storage, tiny_synth_config):
        service = SynthService(storage, tiny_synth_config)
        first = service.generate_dataset(2, 5, tmp_path / 'a')
        second = service.generate_dataset(2, 5, tmp_path / 'b')
        assert first.read_text() == second.read_text()
        assert ((tmp_path / 'a' / 'obj_0001' / 'frames' / '1_3.rgb.png').read_bytes()
                == (tmp_path / 'b' / 'obj_0001' / 'frames' / '1_3.rgb.png').read_bytes())

    def test_zero_objects_writes_empty_manifest(self, tmp_path, storage):
        path = SynthService(storage, SynthConfig()).generate_dataset(0, 0, tmp_path)
        assert json.loads(path.read_text())['objects'] == []


class TestGroundTruthConsistency:
    @pytest.mark.parametrize('family', ['cabinet', 'drawer', 'laptop'])
    def test_moving_state_zero_points_lands_on_state_one(self, family):
        rng = np.random.default_rng(4)
        scene = random_scene(rng, SynthConfig(), family=family)
        s0, s1 = [0.2], [0.8]
        before = canonical_part_joints(scene, s0, CanonicalFrame.identity())[0]
        after = canonical_part_joints(scene, s1, CanonicalFrame.identity())[0]

        points = []
        for cam in input_camera_layout(seed=rng):
            frame = raycast_frame(scene, s0, cam, 32)
            mask = frame.labels.labels == 1
            points.append(unproject(DepthMap.from_depth(frame.depth), cam).points[mask])
        points = np.concatenate(points)
        assert len(points) > 0

        moved = articulate_points(points, before, after.reference - before.reference)
        box = dict(scene.posed_parts(s1))[1].boxes[0]
        local = np.abs(box.to_local(moved))
        assert np.all(local <= box.half + 1e-4)
        assert np.all(np.min(np.abs(local - box.half), axis=-1) < 1e-4)
