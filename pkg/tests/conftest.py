"""
Shared fixtures: tiny model configs, procedural scenes and rendered frames.
"""
import math

import numpy as np
import pytest
import torch

from config import ClusteringConfig, InferenceConfig, ModelConfig, SynthConfig, TrainingConfig
from src.core import container
from src.models import ArticulatedScene, JointKind, OrientedBox, SceneJoint, ScenePart
from src.services.storage_service import StorageService
from src.services.synth_service import input_camera_layout, raycast_frame


@pytest.fixture(autouse=True)
def reset_container():
    """Every test starts from an empty service container."""
    container.reset()
    yield
    container.reset()


@pytest.fixture
def tiny_model_config():
    return ModelConfig(dim=32, layers=2, heads=4, patch=8, image_size=16, fusion_dim=8,
                       taps=(0, 1, 2, 2), cam_head_dim=16, point_mlp_dim=8)


@pytest.fixture
def tiny_synth_config():
    return SynthConfig(resolution=16, views=4, states=2)


@pytest.fixture
def tiny_training_config():
    return TrainingConfig(stage1_steps=2, stage2_steps=1, warmup_steps=1, views_per_state=2,
                          render_res=8, gaussian_stride=4, checkpoint_every=1)


@pytest.fixture
def storage():
    return StorageService()


@pytest.fixture
def cabinet_scene():
    """Unit-ish box body with a door hinged about +z at its front-right edge."""
    body = ScenePart('body', (OrientedBox(np.zeros(3), np.array([0.3, 0.3, 0.4])),), np.array([0.6, 0.5, 0.4]))
    door = ScenePart('door', (OrientedBox(np.array([0.315, 0.0, 0.0]), np.array([0.012, 0.29, 0.39])),),
                     np.array([0.2, 0.4, 0.8]))
    hinge = SceneJoint(JointKind.REVOLUTE, np.array([0.0, 0.0, 1.0]), np.array([0.315, 0.29, 0.0]),
                       0.0, math.radians(90.0))
    return ArticulatedScene(body, (door,), (hinge,), family='cabinet', name='cab')


@pytest.fixture
def drawer_scene():
    body = ScenePart('body', (OrientedBox(np.zeros(3), np.array([0.3, 0.3, 0.3])),), np.array([0.7, 0.7, 0.7]))
    drawer = ScenePart('drawer', (OrientedBox(np.array([0.33, 0.0, 0.0]), np.array([0.03, 0.25, 0.25])),),
                       np.array([0.8, 0.3, 0.3]))
    slide = SceneJoint(JointKind.PRISMATIC, np.array([1.0, 0.0, 0.0]), np.array([0.3, 0.0, 0.0]), 0.0, 0.3)
    return ArticulatedScene(body, (drawer,), (slide,), family='drawer', name='drw')


@pytest.fixture
def two_state_frames(cabinet_scene):
    """frames[s][v] of the cabinet at states 0.1 and 0.7 from four input views, 16px."""
    cams = input_camera_layout(2.6, np.random.default_rng(3))
    states = [np.array([0.1]), np.array([0.7])]
    return [[raycast_frame(cabinet_scene, s, cam, 16) for cam in cams] for s in states]


@pytest.fixture
def seeded():
    torch.manual_seed(0)
    return np.random.default_rng(0)


@pytest.fixture
def clustering_config():
    return ClusteringConfig(min_cluster_frac=0.01, min_cluster_floor=10, min_samples=5, max_points=600)


@pytest.fixture
def inference_config():
    return InferenceConfig(conf_threshold=0.0, voxel_size=0.02, views_per_state=4)
