"""Data models for artikin."""
from .camera import CameraPose, CanonicalFrame
from .joint import JointKind, PluckerLine, PartJoint
from .maps import DepthMap, PointMap, PartLabelMap, JointMap, JOINT_CHANNELS
from .gaussian import Gaussian3D, GaussianSet, GAUSSIAN_ATTR_DIM, GAUSSIAN_PARAM_COUNT
from .scene import OrientedBox, SceneJoint, ScenePart, ArticulatedScene, RenderedFrame
from .network_io import TokenSet, ModelOutput, TrainingBatch

__all__ = [
    'CameraPose', 'CanonicalFrame',
    'JointKind', 'PluckerLine', 'PartJoint',
    'DepthMap', 'PointMap', 'PartLabelMap', 'JointMap', 'JOINT_CHANNELS',
    'Gaussian3D', 'GaussianSet', 'GAUSSIAN_ATTR_DIM', 'GAUSSIAN_PARAM_COUNT',
    'OrientedBox', 'SceneJoint', 'ScenePart', 'ArticulatedScene', 'RenderedFrame',
    'TokenSet', 'ModelOutput', 'TrainingBatch',
]
