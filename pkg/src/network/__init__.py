"""Toy articulated splatting network."""
from .articulated_splat import ArticulatedSplatNet, CrossStateAttention
from .heads import CameraHead, DepthHead, FiLM, GaussianHead, JointHead
from .layers import MultiHeadAttention, PatchEmbed, TransformerBlock, sincos_2d

__all__ = [
    'ArticulatedSplatNet',
    'CrossStateAttention',
    'CameraHead',
    'DepthHead',
    'FiLM',
    'GaussianHead',
    'JointHead',
    'MultiHeadAttention',
    'PatchEmbed',
    'TransformerBlock',
    'sincos_2d',
]
