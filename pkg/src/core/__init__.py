"""Core components: dependency container and geometric primitives."""
from .container import Container, container
from .geometry import (
    CanonicalData,
    assemble_gaussians,
    canonical_frame,
    canonicalize,
    look_at,
    orbit_camera,
    pixel_rays,
    project,
    spherical_eye,
    unproject,
)

__all__ = [
    'Container',
    'container',
    'CanonicalData',
    'assemble_gaussians',
    'canonical_frame',
    'canonicalize',
    'look_at',
    'orbit_camera',
    'pixel_rays',
    'project',
    'spherical_eye',
    'unproject',
]
