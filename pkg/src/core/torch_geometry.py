"""
Differentiable counterparts of the geometry primitives, batched over leading
dimensions. Used by the network (point maps for FiLM), the stage-2
articulation path and the rasterizer.
"""
import torch


def quat_normalize(q: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return q / q.norm(dim=-1, keepdim=True).clamp_min(eps)


def quat_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Hamilton product a ⊗ b for (w, x, y, z) quaternions."""
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], dim=-1)


def quat_to_matrix(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q.unbind(-1)
    return torch.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], dim=-1).reshape(q.shape[:-1] + (3, 3))


def skew(v: torch.Tensor) -> torch.Tensor:
    x, y, z = v.unbind(-1)
    zero = torch.zeros_like(x)
    return torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], dim=-1).reshape(v.shape[:-1] + (3, 3))


def rodrigues(axis: torch.Tensor, angle: torch.Tensor) -> torch.Tensor:
    """I + sin θ [a]x + (1 - cos θ) [a]x² for unit axes (..., 3) and angles (...)."""
    K = skew(axis)
    eye = torch.eye(3, dtype=axis.dtype, device=axis.device).expand(K.shape)
    s = torch.sin(angle)[..., None, None]
    c = torch.cos(angle)[..., None, None]
    return eye + s * K + (1 - c) * (K @ K)


def axis_angle_quat(axis: torch.Tensor, angle: torch.Tensor) -> torch.Tensor:
    half = 0.5 * angle
    return torch.cat([torch.cos(half)[..., None], torch.sin(half)[..., None] * axis], dim=-1)


def pixel_rays(fov: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """
    Unit-z camera rays through pixel centers.

    Args:
        fov: (B, 2) horizontal and vertical field of view

    Returns:
        (B, H, W, 3) directions
    """
    dtype, device = fov.dtype, fov.device
    fx = (width / 2.0) / torch.tan(fov[:, 0] / 2.0)
    fy = (height / 2.0) / torch.tan(fov[:, 1] / 2.0)
    jj = torch.arange(width, dtype=dtype, device=device) + 0.5 - width / 2.0
    ii = torch.arange(height, dtype=dtype, device=device) + 0.5 - height / 2.0
    x = jj[None, None, :] / fx[:, None, None]
    y = ii[None, :, None] / fy[:, None, None]
    x, y = torch.broadcast_tensors(x, y)
    return torch.stack([x, y, torch.ones_like(x)], dim=-1)


def unproject(depth: torch.Tensor, cameras: torch.Tensor) -> torch.Tensor:
    """
    Back-project canonical depth with canonical camera vectors.

    Args:
        depth: (B, H, W)
        cameras: (B, 9) translation, unit quaternion, FoV

    Returns:
        (B, H, W, 3) canonical points (not masked)
    """
    b, h, w = depth.shape
    rays = pixel_rays(cameras[:, 7:9], h, w)
    x_cam = rays * depth[..., None]
    R = quat_to_matrix(cameras[:, 3:7])
    t = cameras[:, None, None, 0:3]
    return torch.einsum('bhwi,bij->bhwj', x_cam - t, R)


def articulate(means: torch.Tensor, quats: torch.Tensor, axis: torch.Tensor, pivot: torch.Tensor,
               delta: torch.Tensor, revolute: torch.Tensor) -> tuple:
    """
    Rigidly move Gaussians by per-Gaussian joint motion.

    Args:
        means, quats: (N, 3), (N, 4)
        axis, pivot: (N, 3) unit axes and pivots
        delta: (N,) relative angle (revolute) or displacement (prismatic)
        revolute: (N,) bool, True where the joint rotates

    Returns:
        (means', quats')
    """
    zero = torch.zeros_like(delta)
    angle = torch.where(revolute, delta, zero)
    shift = torch.where(revolute, zero, delta)
    R = rodrigues(axis, angle)
    rotated = torch.einsum('nij,nj->ni', R, means - pivot) + pivot
    moved = rotated + shift[:, None] * axis
    new_quats = quat_multiply(axis_angle_quat(axis, angle), quats)
    return moved, new_quats
