"""
Gaussian splatting renderer and voxel merging.

The rasterizer is a dense, global-sort EWA splatter written with torch so
that stage-2 training can backpropagate into Gaussian parameters.
"""
from typing import Optional, Tuple, Union

import numpy as np
import torch

from config import RenderConfig
from src.core import torch_geometry as tg
from src.models import CameraPose, GaussianSet
from src.models.maps import AXIS_CHANNELS
from src.utils import ValidationError, setup_logger
from src.utils.rotations import quat_normalize
from .articulation_service import flip_joint_vectors

logger = setup_logger(__name__)

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)
SH_C4 = (2.5033429417967046, -1.7701307697799304, 0.9461746957575601, -0.6690465435572892,
         0.10578554691520431, -0.6690465435572892, 0.47308734787878004, -1.7701307697799304,
         0.6258357354491761)
MAX_SH_DEGREE = 4
COLOR_OFFSET = 0.5


def sh_basis(dirs: torch.Tensor, degree: int = MAX_SH_DEGREE) -> torch.Tensor:
    """Real SH basis values (..., (degree+1)²) for unit directions (..., 3)."""
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValidationError(f"SH degree must be in [0, {MAX_SH_DEGREE}]", details={'degree': degree})
    x, y, z = dirs.unbind(-1)
    terms = [torch.full_like(x, SH_C0)]
    if degree > 0:
        terms += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        terms += [SH_C2[0] * xy, SH_C2[1] * yz, SH_C2[2] * (2 * zz - xx - yy),
                  SH_C2[3] * xz, SH_C2[4] * (xx - yy)]
    if degree > 2:
        terms += [SH_C3[0] * y * (3 * xx - yy), SH_C3[1] * xy * z, SH_C3[2] * y * (4 * zz - xx - yy),
                  SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy), SH_C3[4] * x * (4 * zz - xx - yy),
                  SH_C3[5] * z * (xx - yy), SH_C3[6] * x * (xx - 3 * yy)]
    if degree > 3:
        terms += [SH_C4[0] * xy * (xx - yy), SH_C4[1] * yz * (3 * xx - yy), SH_C4[2] * xy * (7 * zz - 1),
                  SH_C4[3] * yz * (7 * zz - 3), SH_C4[4] * (zz * (35 * zz - 30) + 3),
                  SH_C4[5] * xz * (7 * zz - 3), SH_C4[6] * (xx - yy) * (7 * zz - 1),
                  SH_C4[7] * xz * (xx - 3 * yy), SH_C4[8] * (xx * (xx - 3 * yy) - yy * (3 * xx - yy))]
    return torch.stack(terms, dim=-1)


def eval_sh(sh: torch.Tensor, view_dir: torch.Tensor, degree: int = MAX_SH_DEGREE) -> torch.Tensor:
    """
    RGB from SH coefficients.

    Args:
        sh: (..., 25, 3) coefficients
        view_dir: (..., 3) unit viewing directions
        degree: Highest band used, 0..4

    Returns:
        (..., 3) colors, basis · coefficients + 0.5, clamped at 0
    """
    basis = sh_basis(view_dir, degree)
    n = basis.shape[-1]
    color = torch.einsum('...k,...kc->...c', basis, sh[..., :n, :])
    return torch.clamp(color + COLOR_OFFSET, min=0.0)


def camera_tensor(cam: Union[CameraPose, torch.Tensor], dtype=torch.float32) -> torch.Tensor:
    if isinstance(cam, CameraPose):
        return torch.as_tensor(cam.to_vector(), dtype=dtype)
    return cam


class GaussianRasterizer:
    """Front-to-back alpha compositing of projected 3D Gaussians."""

    def __init__(self, render: RenderConfig = None):
        self.config = render or RenderConfig()

    def rasterize(self, means: torch.Tensor, log_scales: torch.Tensor, quats: torch.Tensor,
                  opacities: torch.Tensor, sh: torch.Tensor, cam: Union[CameraPose, torch.Tensor],
                  res: Union[int, Tuple[int, int]], background: Optional[torch.Tensor] = None,
                  sh_degree: Optional[int] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Render Gaussians.

        Args:
            means, log_scales, quats: (N, 3), (N, 3), (N, 4) world-frame parameters
            opacities: (N,) post-sigmoid opacity
            sh: (N, 25, 3) SH coefficients
            cam: CameraPose or (9,) tensor (t, q, fov)
            res: Output size, int or (H, W)
            background: (3,) color, defaults to the configured background
            sh_degree: SH band limit, defaults to the configured degree

        Returns:
            (image (H, W, 3), alpha (H, W)) with alpha = 1 − final transmittance
        """
        h, w = (res, res) if isinstance(res, int) else res
        dtype, device = means.dtype, means.device
        cfg = self.config
        cam = camera_tensor(cam, dtype).to(device=device, dtype=dtype)
        bg = torch.as_tensor(cfg.background if background is None else background, dtype=dtype, device=device)
        degree = cfg.sh_degree if sh_degree is None else sh_degree

        t = cam[0:3]
        W = tg.quat_to_matrix(tg.quat_normalize(cam[3:7]))
        fx = (w / 2.0) / torch.tan(cam[7] / 2.0)
        fy = (h / 2.0) / torch.tan(cam[8] / 2.0)
        cx, cy = w / 2.0, h / 2.0

        x_cam = means @ W.T + t
        z = x_cam[:, 2]
        visible = z > cfg.near
        if not bool(visible.any()):
            image = bg.expand(h, w, 3).clone()
            return image, torch.zeros(h, w, dtype=dtype, device=device)

        x_cam, z = x_cam[visible], z[visible]
        u = fx * x_cam[:, 0] / z + cx
        v = fy * x_cam[:, 1] / z + cy

        R = tg.quat_to_matrix(tg.quat_normalize(quats[visible]))
        S2 = torch.exp(2.0 * log_scales[visible])
        cov3 = (R * S2[:, None, :]) @ R.transpose(1, 2)
        zero = torch.zeros_like(z)
        J = torch.stack([
            torch.stack([fx / z, zero, -fx * x_cam[:, 0] / (z * z)], dim=-1),
            torch.stack([zero, fy / z, -fy * x_cam[:, 1] / (z * z)], dim=-1),
        ], dim=1)
        JW = J @ W
        cov2 = JW @ cov3 @ JW.transpose(1, 2)
        cov2 = cov2 + cfg.dilation * torch.eye(2, dtype=dtype, device=device)
        det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] * cov2[:, 1, 0]
        inv_a = cov2[:, 1, 1] / det
        inv_b = -cov2[:, 0, 1] / det
        inv_c = cov2[:, 0, 0] / det

        center = -W.T @ t
        dirs = means[visible] - center
        dirs = dirs / dirs.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        colors = eval_sh(sh[visible], dirs, degree)
        alpha0 = opacities[visible]

        order = torch.sort(z, stable=True).indices
        u, v, inv_a, inv_b, inv_c = u[order], v[order], inv_a[order], inv_b[order], inv_c[order]
        colors, alpha0 = colors[order], alpha0[order]

        jj, ii = torch.meshgrid(torch.arange(w, dtype=dtype, device=device) + 0.5,
                                torch.arange(h, dtype=dtype, device=device) + 0.5, indexing='xy')
        px, py = jj.reshape(-1, 1), ii.reshape(-1, 1)

        accum = torch.zeros(h * w, 3, dtype=dtype, device=device)
        T = torch.ones(h * w, 1, dtype=dtype, device=device)
        cutoff = cfg.cutoff_sigma ** 2
        for start in range(0, len(order), cfg.chunk_size):
            sl = slice(start, start + cfg.chunk_size)
            dx = px - u[None, sl]
            dy = py - v[None, sl]
            maha = inv_a[None, sl] * dx * dx + 2.0 * inv_b[None, sl] * dx * dy + inv_c[None, sl] * dy * dy
            alpha = alpha0[None, sl] * torch.exp(-0.5 * maha)
            alpha = torch.where(maha <= cutoff, alpha, torch.zeros_like(alpha))
            alpha = torch.clamp(alpha, max=cfg.max_alpha)
            survive = torch.cumprod(1.0 - alpha, dim=1)
            before = torch.cat([torch.ones_like(survive[:, :1]), survive[:, :-1]], dim=1) * T
            accum = accum + (before * alpha) @ colors[sl]
            T = T * survive[:, -1:]

        image = accum + T * bg
        return image.reshape(h, w, 3), (1.0 - T).reshape(h, w)

    def render_set(self, gaussians: GaussianSet, cam: CameraPose, res: Union[int, Tuple[int, int]],
                   background=None, sh_degree: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Render a numpy GaussianSet without gradients."""
        with torch.no_grad():
            image, alpha = self.rasterize(
                torch.as_tensor(gaussians.means, dtype=torch.float64),
                torch.as_tensor(gaussians.log_scales, dtype=torch.float64),
                torch.as_tensor(gaussians.quats, dtype=torch.float64),
                torch.as_tensor(gaussians.opacities, dtype=torch.float64),
                torch.as_tensor(gaussians.sh, dtype=torch.float64),
                cam, res, background, sh_degree)
        return image.numpy(), alpha.numpy()


def voxel_merge(gaussians: GaussianSet, voxel_size: float, by_label: bool = False) -> GaussianSet:
    """
    Merge Gaussians that share a voxel (and, optionally, a part label).

    Per bucket: opacity-weighted means of position, log-scale, SH and joint
    vectors; quaternions sign-aligned to the heaviest member before
    averaging; opacity 1 − Π(1 − α_i); label of the heaviest member.

    Raises:
        ValidationError: If voxel_size is not positive
    """
    if not voxel_size > 0:
        raise ValidationError("voxel size must be positive", details={'voxel_size': voxel_size})
    n = len(gaussians)
    if n == 0:
        return gaussians
    keys = np.floor(gaussians.means / voxel_size).astype(np.int64)
    if by_label:
        keys = np.concatenate([gaussians.labels[:, None].astype(np.int64), keys], axis=1)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    m = int(inverse.max()) + 1

    alpha = gaussians.opacities
    weights = np.where(alpha > 0, alpha, 0.0)
    totals = np.bincount(inverse, weights=weights, minlength=m)
    empty = totals <= 0
    weights = np.where(empty[inverse], 1.0, weights)
    totals = np.bincount(inverse, weights=weights, minlength=m)
    norm_w = weights / totals[inverse]

    order = np.lexsort((-weights, inverse))
    first = np.ones(n, dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    heaviest = np.empty(m, dtype=np.int64)
    heaviest[inverse[order][first]] = order[first]

    def average(values: np.ndarray) -> np.ndarray:
        flat = values.reshape(n, -1)
        out = np.zeros((m, flat.shape[1]))
        np.add.at(out, inverse, flat * norm_w[:, None])
        return out.reshape((m,) + values.shape[1:])

    ref_quat = gaussians.quats[heaviest][inverse]
    qsign = np.where(np.sum(gaussians.quats * ref_quat, axis=1) < 0, -1.0, 1.0)
    quats = quat_normalize(average(gaussians.quats * qsign[:, None]))

    joint_params = gaussians.joint_params
    ref_axis = joint_params[heaviest][inverse][:, AXIS_CHANNELS]
    asign = np.where(np.sum(joint_params[:, AXIS_CHANNELS] * ref_axis, axis=1) < 0, -1.0, 1.0)
    joints = average(flip_joint_vectors(joint_params, asign))

    log_transmit = np.zeros(m)
    np.add.at(log_transmit, inverse, np.log1p(-np.clip(alpha, 0.0, 1.0 - 1e-12)))
    opacities = 1.0 - np.exp(log_transmit)

    source = np.full(m, np.iinfo(np.int32).max, dtype=np.int64)
    np.minimum.at(source, inverse, gaussians.source_state.astype(np.int64))

    merged = GaussianSet(average(gaussians.means), average(gaussians.log_scales), quats, opacities,
                         average(gaussians.sh), joints, gaussians.labels[heaviest], source)
    logger.debug(f"voxel_merge: {n} -> {m} Gaussians (voxel {voxel_size})")
    return merged
