"""
Prediction heads: camera, depth, Gaussian attributes and the FiLM-conditioned
dual-branch joint head.
"""
import math
from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.core import torch_geometry as tg
from src.models.gaussian import GAUSSIAN_ATTR_DIM, OPACITY_INDEX, SCALE_SLICE
from src.models.maps import AXIS_CHANNELS, JOINT_CHANNELS, VARIANT_CHANNELS, INVARIANT_CHANNELS
from .dpt import DPTDecoder, OutputConv

INIT_FOV = 0.87
INIT_LOG_SCALE = -3.5
AXIS_EPS = 1e-12


class FiLM(nn.Module):
    """
    Geometry injection followed by feature-wise modulation:
    f'' = γ(cond) ⊙ (f + MLP(points)) + β(cond).

    Starts as the identity: γ emits 1, β emits 0 and the point MLP emits 0.
    """

    def __init__(self, features: int, cond_dim: int, point_dim: int = 32):
        super().__init__()
        self.point_mlp = nn.Sequential(nn.Linear(3, point_dim), nn.GELU(), nn.Linear(point_dim, features))
        self.gamma = nn.Linear(cond_dim, features)
        self.beta = nn.Linear(cond_dim, features)
        nn.init.zeros_(self.point_mlp[2].weight)
        nn.init.zeros_(self.point_mlp[2].bias)
        nn.init.zeros_(self.gamma.weight)
        nn.init.ones_(self.gamma.bias)
        nn.init.zeros_(self.beta.weight)
        nn.init.zeros_(self.beta.bias)

    def forward(self, f: torch.Tensor, points: torch.Tensor, cond: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Args:
            f: (B, C, H, W) features
            points: (B, H, W, 3) point map
            cond: (B, cond_dim) conditioning, or None for geometry injection only
        """
        f = f + self.point_mlp(points).permute(0, 3, 1, 2)
        if cond is None:
            return f
        return self.gamma(cond)[:, :, None, None] * f + self.beta(cond)[:, :, None, None]


class CameraHead(nn.Module):
    """Camera token → (t, unit q, FoV in (0, π))."""

    def __init__(self, dim: int, hidden: int = 64):
        super().__init__()
        self.mlp = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, 9))
        with torch.no_grad():
            bias = self.mlp[3].bias
            bias.zero_()
            bias[3] = 1.0
            bias[7:9] = math.log(INIT_FOV / (math.pi - INIT_FOV))

    def forward(self, cam_tok: torch.Tensor) -> torch.Tensor:
        raw = self.mlp(cam_tok)
        q = tg.quat_normalize(raw[:, 3:7])
        fov = math.pi * torch.sigmoid(raw[:, 7:9])
        return torch.cat([raw[:, 0:3], q, fov], dim=-1)


class DenseHead(nn.Module):
    """Single-branch DPT decoder with an output convolution."""

    def __init__(self, dim: int, features: int, out_channels: int):
        super().__init__()
        self.decoder = DPTDecoder(dim, features)
        self.output = OutputConv(features, out_channels)

    def forward(self, taps: Sequence[torch.Tensor], grid: Tuple[int, int], image_size) -> torch.Tensor:
        return self.output(self.decoder(taps, grid[0], grid[1], image_size))


class DepthHead(DenseHead):
    """Depth = softplus(raw), confidence = softplus(raw)."""

    def __init__(self, dim: int, features: int):
        super().__init__(dim, features, 2)

    def forward(self, taps, grid, image_size) -> Tuple[torch.Tensor, torch.Tensor]:
        raw = super().forward(taps, grid, image_size)
        return F.softplus(raw[:, 0]), F.softplus(raw[:, 1])


class GaussianHead(DenseHead):
    """83 raw Gaussian attributes plus a non-negative confidence per pixel."""

    def __init__(self, dim: int, features: int):
        super().__init__(dim, features, GAUSSIAN_ATTR_DIM + 1)
        with torch.no_grad():
            bias = self.output.out.bias
            bias.zero_()
            bias[SCALE_SLICE] = INIT_LOG_SCALE
            bias[3] = 1.0
            bias[OPACITY_INDEX] = 0.0

    def forward(self, taps, grid, image_size) -> Tuple[torch.Tensor, torch.Tensor]:
        raw = super().forward(taps, grid, image_size).permute(0, 2, 3, 1)
        return raw[..., :GAUSSIAN_ATTR_DIM], F.softplus(raw[..., GAUSSIAN_ATTR_DIM])


class JointHead(nn.Module):
    """
    Shared DPT fusion feeding an invariant branch (type, axis, pivot; 9
    channels) conditioned on c_inv and a variant branch (angle,
    displacement; 2 channels) conditioned on the image's own state summary.

    With dual_branch=False one 11-channel branch with geometry injection only.
    """

    def __init__(self, dim: int, features: int, point_dim: int = 32, dual_branch: bool = True):
        super().__init__()
        self.dual_branch = dual_branch
        self.decoder = DPTDecoder(dim, features)
        if dual_branch:
            self.inv_film = FiLM(features, dim, point_dim)
            self.var_film = FiLM(features, dim, point_dim)
            self.inv_out = OutputConv(features, INVARIANT_CHANNELS.stop - INVARIANT_CHANNELS.start)
            self.var_out = OutputConv(features, VARIANT_CHANNELS.stop - VARIANT_CHANNELS.start)
        else:
            self.film = FiLM(features, dim, point_dim)
            self.out = OutputConv(features, JOINT_CHANNELS)

    def forward(self, taps: Sequence[torch.Tensor], grid: Tuple[int, int], points: torch.Tensor,
                c_inv: Optional[torch.Tensor] = None, c_var: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Args:
            taps: four (B, N_p, D) token maps
            grid: patch grid (rows, cols)
            points: (B, H, W, 3) point map
            c_inv, c_var: (B, D) per-image conditioning, or None

        Returns:
            (B, H, W, 11) joint map with unit axis channels
        """
        image_size = points.shape[1:3]
        feats = self.decoder(taps, grid[0], grid[1], image_size)
        if self.dual_branch:
            inv = self.inv_out(self.inv_film(feats, points, c_inv))
            var = self.var_out(self.var_film(feats, points, c_var))
            out = torch.cat([inv, var], dim=1)
        else:
            out = self.out(self.film(feats, points))
        out = out.permute(0, 2, 3, 1)
        axis = out[..., AXIS_CHANNELS]
        axis = axis / axis.norm(dim=-1, keepdim=True).clamp_min(AXIS_EPS)
        return torch.cat([out[..., :AXIS_CHANNELS.start], axis, out[..., AXIS_CHANNELS.stop:]], dim=-1)
