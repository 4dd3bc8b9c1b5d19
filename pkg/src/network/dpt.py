"""
DPT-style dense decoder: reassemble intermediate tokens into a feature
pyramid and fuse it coarse-to-fine.
"""
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


class ReassembleBlock(nn.Module):
    """Tokens (B, N, D) → grid (B, features, g·scale, g·scale)."""

    def __init__(self, dim: int, features: int, resample: nn.Module):
        super().__init__()
        self.project = nn.Conv2d(dim, features, kernel_size=1)
        self.resample = resample

    def forward(self, tokens: torch.Tensor, grid_h: int, grid_w: int) -> torch.Tensor:
        b, n, d = tokens.shape
        x = tokens.transpose(1, 2).reshape(b, d, grid_h, grid_w)
        return self.resample(self.project(x))


class ResidualConvUnit(nn.Module):
    def __init__(self, features: int):
        super().__init__()
        self.conv1 = nn.Conv2d(features, features, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(features, features, kernel_size=3, padding=1)

    def forward(self, x):
        out = self.conv1(F.relu(x))
        out = self.conv2(F.relu(out))
        return x + out


class FeatureFusionBlock(nn.Module):
    """Merge a skip connection into the running map, refine and upsample."""

    def __init__(self, features: int):
        super().__init__()
        self.skip_unit = ResidualConvUnit(features)
        self.refine_unit = ResidualConvUnit(features)
        self.out_conv = nn.Conv2d(features, features, kernel_size=1)

    def forward(self, x: torch.Tensor, skip: Optional[torch.Tensor] = None, out_size=None) -> torch.Tensor:
        if skip is not None:
            x = x + self.skip_unit(skip)
        x = self.refine_unit(x)
        if out_size is None:
            x = F.interpolate(x, scale_factor=2, mode='bilinear', align_corners=True)
        else:
            x = F.interpolate(x, size=tuple(out_size), mode='bilinear', align_corners=True)
        return self.out_conv(x)


class DPTDecoder(nn.Module):
    """
    Four token taps → one (B, features, H, W) feature map.

    The taps are resampled to 4×, 2×, 1× and ½× the patch grid and fused
    from the coarsest level up, then interpolated to the image size.
    """

    def __init__(self, dim: int, features: int):
        super().__init__()
        self.reassemble = nn.ModuleList([
            ReassembleBlock(dim, features, nn.ConvTranspose2d(features, features, kernel_size=4, stride=4)),
            ReassembleBlock(dim, features, nn.ConvTranspose2d(features, features, kernel_size=2, stride=2)),
            ReassembleBlock(dim, features, nn.Identity()),
            ReassembleBlock(dim, features, nn.Conv2d(features, features, kernel_size=3, stride=2, padding=1)),
        ])
        self.fusion = nn.ModuleList([FeatureFusionBlock(features) for _ in range(4)])

    def forward(self, taps: Sequence[torch.Tensor], grid_h: int, grid_w: int, image_size) -> torch.Tensor:
        a1, a2, a3, a4 = [blk(t, grid_h, grid_w) for blk, t in zip(self.reassemble, taps)]
        fused = self.fusion[3](a4, out_size=a3.shape[2:])
        fused = self.fusion[2](fused, a3, out_size=a2.shape[2:])
        fused = self.fusion[1](fused, a2, out_size=a1.shape[2:])
        return self.fusion[0](fused, a1, out_size=image_size)


class OutputConv(nn.Module):
    """3×3 conv, ReLU, 1×1 conv to `out_channels`."""

    def __init__(self, features: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(features, features, kernel_size=3, padding=1)
        self.out = nn.Conv2d(features, out_channels, kernel_size=1)

    def forward(self, x):
        return self.out(F.relu(self.conv(x)))
