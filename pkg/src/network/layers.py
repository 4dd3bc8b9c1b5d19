"""
Transformer building blocks: multi-head attention, pre-norm blocks,
patch embedding and 2D sinusoidal positional encoding.
"""
import math
from typing import Optional, Tuple

import torch
import torch.nn as nn


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over `heads` heads; also returns the weights."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        assert dim % heads == 0
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.W_query = nn.Linear(dim, dim)
        self.W_key = nn.Linear(dim, dim)
        self.W_value = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, context: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            x: (B, T, D) queries
            context: (B, T', D) keys/values, defaults to x

        Returns:
            (output (B, T, D), weights (B, heads, T, T'))
        """
        context = x if context is None else context
        b, t, _ = x.shape
        tk = context.shape[1]
        q = self.W_query(x).view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = self.W_key(context).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        v = self.W_value(context).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        att = (q @ k.transpose(2, 3)) / math.sqrt(self.head_dim)
        w = torch.softmax(att, dim=-1)
        ctx = (w @ v).transpose(1, 2).contiguous().view(b, t, self.dim)
        return self.out_proj(ctx), w


class FeedForward(nn.Module):
    def __init__(self, dim: int, ratio: int = 4):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Linear(dim, ratio * dim),
            nn.GELU(),
            nn.Linear(ratio * dim, dim),
        )

    def forward(self, x):
        return self.layers(x)


class TransformerBlock(nn.Module):
    """Pre-norm residual block: x + attn(norm(x)), then x + mlp(norm(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.att = MultiHeadAttention(dim, heads)
        self.ff = FeedForward(dim, mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        out, weights = self.att(self.norm1(x))
        x = x + out
        x = x + self.ff(self.norm2(x))
        return x, weights


def sincos_2d(grid_h: int, grid_w: int, dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """
    Fixed 2D sinusoidal encoding, half the channels for rows and half for columns.

    Returns:
        (grid_h * grid_w, dim)
    """
    if dim % 4 != 0:
        raise ValueError(f"positional encoding needs dim divisible by 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    rows, cols = torch.meshgrid(torch.arange(grid_h, dtype=torch.float64),
                                torch.arange(grid_w, dtype=torch.float64), indexing='ij')

    def encode(pos):
        angles = pos.reshape(-1, 1) * omega[None]
        return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)

    return torch.cat([encode(rows), encode(cols)], dim=1).to(dtype=dtype, device=device)


class PatchEmbed(nn.Module):
    """Linear projection of flattened non-overlapping patches."""

    def __init__(self, patch: int, dim: int, channels: int = 3):
        super().__init__()
        self.patch = patch
        self.proj = nn.Linear(channels * patch * patch, dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) → (B, (H/p)·(W/p), D)."""
        b, c, h, w = images.shape
        p = self.patch
        patches = images.reshape(b, c, h // p, p, w // p, p).permute(0, 2, 4, 1, 3, 5)
        return self.proj(patches.reshape(b, (h // p) * (w // p), c * p * p))
