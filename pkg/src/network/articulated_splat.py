"""
Feed-forward articulated splatting network.

Images of one object in two articulation states are patch-embedded, given a
camera token each (a dedicated one for the reference image) and a state
token per state, and contextualized by alternating frame and global
attention. Cross-state attention refines the state summaries, which
condition the dual-branch joint head through FiLM.
"""
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from config import ModelConfig
from src.core import torch_geometry as tg
from src.models import ModelOutput, TokenSet
from src.utils import UnsupportedConfigurationError, ValidationError, setup_logger
from .heads import CameraHead, DepthHead, GaussianHead, JointHead
from .layers import MultiHeadAttention, PatchEmbed, TransformerBlock, sincos_2d

logger = setup_logger(__name__)

SUPPORTED_STATES = 2


class CrossStateAttention(nn.Module):
    """z̃_s = ẑ_s + out(attn(Q = ẑ_s, K = V = patch tokens of the other state))."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads)

    def refine(self, z: torch.Tensor, other_patches: torch.Tensor) -> torch.Tensor:
        out, _ = self.attn(z[None, None, :], other_patches[None])
        return z + out[0, 0]

    def forward(self, z0: torch.Tensor, z1: torch.Tensor, f0: torch.Tensor,
                f1: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            z0, z1: (D,) state summaries
            f0, f1: (N, D) patch tokens of each state
        """
        if z0.shape[-1] != f1.shape[-1] or z1.shape[-1] != f0.shape[-1]:
            raise ValidationError("state summaries and patch tokens must share a feature dim")
        return self.refine(z0, f1), self.refine(z1, f0)


class ArticulatedSplatNet(nn.Module):
    """Camera, depth, Gaussian and joint prediction for S = 2 states × V views."""

    def __init__(self, config: ModelConfig = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        self.patch_embed = PatchEmbed(cfg.patch, cfg.dim)
        self.ref_cam_token = nn.Parameter(torch.randn(cfg.dim) * 0.02)
        self.cam_token = nn.Parameter(torch.randn(cfg.dim) * 0.02)
        self.state_tokens = nn.Parameter(torch.randn(SUPPORTED_STATES, cfg.dim) * 0.02) if cfg.use_state_token else None
        self.blocks = nn.ModuleList([TransformerBlock(cfg.dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.layers)])
        self.csa = CrossStateAttention(cfg.dim, cfg.heads) if cfg.use_state_token and cfg.use_csa else None
        self.camera_head = CameraHead(cfg.dim, cfg.cam_head_dim)
        self.depth_head = DepthHead(cfg.dim, cfg.fusion_dim)
        self.gaussian_head = GaussianHead(cfg.dim, cfg.fusion_dim)
        self.joint_head = JointHead(cfg.dim, cfg.fusion_dim, cfg.point_mlp_dim, cfg.dual_branch)

    def patchify(self, images: torch.Tensor, n_states: int, n_views: int) -> TokenSet:
        """
        Embed (S·V, 3, H, W) images into patch, camera and state tokens.

        Raises:
            ValidationError: If H or W is not a multiple of the patch size
        """
        b, _, h, w = images.shape
        p = self.config.patch
        if h % p or w % p:
            raise ValidationError("image size must be divisible by the patch size",
                                  details={'height': h, 'width': w, 'patch': p})
        if b != n_states * n_views:
            raise ValidationError("batch must hold S*V images", details={'batch': b, 'S': n_states, 'V': n_views})
        pos = sincos_2d(h // p, w // p, self.config.dim, dtype=images.dtype, device=images.device)
        patch = self.patch_embed(images) + pos[None]
        cam = self.cam_token.to(images.dtype).expand(b, -1).clone()
        cam[0] = self.ref_cam_token.to(images.dtype)
        state = None if self.state_tokens is None else self.state_tokens[:n_states].to(images.dtype)
        return TokenSet(patch, cam, state, n_states, n_views)

    def _frame_layer(self, block: TransformerBlock, tokens: TokenSet) -> Tuple[TokenSet, torch.Tensor]:
        """Attention within each image's [state, camera, patches] sequence."""
        s, v = tokens.n_states, tokens.n_views
        parts = [tokens.cam_tok[:, None], tokens.patch]
        lead = 1
        if tokens.state_tok is not None:
            parts.insert(0, tokens.state_tok.repeat_interleave(v, dim=0)[:, None])
            lead = 2
        seq, weights = block(torch.cat(parts, dim=1))
        state = None
        if tokens.state_tok is not None:
            state = seq[:, 0].reshape(s, v, -1).mean(dim=1)
        return TokenSet(seq[:, lead:], seq[:, lead - 1], state, s, v), weights

    def _global_layer(self, block: TransformerBlock, tokens: TokenSet) -> Tuple[TokenSet, torch.Tensor]:
        """Attention across every token of every image."""
        b, n_p, d = tokens.patch.shape
        parts = [tokens.cam_tok, tokens.patch.reshape(b * n_p, d)]
        n_state = 0
        if tokens.state_tok is not None:
            parts.insert(0, tokens.state_tok)
            n_state = tokens.state_tok.shape[0]
        seq, weights = block(torch.cat(parts, dim=0)[None])
        seq = seq[0]
        state = seq[:n_state] if n_state else None
        cam = seq[n_state:n_state + b]
        patch = seq[n_state + b:].reshape(b, n_p, d)
        return TokenSet(patch, cam, state, tokens.n_states, tokens.n_views), weights

    def backbone(self, tokens: TokenSet, return_attention: bool = False):
        """
        Alternate frame (odd layers) and global (even layers) attention.

        Returns:
            (final tokens, per-layer patch tokens with index 0 the input[, attention weights])
        """
        history: List[torch.Tensor] = [tokens.patch]
        attention: List[torch.Tensor] = []
        for i, block in enumerate(self.blocks, start=1):
            layer = self._frame_layer if i % 2 == 1 else self._global_layer
            tokens, weights = layer(block, tokens)
            history.append(tokens.patch)
            attention.append(weights)
        if return_attention:
            return tokens, history, attention
        return tokens, history

    def state_summaries(self, tokens: TokenSet) -> Optional[torch.Tensor]:
        """Refined (S, D) summaries z̃, or None without state tokens."""
        if tokens.state_tok is None:
            return None
        z0, z1 = tokens.state_tok[0], tokens.state_tok[1]
        if self.csa is None:
            return tokens.state_tok
        z0, z1 = self.csa(z0, z1, tokens.state_patches(0), tokens.state_patches(1))
        return torch.stack([z0, z1])

    def forward(self, images: torch.Tensor) -> ModelOutput:
        """
        Args:
            images: (S, V, 3, H, W) with S = 2

        Raises:
            UnsupportedConfigurationError: If S ≠ 2
        """
        if images.dim() != 5:
            raise ValidationError("images must be (S, V, 3, H, W)", details={'shape': tuple(images.shape)})
        s, v, _, h, w = images.shape
        if s != SUPPORTED_STATES:
            raise UnsupportedConfigurationError(
                f"the network is defined for exactly {SUPPORTED_STATES} articulation states",
                details={'states': s})
        flat = images.reshape(s * v, *images.shape[2:])
        tokens = self.patchify(flat, s, v)
        tokens, history = self.backbone(tokens)
        taps = [history[t] for t in self.config.taps]
        grid = (h // self.config.patch, w // self.config.patch)

        cameras = self.camera_head(tokens.cam_tok)
        depth, depth_conf = self.depth_head(taps, grid, (h, w))
        gaussians, gaussian_conf = self.gaussian_head(taps, grid, (h, w))
        points = tg.unproject(depth, cameras)

        summary = self.state_summaries(tokens)
        c_inv = c_var = None
        if summary is not None:
            c_inv = summary.mean(dim=0).expand(s * v, -1)
            c_var = summary.repeat_interleave(v, dim=0)
        joints = self.joint_head(taps, grid, points.detach(), c_inv, c_var)
        return ModelOutput(cameras, depth, depth_conf, points, gaussians, gaussian_conf, joints,
                           s, v, summary)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
