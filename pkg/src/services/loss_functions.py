"""
Training objectives for both stages.

Per-pixel terms are averaged over foreground pixels. All functions work on
torch tensors and are differentiable.
"""
from dataclasses import dataclass, field
from typing import Dict, Tuple

import torch
import torch.nn.functional as F

from config import LossWeights, TrainingConfig
from src.core import torch_geometry as tg
from src.models import JointKind, ModelOutput, TrainingBatch
from src.models.gaussian import OPACITY_INDEX, ROT_SLICE, SCALE_SLICE, SH_COEFFS, SH_SLICE
from src.models.maps import (
    ANGLE_CHANNEL,
    AXIS_CHANNELS,
    DISP_CHANNEL,
    INVARIANT_CHANNELS,
    PIVOT_CHANNELS,
    TYPE_CHANNELS,
)
from src.utils import ValidationError
from .render_service import GaussianRasterizer

NORM_EPS = 1e-24
PROXY_SCALES = 3
PROXY_WEIGHT = 0.1

STAGE1_TERMS = ('pose', 'depth', 'joint', 'consist', 'smooth')
STAGE2_TERMS = STAGE1_TERMS + ('rgb',)


def safe_norm(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Euclidean norm that is exactly 0 at 0 and has a finite gradient there."""
    return torch.sqrt((v * v).sum(dim=dim) + NORM_EPS) - NORM_EPS ** 0.5


def huber(x: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    ax = x.abs()
    return torch.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def _zero_like(t: torch.Tensor) -> torch.Tensor:
    return t.sum() * 0.0


def loss_pose(pred: torch.Tensor, gt: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """
    Huber loss over (t, q, f), summed over the 9 components and averaged over cameras.

    The predicted quaternion is flipped to the hemisphere of the ground truth.

    Args:
        pred, gt: (..., 9) camera vectors
    """
    pred = pred.reshape(-1, 9)
    gt = gt.reshape(-1, 9)
    sign = torch.where((pred[:, 3:7] * gt[:, 3:7]).sum(-1, keepdim=True) < 0, -1.0, 1.0).to(pred.dtype)
    q = pred[:, 3:7] * sign
    diff = torch.cat([pred[:, 0:3] - gt[:, 0:3], q - gt[:, 3:7], pred[:, 7:9] - gt[:, 7:9]], dim=-1)
    return huber(diff, delta).sum(-1).mean()


def loss_depth(depth: torch.Tensor, conf: torch.Tensor, gt_depth: torch.Tensor, fg: torch.Tensor,
               alpha: float = 0.2, conf_floor: float = 1e-3) -> torch.Tensor:
    """Mean over foreground of conf · |D − D*| − α · log(conf), conf clamped at conf_floor."""
    fg = fg.bool()
    if not bool(fg.any()):
        return _zero_like(depth)
    c = torch.clamp(conf[fg], min=conf_floor)
    return (c * (depth[fg] - gt_depth[fg]).abs() - alpha * torch.log(c)).mean()


def d_perp(p: torch.Tensor, p_star: torch.Tensor, a_star: torch.Tensor) -> torch.Tensor:
    """Distance from p to the line through p_star along unit a_star."""
    diff = p - p_star
    along = (diff * a_star).sum(-1, keepdim=True) * a_star
    return safe_norm(diff - along)


def loss_joint(pred: torch.Tensor, gt: torch.Tensor, labels: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """
    Per-pixel joint supervision averaged over foreground pixels.

    Cross-entropy on type logits everywhere on the foreground; axis L1 and
    pivot line distance on movable pixels; Huber on angle for revolute and
    on displacement for prismatic pixels.
    """
    fg = labels >= 0
    n_fg = int(fg.sum())
    if n_fg == 0:
        return _zero_like(pred)
    p = pred[fg]
    g = gt[fg]
    kind = torch.argmax(g[:, TYPE_CHANNELS], dim=-1)
    ce = torch.logsumexp(p[:, TYPE_CHANNELS], dim=-1) - p[:, TYPE_CHANNELS].gather(1, kind[:, None])[:, 0]
    total = ce.sum()

    movable = kind != JointKind.STATIC
    if bool(movable.any()):
        pm, gm = p[movable], g[movable]
        total = total + (pm[:, AXIS_CHANNELS] - gm[:, AXIS_CHANNELS]).abs().sum()
        total = total + d_perp(pm[:, PIVOT_CHANNELS], gm[:, PIVOT_CHANNELS], gm[:, AXIS_CHANNELS]).sum()
    rev = kind == JointKind.REVOLUTE
    if bool(rev.any()):
        total = total + huber(p[rev, ANGLE_CHANNEL] - g[rev, ANGLE_CHANNEL], delta).sum()
    pri = kind == JointKind.PRISMATIC
    if bool(pri.any()):
        total = total + huber(p[pri, DISP_CHANNEL] - g[pri, DISP_CHANNEL], delta).sum()
    return total / n_fg


def loss_consist(pred: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """
    Cross-state consistency of invariant channels.

    Args:
        pred: (2, V, H, W, C>=9) joint maps per state
        labels: (2, V, H, W) ground-truth part labels

    Returns:
        Mean over moving parts seen in both states of ‖μ_p⁽⁰⁾ − μ_p⁽¹⁾‖₂
    """
    inv = pred[..., INVARIANT_CHANNELS]
    parts = torch.unique(labels[labels > 0])
    terms = []
    for part in parts.tolist():
        m0 = labels[0] == part
        m1 = labels[1] == part
        if not (bool(m0.any()) and bool(m1.any())):
            continue
        terms.append(safe_norm(inv[0][m0].mean(0) - inv[1][m1].mean(0)))
    if not terms:
        return _zero_like(pred)
    return torch.stack(terms).mean()


def loss_smooth(pred: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """
    Part-aware total variation: mean over 4-neighbour pairs with the same
    non-negative label of the ℓ₁ difference summed over all channels.

    Args:
        pred: (..., H, W, C)
        labels: (..., H, W)
    """
    dh = (pred[..., :, 1:, :] - pred[..., :, :-1, :]).abs().sum(-1)
    dv = (pred[..., 1:, :, :] - pred[..., :-1, :, :]).abs().sum(-1)
    mh = (labels[..., :, 1:] == labels[..., :, :-1]) & (labels[..., :, 1:] >= 0)
    mv = (labels[..., 1:, :] == labels[..., :-1, :]) & (labels[..., 1:, :] >= 0)
    n_pairs = int(mh.sum()) + int(mv.sum())
    if n_pairs == 0:
        return _zero_like(pred)
    return (dh[mh].sum() + dv[mv].sum()) / n_pairs


def _as_nchw(image: torch.Tensor) -> torch.Tensor:
    if image.dim() == 3:
        image = image[None]
    return image.permute(0, 3, 1, 2)


def gradient_proxy(render: torch.Tensor, gt: torch.Tensor, scales: int = PROXY_SCALES) -> torch.Tensor:
    """
    Perceptual stand-in: mean ℓ₁ distance between image gradients at
    `scales` dyadic resolutions, averaged over scales.

    Args:
        render, gt: (H, W, 3) or (B, H, W, 3)
    """
    r, g = _as_nchw(render), _as_nchw(gt)
    total = _zero_like(r)
    used = 0
    for k in range(scales):
        if k > 0:
            if min(r.shape[-2:]) < 4:
                break
            r = F.avg_pool2d(r, 2)
            g = F.avg_pool2d(g, 2)
        dx = (r[..., :, 1:] - r[..., :, :-1]) - (g[..., :, 1:] - g[..., :, :-1])
        dy = (r[..., 1:, :] - r[..., :-1, :]) - (g[..., 1:, :] - g[..., :-1, :])
        terms = []
        if dx.numel():
            terms.append(dx.abs().mean())
        if dy.numel():
            terms.append(dy.abs().mean())
        if terms:
            total = total + sum(terms) / len(terms)
            used += 1
    return total / max(used, 1)


def loss_rgb(render: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Pixel MSE + 0.1 × gradient proxy."""
    if render.shape != gt.shape:
        raise ValidationError("render and target must share a shape",
                              details={'render': tuple(render.shape), 'gt': tuple(gt.shape)})
    return F.mse_loss(render, gt) + PROXY_WEIGHT * gradient_proxy(render, gt)


def combine_losses(components: Dict[str, torch.Tensor], weights: LossWeights, stage: int) -> torch.Tensor:
    """
    Weighted sum of component losses for a stage.

    Stage 1 uses pose, depth, joint, consist and smooth; stage 2 adds rgb.
    """
    if stage not in (1, 2):
        raise ValidationError("stage must be 1 or 2", details={'stage': stage})
    terms = STAGE1_TERMS if stage == 1 else STAGE2_TERMS
    total = None
    for name in terms:
        value = components.get(name)
        if value is None:
            continue
        weighted = getattr(weights, name) * value
        total = weighted if total is None else total + weighted
    if total is None:
        return torch.zeros(())
    return total


def articulate_predictions(means: torch.Tensor, quats: torch.Tensor, joint_vecs: torch.Tensor,
                           labels: torch.Tensor, source: torch.Tensor, part_kinds: torch.Tensor,
                           part_values: torch.Tensor, part_axes: torch.Tensor,
                           target_state: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Move predicted Gaussians into a target state using ground-truth part labels.

    For each (part, source state) the predicted joint vectors are averaged
    into an axis, pivot and reference value; the motion is the ground-truth
    target value minus that reference. Axes are sign-aligned with the
    ground-truth axis so the reference shares its sign convention.

    Args:
        means, quats: (N, 3), (N, 4)
        joint_vecs: (N, 11) predicted joint vectors
        labels: (N,) ground-truth part labels
        source: (N,) state each Gaussian was predicted from
        part_kinds: (K,) JointKind per part 1..K
        part_values: (S, K) ground-truth canonical joint values
        part_axes: (K, 3) ground-truth canonical axes
        target_state: State index to pose the Gaussians in

    Returns:
        (means', quats')
    """
    out_means = means.clone()
    out_quats = quats.clone()
    for k in range(part_kinds.shape[0]):
        kind = int(part_kinds[k])
        if kind == JointKind.STATIC:
            continue
        for s in torch.unique(source).tolist():
            members = (labels == k + 1) & (source == s)
            if not bool(members.any()):
                continue
            vec = joint_vecs[members]
            axis = tg.quat_normalize(vec[:, AXIS_CHANNELS].mean(0))
            sign = torch.where((axis * part_axes[k].to(axis.dtype)).sum() < 0, -1.0, 1.0).to(axis.dtype)
            axis = axis * sign
            pivot = vec[:, PIVOT_CHANNELS].mean(0)
            channel = ANGLE_CHANNEL if kind == JointKind.REVOLUTE else DISP_CHANNEL
            reference = sign * vec[:, channel].mean()
            delta = part_values[target_state, k].to(reference.dtype) - reference
            n = int(members.sum())
            moved, rotated = tg.articulate(
                means[members], quats[members], axis.expand(n, 3), pivot.expand(n, 3),
                delta.expand(n), torch.full((n,), kind == JointKind.REVOLUTE, device=means.device))
            out_means[members] = moved
            out_quats[members] = rotated
    return out_means, out_quats


@dataclass
class StageLoss:
    """Evaluates every component loss for a model output against a training batch."""
    weights: LossWeights = field(default_factory=LossWeights)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    rasterizer: GaussianRasterizer = field(default_factory=GaussianRasterizer)

    def components(self, output: ModelOutput, batch: TrainingBatch, stage: int) -> Dict[str, torch.Tensor]:
        cfg = self.training
        s, v = batch.n_states, batch.n_views
        h, w = batch.depth.shape[-2:]
        labels = batch.labels.reshape(s * v, h, w)
        fg = labels >= 0
        joints = output.joints
        comps = {
            'pose': loss_pose(output.cameras, batch.cameras.reshape(s * v, 9), cfg.huber_delta),
            'depth': loss_depth(output.depth, output.depth_conf, batch.depth.reshape(s * v, h, w), fg,
                                cfg.depth_alpha, cfg.depth_conf_floor),
            'joint': loss_joint(joints, batch.joints.reshape(s * v, h, w, -1), labels, cfg.huber_delta),
            'consist': loss_consist(joints.reshape(s, v, h, w, -1), batch.labels),
            'smooth': loss_smooth(joints, labels),
        }
        if stage == 2:
            comps['rgb'] = self.rgb_loss(output, batch)
        return comps

    def __call__(self, output: ModelOutput, batch: TrainingBatch, stage: int) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        comps = self.components(output, batch, stage)
        return combine_losses(comps, self.weights, stage), comps

    def gather_gaussians(self, output: ModelOutput, batch: TrainingBatch) -> Dict[str, torch.Tensor]:
        """Strided foreground Gaussians from every image, with labels and source states."""
        g = self.training.gaussian_stride
        s, v = batch.n_states, batch.n_views
        labels = batch.labels.reshape(s * v, *batch.labels.shape[-2:])[:, ::g, ::g]
        keep = labels >= 0
        attrs = output.gaussians[:, ::g, ::g][keep]
        source = torch.arange(s, device=labels.device).repeat_interleave(v)[:, None, None].expand_as(labels)[keep]
        return {
            'means': output.points[:, ::g, ::g][keep],
            'log_scales': attrs[:, SCALE_SLICE],
            'quats': tg.quat_normalize(attrs[:, ROT_SLICE]),
            'opacities': torch.sigmoid(attrs[:, OPACITY_INDEX]),
            'sh': attrs[:, SH_SLICE].reshape(-1, SH_COEFFS, 3),
            'joints': output.joints[:, ::g, ::g][keep],
            'labels': labels[keep],
            'source': source,
        }

    def rgb_loss(self, output: ModelOutput, batch: TrainingBatch) -> torch.Tensor:
        """Render all predicted Gaussians posed in each state and compare with that state's views."""
        res = self.training.render_res
        gauss = self.gather_gaussians(output, batch)
        if gauss['means'].shape[0] == 0:
            return _zero_like(output.gaussians)
        part_axes = part_axes_from_batch(batch)
        targets = F.interpolate(batch.flat_images(), size=(res, res), mode='area')
        targets = targets.permute(0, 2, 3, 1).reshape(batch.n_states, batch.n_views, res, res, 3)
        losses = []
        for t in range(batch.n_states):
            means, quats = articulate_predictions(
                gauss['means'], gauss['quats'], gauss['joints'], gauss['labels'], gauss['source'],
                batch.part_kinds, batch.part_values, part_axes, t)
            renders = [
                self.rasterizer.rasterize(means, gauss['log_scales'], quats, gauss['opacities'], gauss['sh'],
                                          batch.cameras[t, view], res)[0]
                for view in range(batch.n_views)
            ]
            losses.append(loss_rgb(torch.stack(renders), targets[t].to(means.dtype)))
        return torch.stack(losses).mean()


def part_axes_from_batch(batch: TrainingBatch) -> torch.Tensor:
    """(K, 3) ground-truth axis per part, read from the ground-truth joint maps."""
    axes = torch.zeros(batch.n_parts, 3, dtype=batch.joints.dtype)
    for k in range(batch.n_parts):
        mask = batch.labels == k + 1
        if bool(mask.any()):
            axes[k] = batch.joints[mask][0, AXIS_CHANNELS]
    return axes
