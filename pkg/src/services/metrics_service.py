"""
Evaluation metrics: chamfer distances, joint axis errors, joint matching,
PSNR / SSIM and per-split result tables.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.signal import correlate
from scipy.spatial import cKDTree

from src.models import JointKind, PartJoint
from src.utils import EvaluationError, StorageError, ValidationError, setup_logger

logger = setup_logger(__name__)

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PARALLEL_EPS = 1e-9
UNMATCHED_ANGLE = 90.0
KIND_MISMATCH_COST = 1e6

METRIC_COLUMNS = ['CD-w', 'CD-s', 'CD-m', 'Ang_m', 'Pos_m', 'PSNR', 'SSIM']


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """
    Symmetric unsquared chamfer distance:
    ½(mean_a min_b ‖a−b‖ + mean_b min_a ‖a−b‖).

    Raises:
        EvaluationError: If either set is empty
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EvaluationError("chamfer distance needs two non-empty point sets",
                              details={'n_a': len(a), 'n_b': len(b)})
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def line_distance(p: np.ndarray, a: np.ndarray, q: np.ndarray, b: np.ndarray) -> float:
    """Minimum distance between the infinite lines p + s·a and q + t·b (unit directions)."""
    cross = np.cross(a, b)
    norm = np.linalg.norm(cross)
    diff = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    if norm < PARALLEL_EPS:
        return float(np.linalg.norm(diff - (diff @ b) * b))
    return float(abs(diff @ cross) / norm)


def axis_errors(pred: PartJoint, gt: PartJoint) -> Tuple[float, Optional[float]]:
    """
    Angular and positional error of a matched joint pair.

    Returns:
        (Ang_m in degrees, Pos_m) where Pos_m is None unless gt is revolute
    """
    cos = float(np.clip(abs(pred.axis @ gt.axis), 0.0, 1.0))
    ang = math.degrees(math.acos(cos))
    if gt.kind != JointKind.REVOLUTE:
        return ang, None
    return ang, line_distance(pred.pivot, pred.axis, gt.pivot, gt.axis)


@dataclass
class JointMatch:
    """One-to-one assignment between predicted and ground-truth joints (0-based indices)."""
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    unmatched_pred: List[int] = field(default_factory=list)
    unmatched_gt: List[int] = field(default_factory=list)

    def gt_to_pred(self) -> Dict[int, int]:
        return {g: p for p, g in self.pairs}


def match_cost(pred: PartJoint, gt: PartJoint) -> float:
    if pred.kind != gt.kind:
        return KIND_MISMATCH_COST
    ang, pos = axis_errors(pred, gt)
    return ang / 180.0 + (pos or 0.0)


def match_joints(pred: Sequence[PartJoint], gt: Sequence[PartJoint]) -> JointMatch:
    """
    Optimal assignment minimizing Σ(Ang_m/180 + Pos_m) over same-kind pairs.

    Static entries never participate; pairs of different kinds are left unmatched.
    """
    pred_idx = [i for i, j in enumerate(pred) if j.is_movable]
    gt_idx = [i for i, j in enumerate(gt) if j.is_movable]
    match = JointMatch()
    if pred_idx and gt_idx:
        cost = np.array([[match_cost(pred[i], gt[j]) for j in gt_idx] for i in pred_idx])
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            if cost[r, c] < KIND_MISMATCH_COST:
                match.pairs.append((pred_idx[r], gt_idx[c]))
    matched_pred = {p for p, _ in match.pairs}
    matched_gt = {g for _, g in match.pairs}
    match.unmatched_pred = [i for i in pred_idx if i not in matched_pred]
    match.unmatched_gt = [i for i in gt_idx if i not in matched_gt]
    return match


def joint_errors(pred: Sequence[PartJoint], gt: Sequence[PartJoint], match: JointMatch,
                 radius: float) -> Tuple[Optional[float], Optional[float]]:
    """
    Mean Ang_m over movable GT joints and mean Pos_m over revolute GT joints.

    Unmatched GT joints count as Ang_m = 90° and Pos_m = radius.
    """
    angs, poss = [], []
    lookup = match.gt_to_pred()
    for g in (i for i, j in enumerate(gt) if j.is_movable):
        if g in lookup:
            ang, pos = axis_errors(pred[lookup[g]], gt[g])
        else:
            ang = UNMATCHED_ANGLE
            pos = radius if gt[g].kind == JointKind.REVOLUTE else None
        angs.append(ang)
        if pos is not None:
            poss.append(pos)
    return (float(np.mean(angs)) if angs else None, float(np.mean(poss)) if poss else None)


def cd_suite(pred_points: np.ndarray, pred_labels: np.ndarray, gt_points: Mapping[int, np.ndarray],
             gt_to_pred: Mapping[int, int]) -> Dict[str, Optional[float]]:
    """
    Whole, static and movable-part chamfer distances.

    Args:
        pred_points: (N, 3) predicted Gaussian means
        pred_labels: (N,) predicted part labels (0 static, k ≥ 1 part k)
        gt_points: label → (M, 3) ground-truth surface samples (0 static)
        gt_to_pred: GT part label → matched predicted part label

    Returns:
        {'CD-w', 'CD-s', 'CD-m'}; CD-m is None without movable GT parts.
        A GT part with no matched or empty predicted part is compared
        against the whole prediction.
    """
    pred_points = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    pred_labels = np.asarray(pred_labels)
    if len(pred_points) == 0:
        raise EvaluationError("prediction has no Gaussians")
    all_gt = np.concatenate([np.asarray(p).reshape(-1, 3) for p in gt_points.values()])

    def part_cd(gt_label: int, pred_label: Optional[int]) -> float:
        target = gt_points[gt_label]
        if pred_label is not None:
            mine = pred_points[pred_labels == pred_label]
            if len(mine):
                return chamfer(mine, target)
        return chamfer(pred_points, target)

    movable = [label for label in sorted(gt_points) if label > 0]
    return {
        'CD-w': chamfer(pred_points, all_gt),
        'CD-s': part_cd(0, 0) if 0 in gt_points else None,
        'CD-m': float(np.mean([part_cd(k, gt_to_pred.get(k)) for k in movable])) if movable else None,
    }


def _check_images(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("images must have identical dimensions",
                              details={'a': a.shape, 'b': b.shape})
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for images in [0, 1], capped at 100 dB."""
    a, b = _check_images(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> float:
    def filt(img):
        return correlate(img, window, mode='valid', method='direct')

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Mean SSIM over valid 11×11 Gaussian windows (σ = 1.5), averaged over
    channels for (H, W, C) images.
    """
    a, b = _check_images(a, b)
    if a.ndim not in (2, 3) or min(a.shape[:2]) < SSIM_WINDOW:
        raise ValidationError("SSIM needs (H, W[, C]) images of at least 11x11",
                              details={'shape': a.shape})
    window = gaussian_window()
    if a.ndim == 2:
        return _ssim_channel(a, b, window)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], window) for c in range(a.shape[-1])]))


def results_table(rows: Sequence[Mapping[str, object]]) -> pd.DataFrame:
    """
    Per-object rows followed by one mean row per split.

    Rows carry 'object', 'split' and any of METRIC_COLUMNS; missing
    metrics are NaN and skipped by the means.
    """
    frame = pd.DataFrame(list(rows), columns=['object', 'split'] + METRIC_COLUMNS)
    if frame.empty:
        return frame
    frame[METRIC_COLUMNS] = frame[METRIC_COLUMNS].astype(float)
    means = frame.groupby('split', sort=True)[METRIC_COLUMNS].mean().reset_index()
    means.insert(0, 'object', 'mean')
    return pd.concat([frame, means], ignore_index=True)


def write_results(path: Union[str, Path], rows: Sequence[Mapping[str, object]]) -> pd.DataFrame:
    table = results_table(rows)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, float_format='%.6f')
    except OSError as e:
        raise StorageError(f"cannot write results {path}: {e}", details={'path': str(path)}) from e
    logger.info(f"Wrote {len(rows)} evaluation rows to {path}")
    return table
