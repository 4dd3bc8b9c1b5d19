"""
Tests for the training objectives: reference values on small inputs,
gradients in float64 and the ground-truth zero properties.
"""
import math

import numpy as np
import pytest
import torch

from config import LossWeights
from src.models import JointKind
from src.services.loss_functions import (
    articulate_predictions,
    combine_losses,
    d_perp,
    gradient_proxy,
    huber,
    loss_consist,
    loss_depth,
    loss_joint,
    loss_pose,
    loss_rgb,
    loss_smooth,
    safe_norm,
)
from src.utils import ValidationError


def gt_joint_maps(labels):
    """Piecewise-constant (…, H, W, 11) maps: static one-hot on 0/-1, a revolute line on 1, prismatic on 2."""
    out = torch.zeros(labels.shape + (11,), dtype=torch.float64)
    out[..., 0] = 1.0
    rev = labels == 1
    out[rev] = torch.tensor([0, 1, 0, 0, 0, 1, 0.2, 0.1, 0.0, 0.7, 0.0], dtype=torch.float64)
    pri = labels == 2
    out[pri] = torch.tensor([0, 0, 1, 1, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.3], dtype=torch.float64)
    return out


def two_state_labels():
    labels = torch.full((2, 2, 4, 5), -1, dtype=torch.int64)
    labels[..., 1:3, 0:2] = 0
    labels[..., 1:3, 2:4] = 1
    labels[..., 3, :] = 2
    return labels


class TestHelpers:
    def test_huber_quadratic_then_linear(self):
        x = torch.tensor([0.5, -2.0])
        torch.testing.assert_close(huber(x, 1.0), torch.tensor([0.125, 1.5]))

    def test_safe_norm_is_exact_and_differentiable_at_zero(self):
        v = torch.zeros(3, requires_grad=True)
        n = safe_norm(v)
        assert float(n) == pytest.approx(0.0, abs=1e-12)
        n.backward()
        assert torch.all(torch.isfinite(v.grad))
        assert float(safe_norm(torch.tensor([3.0, 4.0]))) == pytest.approx(5.0)

    def test_d_perp_ignores_motion_along_axis(self):
        a = torch.tensor([0.0, 0.0, 1.0])
        p_star = torch.tensor([1.0, 0.0, 0.0])
        assert float(d_perp(torch.tensor([1.0, 2.0, 5.0]), p_star, a)) == pytest.approx(2.0)


class TestPoseLoss:
    def test_zero_for_exact_prediction(self):
        cams = torch.tensor([[0.1, 0.2, 0.3, 1.0, 0.0, 0.0, 0.0, 0.9, 0.9]])
        assert float(loss_pose(cams, cams)) == 0.0

    def test_quaternion_sign_is_ignored(self):
        gt = torch.tensor([[0.0, 0.0, 0.0, 0.6, 0.8, 0.0, 0.0, 0.9, 0.9]])
        pred = gt.clone()
        pred[0, 3:7] *= -1
        assert float(loss_pose(pred, gt)) == pytest.approx(0.0)

    def test_matches_componentwise_huber(self):
        gt = torch.zeros(2, 9, dtype=torch.float64)
        gt[:, 3] = 1.0
        pred = gt.clone()
        pred[0, 0] = 0.5
        pred[1, 7] = 3.0
        expected = (0.5 * 0.25 + (3.0 - 0.5)) / 2
        assert float(loss_pose(pred, gt)) == pytest.approx(expected)


class TestDepthLoss:
    def test_reference_value(self):
        depth = torch.tensor([[1.0, 2.0]], dtype=torch.float64)
        gt = torch.tensor([[1.5, 0.0]], dtype=torch.float64)
        conf = torch.tensor([[2.0, 5.0]], dtype=torch.float64)
        fg = torch.tensor([[True, False]])
        expected = 2.0 * 0.5 - 0.2 * math.log(2.0)
        assert float(loss_depth(depth, conf, gt, fg)) == pytest.approx(expected)

    def test_confidence_floor(self):
        depth = torch.ones(1, 1, dtype=torch.float64)
        conf = torch.zeros(1, 1, dtype=torch.float64)
        value = loss_depth(depth, conf, depth, torch.ones(1, 1, dtype=torch.bool), conf_floor=1e-3)
        assert float(value) == pytest.approx(-0.2 * math.log(1e-3))

    def test_empty_foreground_is_zero(self):
        depth = torch.ones(2, 2, requires_grad=True)
        value = loss_depth(depth, torch.ones(2, 2), depth.detach(), torch.zeros(2, 2, dtype=torch.bool))
        assert float(value) == 0.0
        value.backward()

    def test_gradcheck(self):
        torch.manual_seed(0)
        depth = torch.rand(3, 4, dtype=torch.float64, requires_grad=True)
        conf = (torch.rand(3, 4, dtype=torch.float64) + 0.5).requires_grad_()
        gt = torch.rand(3, 4, dtype=torch.float64) + 2.0
        fg = torch.rand(3, 4) > 0.3
        assert torch.autograd.gradcheck(lambda d, c: loss_depth(d, c, gt, fg), (depth, conf))


class TestJointLoss:
    def test_reference_value_on_two_pixels(self):
        labels = torch.tensor([[0, 1, -1]])
        gt = gt_joint_maps(labels)
        pred = gt.clone()
        pred[0, 1, 6:9] += torch.tensor([0.4, 0.0, 0.0], dtype=torch.float64)
        pred[0, 1, 9] += 0.5
        pred[0, 2] = 100.0
        ce = math.log(2 + math.e) - 1.0
        expected = (ce + ce + 0.0 + 0.4 + 0.125) / 2
        assert float(loss_joint(pred, gt, labels)) == pytest.approx(expected)

    def test_pivot_error_along_axis_is_free(self):
        labels = torch.tensor([[1]])
        gt = gt_joint_maps(labels)
        pred = gt.clone()
        pred[0, 0, 6:9] += 3.0 * gt[0, 0, 3:6]
        base = loss_joint(gt, gt, labels)
        assert float(loss_joint(pred, gt, labels)) == pytest.approx(float(base))

    def test_no_foreground_is_zero(self):
        labels = torch.full((2, 2), -1)
        assert float(loss_joint(torch.randn(2, 2, 11), gt_joint_maps(labels).float(), labels)) == 0.0

    def test_gradcheck(self):
        torch.manual_seed(1)
        labels = two_state_labels()[0, 0]
        gt = gt_joint_maps(labels)
        pred = (gt + 0.1 * torch.randn_like(gt)).requires_grad_()
        assert torch.autograd.gradcheck(lambda p: loss_joint(p, gt, labels), (pred,))


class TestConsistencyAndSmoothness:
    def test_ground_truth_maps_are_consistent_and_smooth(self):
        labels = two_state_labels()
        gt = gt_joint_maps(labels)
        assert float(loss_consist(gt, labels)) == pytest.approx(0.0, abs=1e-9)
        assert float(loss_smooth(gt, labels)) == 0.0

    def test_consist_measures_invariant_drift(self):
        labels = two_state_labels()
        pred = gt_joint_maps(labels)
        pred[1][labels[1] == 1, 6] += 0.3
        # angle changes between states are allowed
        pred[1][labels[1] == 1, 9] += 1.0
        assert float(loss_consist(pred, labels)) == pytest.approx(0.3 / 2)

    def test_consist_skips_parts_missing_in_one_state(self):
        labels = two_state_labels()
        labels[1][labels[1] == 2] = 0
        pred = gt_joint_maps(labels)
        pred[0][labels[0] == 2, 3:6] = 0.0
        assert float(loss_consist(pred, labels)) == pytest.approx(0.0, abs=1e-9)

    def test_smooth_counts_same_label_pairs_only(self):
        labels = torch.tensor([[0, 0, 1]])
        pred = torch.zeros(1, 3, 11, dtype=torch.float64)
        pred[0, 1, 0] = 2.0
        pred[0, 2, 0] = 7.0
        assert float(loss_smooth(pred, labels)) == pytest.approx(2.0)

    def test_gradcheck(self):
        torch.manual_seed(2)
        labels = two_state_labels()
        pred = (gt_joint_maps(labels) + 0.1 * torch.randn(2, 2, 4, 5, 11, dtype=torch.float64)).requires_grad_()
        assert torch.autograd.gradcheck(lambda p: loss_consist(p, labels), (pred,))
        assert torch.autograd.gradcheck(lambda p: loss_smooth(p, labels), (pred,))


class TestRgbLoss:
    def test_identical_images_give_zero(self):
        img = torch.rand(8, 8, 3)
        assert float(loss_rgb(img, img)) == 0.0
        assert float(gradient_proxy(img, img)) == 0.0

    def test_constant_offset_is_pure_mse(self):
        img = torch.rand(2, 8, 8, 3, dtype=torch.float64)
        assert float(loss_rgb(img + 0.1, img)) == pytest.approx(0.01)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValidationError):
            loss_rgb(torch.zeros(4, 4, 3), torch.zeros(4, 5, 3))

    def test_gradcheck(self):
        torch.manual_seed(3)
        render = torch.rand(8, 8, 3, dtype=torch.float64, requires_grad=True)
        gt = torch.rand(8, 8, 3, dtype=torch.float64)
        assert torch.autograd.gradcheck(lambda r: loss_rgb(r, gt), (render,))


class TestCombineLosses:
    def setup_method(self):
        self.components = {name: torch.tensor(1.0) for name in ('pose', 'depth', 'joint', 'consist', 'smooth', 'rgb')}

    def test_stage_one_ignores_rgb(self):
        total = combine_losses(self.components, LossWeights(), 1)
        assert float(total) == pytest.approx(3.0 + 3.0 + 5.0 + 0.5 + 0.1)

    def test_stage_two_adds_rgb(self):
        total = combine_losses(self.components, LossWeights(rgb=2.0), 2)
        assert float(total) == pytest.approx(3.0 + 3.0 + 5.0 + 0.5 + 0.1 + 2.0)

    def test_unknown_stage_raises(self):
        with pytest.raises(ValidationError):
            combine_losses(self.components, LossWeights(), 3)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(joint=-1.0)


def naive_huber(x, delta=1.0):
    return 0.5 * x * x if abs(x) <= delta else delta * (abs(x) - 0.5 * delta)


def naive_joint(pred, gt, labels):
    total, count = 0.0, 0
    for i in range(labels.shape[0]):
        for j in range(labels.shape[1]):
            if labels[i, j] < 0:
                continue
            p, g = pred[i, j], gt[i, j]
            kind = int(np.argmax(g[:3]))
            total += math.log(sum(math.exp(v) for v in p[:3])) - p[kind]
            if kind != 0:
                total += sum(abs(p[3 + c] - g[3 + c]) for c in range(3))
                diff = p[6:9] - g[6:9]
                along = sum(diff[c] * g[3 + c] for c in range(3))
                total += math.sqrt(sum((diff[c] - along * g[3 + c]) ** 2 for c in range(3)))
            if kind == 1:
                total += naive_huber(p[9] - g[9])
            if kind == 2:
                total += naive_huber(p[10] - g[10])
            count += 1
    return total / count


def naive_consist(pred, labels):
    terms = []
    for part in sorted(set(labels[labels > 0].tolist())):
        means = []
        for s in range(2):
            rows = [pred[s, v, i, j, :9] for v in range(labels.shape[1])
                    for i in range(labels.shape[2]) for j in range(labels.shape[3]) if labels[s, v, i, j] == part]
            means.append(sum(rows) / len(rows) if rows else None)
        if means[0] is not None and means[1] is not None:
            terms.append(math.sqrt(sum((means[0][c] - means[1][c]) ** 2 for c in range(9))))
    return sum(terms) / len(terms)


def naive_smooth(pred, labels):
    total, pairs = 0.0, 0
    h, w = labels.shape
    for i in range(h):
        for j in range(w):
            for di, dj in ((0, 1), (1, 0)):
                ni, nj = i + di, j + dj
                if ni >= h or nj >= w or labels[i, j] < 0 or labels[i, j] != labels[ni, nj]:
                    continue
                total += sum(abs(pred[ni, nj, c] - pred[i, j, c]) for c in range(pred.shape[-1]))
                pairs += 1
    return total / pairs


def random_gt_map(rng, shape):
    gt = np.zeros(shape + (11,))
    kinds = rng.integers(0, 3, size=shape)
    gt[..., :3] = -10.0
    np.put_along_axis(gt[..., :3], kinds[..., None], 10.0, axis=-1)
    axes = rng.normal(size=shape + (3,))
    gt[..., 3:6] = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
    gt[..., 6:9] = rng.normal(size=shape + (3,))
    gt[..., 9:11] = rng.uniform(-2, 2, size=shape + (2,))
    return gt


class TestNaiveReferences:
    def test_joint_loss(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            labels = rng.integers(-1, 3, size=(8, 8))
            labels[0, 0] = 0
            gt = random_gt_map(rng, (8, 8))
            pred = gt + rng.normal(scale=1.0, size=gt.shape)
            got = loss_joint(torch.from_numpy(pred), torch.from_numpy(gt), torch.from_numpy(labels))
            assert float(got) == pytest.approx(naive_joint(pred, gt, labels), rel=0, abs=1e-10)

    def test_consistency_loss(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            labels = rng.integers(-1, 4, size=(2, 2, 8, 8))
            labels[:, 0, 0, 0] = 1
            pred = rng.normal(size=(2, 2, 8, 8, 11))
            got = loss_consist(torch.from_numpy(pred), torch.from_numpy(labels))
            assert float(got) == pytest.approx(naive_consist(pred, labels), rel=0, abs=1e-10)

    def test_smoothness_loss(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            labels = rng.integers(-1, 3, size=(8, 8))
            labels[0, :2] = 0
            pred = rng.normal(size=(8, 8, 11))
            got = loss_smooth(torch.from_numpy(pred), torch.from_numpy(labels))
            assert float(got) == pytest.approx(naive_smooth(pred, labels), rel=0, abs=1e-10)


class TestStageTwoArticulation:
    def test_gradient_reaches_the_angle_channel(self):
        torch.manual_seed(4)
        n = 12
        labels = torch.tensor([0, 1, 1, 1, 2, 2, 0, 1, 1, 2, 2, 2])
        source = torch.tensor([0] * 6 + [1] * 6)
        part_kinds = torch.tensor([int(JointKind.REVOLUTE), int(JointKind.PRISMATIC)])
        part_axes = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], dtype=torch.float64)
        part_values = torch.tensor([[0.2, 0.1], [0.9, 0.3]], dtype=torch.float64)
        vecs = torch.zeros(n, 11, dtype=torch.float64)
        vecs[:, 3:6] = part_axes[(labels - 1).clamp(min=0)] + 0.05 * torch.randn(n, 3, dtype=torch.float64)
        vecs[:, 6:9] = torch.randn(n, 3, dtype=torch.float64)
        vecs[:, 9:11] = torch.rand(n, 2, dtype=torch.float64)
        vecs.requires_grad_()
        means = torch.randn(n, 3, dtype=torch.float64)
        quats = torch.nn.functional.normalize(torch.randn(n, 4, dtype=torch.float64), dim=-1)

        def posed(v):
            return articulate_predictions(means, quats, v, labels, source, part_kinds, part_values, part_axes, 1)

        assert torch.autograd.gradcheck(posed, (vecs,))
        moved, _ = posed(vecs)
        moved.sum().backward()
        assert vecs.grad[labels == 1, 9].abs().min() > 0
