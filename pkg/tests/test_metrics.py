"""
Tests for the evaluation metrics against brute-force references.
"""
import math

import numpy as np
import pandas as pd
import pytest

from src.models import JointKind, PartJoint
from src.services.metrics_service import (
    PSNR_CAP,
    axis_errors,
    cd_suite,
    chamfer,
    gaussian_window,
    joint_errors,
    line_distance,
    match_joints,
    psnr,
    results_table,
    ssim,
    write_results,
)
from src.utils import EvaluationError, ValidationError


def brute_chamfer(a, b):
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def naive_ssim(x, y):
    """Loop-based mean SSIM over valid 11x11 windows of a single channel."""
    w = gaussian_window()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * px * px).sum() - mx * mx
            vy = (w * py * py).sum() - my * my
            cxy = (w * px * py).sum() - mx * my
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def revolute(axis, pivot):
    return PartJoint(JointKind.REVOLUTE, np.asarray(axis, dtype=np.float64), np.asarray(pivot, dtype=np.float64))


def prismatic(axis):
    return PartJoint(JointKind.PRISMATIC, np.asarray(axis, dtype=np.float64), np.zeros(3))


class TestChamfer:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(50, 3)), rng.normal(size=(70, 3)) + 0.3
        assert chamfer(a, b) == pytest.approx(brute_chamfer(a, b))

    def test_identical_sets_are_zero(self):
        a = np.random.default_rng(1).normal(size=(10, 3))
        assert chamfer(a, a) == 0.0

    def test_empty_set_raises(self):
        with pytest.raises(EvaluationError):
            chamfer(np.zeros((0, 3)), np.zeros((3, 3)))

    def test_cd_suite_splits_static_and_movable(self):
        pred = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
        labels = np.array([0, 0, 2])
        gt = {0: np.array([[0.0, 0, 0], [1.0, 0, 0]]), 1: np.array([[5.0, 0, 1]])}
        cds = cd_suite(pred, labels, gt, {1: 2})
        assert cds['CD-s'] == 0.0
        assert cds['CD-m'] == pytest.approx(1.0)
        assert cds['CD-w'] == pytest.approx(brute_chamfer(pred, np.concatenate(list(gt.values()))))

    def test_unmatched_part_falls_back_to_whole_prediction(self):
        pred = np.array([[0.0, 0, 0], [5.0, 0, 0]])
        gt = {0: np.array([[0.0, 0, 0]]), 1: np.array([[5.0, 0, 0]])}
        cds = cd_suite(pred, np.zeros(2, dtype=int), gt, {})
        assert cds['CD-m'] == pytest.approx(brute_chamfer(pred, gt[1]))

    def test_no_movable_parts(self):
        cds = cd_suite(np.zeros((1, 3)), np.zeros(1, dtype=int), {0: np.zeros((1, 3))}, {})
        assert cds['CD-m'] is None


class TestJointErrors:
    def test_line_distance_of_skew_lines(self):
        d = line_distance(np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 0, 2.0]), np.array([0, 1.0, 0]))
        assert d == pytest.approx(2.0)

    def test_parallel_lines_use_point_to_line_distance(self):
        d = line_distance(np.array([0, 3.0, 0]), np.array([0, 0, 1.0]), np.zeros(3), np.array([0, 0, -1.0]))
        assert d == pytest.approx(3.0)

    def test_reference_examples(self):
        # axis_pred=(0,0,1), pivot (0,0,0) vs axis_gt=(0,0,1), pivot (0.1,0,0.5): 0 deg, 0.1
        ang, pos = axis_errors(revolute([0, 0, 1], [0, 0, 0]), revolute([0, 0, 1], [0.1, 0, 0.5]))
        assert ang == pytest.approx(0.0)
        assert pos == pytest.approx(0.1)
        ang, pos = axis_errors(revolute([1, 0, 0], [0, 0, 0]), revolute([0, 1, 0], [0, 0, 0.2]))
        assert ang == pytest.approx(90.0)
        assert pos == pytest.approx(0.2)

    def test_axis_sign_does_not_matter(self):
        ang, _ = axis_errors(revolute([0, 0, -1], [0, 0, 0]), revolute([0, 0, 1], [0, 0, 0]))
        assert ang == pytest.approx(0.0)

    def test_prismatic_has_no_position_error(self):
        ang, pos = axis_errors(prismatic([1, 0, 0]), prismatic([math.cos(0.1), math.sin(0.1), 0]))
        assert ang == pytest.approx(math.degrees(0.1))
        assert pos is None

    def test_matching_pairs_same_kind_by_cost(self):
        pred = [prismatic([1, 0, 0]), revolute([0, 0, 1], [1, 0, 0]), revolute([0, 0, 1], [0, 0, 0])]
        gt = [revolute([0, 0, 1], [0.02, 0, 0]), prismatic([0, 1, 0])]
        match = match_joints(pred, gt)
        assert sorted(match.pairs) == [(0, 1), (2, 0)]
        assert match.unmatched_pred == [1]
        assert match.unmatched_gt == []

    def test_kind_mismatch_stays_unmatched(self):
        match = match_joints([prismatic([0, 0, 1])], [revolute([0, 0, 1], [0, 0, 0])])
        assert match.pairs == []
        assert match.unmatched_gt == [0]

    def test_unmatched_gt_joints_are_penalized(self):
        gt = [revolute([0, 0, 1], [0, 0, 0]), revolute([1, 0, 0], [0, 1, 0])]
        pred = [revolute([0, 0, 1], [0, 0, 0])]
        ang, pos = joint_errors(pred, gt, match_joints(pred, gt), radius=0.8)
        assert ang == pytest.approx(45.0)
        assert pos == pytest.approx(0.4)


class TestImageMetrics:
    def test_psnr_reference(self):
        a = np.zeros((4, 4, 3))
        b = np.full((4, 4, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0)

    def test_psnr_identical_is_capped(self):
        a = np.random.default_rng(0).uniform(size=(4, 4, 3))
        assert psnr(a, a) == PSNR_CAP

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValidationError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_ssim_identical_is_one(self):
        a = np.random.default_rng(1).uniform(size=(16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0)

    def test_ssim_matches_naive_reference(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(14, 13))
        y = np.clip(x + rng.normal(scale=0.1, size=x.shape), 0, 1)
        assert ssim(x, y) == pytest.approx(naive_ssim(x, y), rel=1e-9)

    def test_ssim_averages_channels(self):
        rng = np.random.default_rng(3)
        x, y = rng.uniform(size=(12, 12, 2)), rng.uniform(size=(12, 12, 2))
        expected = np.mean([naive_ssim(x[..., c], y[..., c]) for c in range(2)])
        assert ssim(x, y) == pytest.approx(expected, rel=1e-9)

    def test_ssim_small_image_raises(self):
        with pytest.raises(ValidationError):
            ssim(np.zeros((10, 10)), np.zeros((10, 10)))


class TestResultsTable:
    def _rows(self):
        return [
            {'object': 'a', 'split': 'single', 'CD-w': 1.0, 'CD-s': 1.0, 'CD-m': 2.0, 'Ang_m': 10.0, 'Pos_m': 0.1,
             'PSNR': 20.0, 'SSIM': 0.8},
            {'object': 'b', 'split': 'single', 'CD-w': 3.0, 'CD-s': 1.0, 'CD-m': 4.0, 'Ang_m': 20.0, 'Pos_m': None,
             'PSNR': 30.0, 'SSIM': 0.9},
            {'object': 'c', 'split': 'multi', 'CD-w': 2.0, 'CD-s': 2.0, 'CD-m': 2.0, 'Ang_m': 5.0, 'Pos_m': 0.3,
             'PSNR': 25.0, 'SSIM': 0.7},
        ]

    def test_split_means_skip_missing_values(self):
        table = results_table(self._rows())
        single = table[(table['object'] == 'mean') & (table['split'] == 'single')].iloc[0]
        assert single['CD-w'] == pytest.approx(2.0)
        assert single['Pos_m'] == pytest.approx(0.1)
        assert single['PSNR'] == pytest.approx(25.0)
        assert len(table) == 5

    def test_write_results_csv(self, tmp_path):
        out = tmp_path / 'eval' / 'metrics.csv'
        write_results(out, self._rows())
        frame = pd.read_csv(out)
        assert list(frame.columns) == ['object', 'split', 'CD-w', 'CD-s', 'CD-m', 'Ang_m', 'Pos_m', 'PSNR', 'SSIM']
        assert frame['object'].tolist()[-2:] == ['mean', 'mean']

    def test_empty_rows(self):
        assert results_table([]).empty
