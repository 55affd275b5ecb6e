import numpy as np
import pytest
import torch

from mitoadapt import objectives
from mitoadapt.exceptions import ShapeError

from oracles import iou_counts_bruteforce


def _rand(shape, seed, lo=0.05, hi=0.95):
    gen = torch.Generator().manual_seed(seed)
    return lo + (hi - lo) * torch.rand(shape, generator=gen, dtype=torch.float64)


class TestCombinedLoss:
    def test_alpha_zero_equals_bce(self):
        seg = _rand((1, 1, 8, 8), 0)
        rec = _rand((1, 1, 8, 8), 1)
        image = _rand((1, 1, 8, 8), 2)
        label = (torch.rand((1, 1, 8, 8), generator=torch.Generator().manual_seed(3)) > 0.5).double()
        combined = objectives.combined_loss(seg, rec, label, image, objectives.CombinedLossConfig(0.0))
        bce = objectives.bce_loss(seg, label)
        assert abs(combined.item() - bce.item()) <= 1e-12 * abs(bce.item())

    def test_alpha_one_equals_mse_independent_of_labels(self):
        seg = _rand((1, 1, 8, 8), 4)
        rec = _rand((1, 1, 8, 8), 5)
        image = _rand((1, 1, 8, 8), 6)
        label_a = torch.zeros_like(seg)
        label_b = torch.ones_like(seg)
        cfg = objectives.CombinedLossConfig(1.0)
        mse = objectives.mse_loss(rec, image)
        for label in (label_a, label_b, None):
            combined = objectives.combined_loss(seg, rec, label, image, cfg)
            assert abs(combined.item() - mse.item()) <= 1e-12 * abs(mse.item())

    def test_unlabeled_sample_hand_value(self):
        # rec = image + 0.1 everywhere, alpha = 0.98 -> 0.98 * 0.01.
        image = torch.full((1, 1, 4, 4), 0.3, dtype=torch.float64)
        rec = image + 0.1
        seg = torch.full_like(image, 0.5)
        loss = objectives.combined_loss(
            seg, rec, None, image, objectives.CombinedLossConfig(0.98)
        )
        assert loss.item() == pytest.approx(0.98 * 0.01, rel=1e-12)

    def test_unlabeled_is_exactly_alpha_mse(self):
        rec = _rand((2, 1, 6, 6), 7)
        image = _rand((2, 1, 6, 6), 8)
        seg = _rand((2, 1, 6, 6), 9)
        for alpha in (0.0, 0.25, 0.98, 1.0):
            cfg = objectives.CombinedLossConfig(alpha)
            loss = objectives.combined_loss(seg, rec, None, image, cfg)
            assert loss.item() == (alpha * objectives.mse_loss(rec, image)).item()

    def test_linear_in_alpha(self):
        seg = _rand((1, 1, 8, 8), 10)
        rec = _rand((1, 1, 8, 8), 11)
        image = _rand((1, 1, 8, 8), 12)
        label = (torch.rand((1, 1, 8, 8), generator=torch.Generator().manual_seed(13)) > 0.5).double()

        def at(alpha):
            return objectives.combined_loss(
                seg, rec, label, image, objectives.CombinedLossConfig(alpha)
            ).item()

        lo, mid, hi = at(0.0), at(0.5), at(1.0)
        assert mid == pytest.approx((lo + hi) / 2, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            objectives.combined_loss(
                torch.rand(1, 1, 4, 4), torch.rand(1, 1, 4, 4), None,
                torch.rand(1, 1, 8, 8), objectives.CombinedLossConfig(0.5),
            )

    def test_alpha_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            objectives.CombinedLossConfig(1.5)


class TestIouF:
    def test_identical_masks(self):
        mask = np.zeros((8, 8))
        mask[2:5, 2:5] = 1
        report = objectives.iou_f(mask, mask)
        assert report.iou_f == 1.0
        assert report.fp == report.fn == 0 and report.tp == 9

    def test_disjoint_masks(self):
        a = np.zeros((8, 8))
        b = np.zeros((8, 8))
        a[:2] = 1
        b[4:] = 1
        assert objectives.iou_f(a, b).iou_f == 0.0

    def test_overlapping_blocks_half(self):
        pred = np.zeros((8, 8))
        gt = np.zeros((8, 8))
        pred[0:3, 0:3] = 1
        gt[0:3, 1:4] = 1  # shares a 3x2 region: 6 / 12
        report = objectives.iou_f(pred, gt)
        assert report.tp == 6 and report.fp == 3 and report.fn == 3
        assert report.iou_f == 0.5

    def test_empty_union_defined_as_one(self):
        report = objectives.iou_f(np.zeros((4, 4)), np.zeros((4, 4)))
        assert report.iou_f == 1.0 and report.tp == 0

    def test_symmetric_under_swap(self):
        rng = np.random.default_rng(0)
        pred = (rng.random((8, 8)) > 0.5).astype(float)
        gt = (rng.random((8, 8)) > 0.5).astype(float)
        fwd = objectives.iou_f(pred, gt)
        bwd = objectives.iou_f(gt, pred)
        assert fwd.iou_f == bwd.iou_f
        assert (fwd.fp, fwd.fn) == (bwd.fn, bwd.fp)

    def test_adding_correct_pixel_never_decreases(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pred = (rng.random((6, 6)) > 0.5).astype(float)
            gt = (rng.random((6, 6)) > 0.4).astype(float)
            missing = np.argwhere((gt == 1) & (pred == 0))
            if missing.size == 0:
                continue
            r, c = missing[0]
            before = objectives.iou_f(pred, gt).iou_f
            pred[r, c] = 1
            assert objectives.iou_f(pred, gt).iou_f >= before

    def test_matches_bruteforce_counting(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            pred = rng.random((8, 8))
            gt = (rng.random((8, 8)) > 0.5).astype(float)
            report = objectives.iou_f(pred, gt)
            tp, fp, fn, iou = iou_counts_bruteforce(pred, gt)
            assert (report.tp, report.fp, report.fn) == (tp, fp, fn)
            assert report.iou_f == iou

    def test_probability_threshold(self):
        pred = np.array([[0.4, 0.6], [0.5, 0.49]])
        gt = np.array([[0, 1], [1, 0]])
        report = objectives.iou_f(pred, gt, threshold=0.5)
        assert report.tp == 2 and report.fp == 0 and report.fn == 0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            objectives.iou_f(np.zeros((4, 4)), np.zeros((5, 4)))
