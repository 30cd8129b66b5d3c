"""Disparity error metrics and the alignment score."""

import numpy as np
import pytest

from evstereo.imageops import DisparityMap
from evstereo.metrics import (
    alignment_score,
    bad_pixel_ratio,
    end_point_error,
    evaluate,
)


def dmap(arr, **kwargs):
    return DisparityMap(np.asarray(arr, dtype=np.float64), **kwargs)


class TestEndPointError:
    def test_identical_maps(self):
        gt = dmap(np.full((4, 4), 2.0))
        assert end_point_error(gt, gt) == 0.0

    def test_constant_offset(self):
        gt = dmap(np.full((4, 4), 2.0))
        pred = dmap(np.full((4, 4), 3.5))
        assert end_point_error(pred, gt) == 1.5

    def test_half_off_by_two(self):
        gt = dmap(np.zeros((4, 4)))
        data = np.zeros((4, 4))
        data[:2] = 2.0
        assert end_point_error(dmap(data), gt) == 1.0

    def test_shift_of_both_maps_cancels(self):
        rng = np.random.default_rng(0)
        pred = rng.uniform(0, 5, (6, 6))
        gt = rng.uniform(0, 5, (6, 6))
        a = end_point_error(dmap(pred), dmap(gt))
        b = end_point_error(dmap(pred + 3.0), dmap(gt + 3.0))
        assert a == pytest.approx(b, abs=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(0, 5, (5, 5))
        gt = rng.uniform(0, 5, (5, 5))
        perm = rng.permutation(25)
        a = end_point_error(dmap(pred), dmap(gt))
        b = end_point_error(
            dmap(pred.ravel()[perm].reshape(5, 5)),
            dmap(gt.ravel()[perm].reshape(5, 5)),
        )
        assert a == b


class TestBadPixelRatio:
    def test_threshold_is_strict(self):
        gt = dmap(np.zeros((4, 4)))
        pred = dmap(np.full((4, 4), 1.5))
        assert bad_pixel_ratio(pred, gt, 1.0) == 1.0
        assert bad_pixel_ratio(pred, gt, 1.5) == 0.0
        assert bad_pixel_ratio(pred, gt, 3.0) == 0.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        pred = dmap(rng.uniform(0, 8, (8, 8)))
        gt = dmap(rng.uniform(0, 8, (8, 8)))
        ratios = [bad_pixel_ratio(pred, gt, t) for t in (0.5, 1.0, 2.0, 4.0)]
        assert all(b <= a for a, b in zip(ratios, ratios[1:]))

    def test_threshold_validation(self):
        gt = dmap(np.zeros((4, 4)))
        with pytest.raises(ValueError, match="threshold"):
            bad_pixel_ratio(gt, gt, 0.0)


class TestEvaluate:
    def test_fields_on_mixed_errors(self):
        gt = dmap(np.zeros((2, 4)))
        pred = dmap([[0.0, 0.5, 2.0, 2.0], [4.0, 4.0, 6.0, 0.0]])
        res = evaluate(pred, gt)
        assert res.epe == pytest.approx(18.5 / 8)
        assert res.bad1 == pytest.approx(5 / 8)
        assert res.bad3 == pytest.approx(3 / 8)
        assert res.bad5 == pytest.approx(1 / 8)
        assert res.valid_count == 8

    def test_mask_excludes_pixels(self):
        gt = dmap(np.zeros((4, 4)))
        data = np.zeros((4, 4))
        data[:, 0] = 5.0
        pred = dmap(data)
        mask = np.zeros((4, 4), dtype=bool)
        mask[:, 0] = True
        assert evaluate(pred, gt, mask).epe == 0.0
        assert evaluate(pred, gt, mask).valid_count == 12
        assert evaluate(pred, gt).epe > 0.0

    def test_gt_validity_excludes_pixels(self):
        validity = np.zeros((4, 4), dtype=bool)
        validity[2:] = True
        gt = dmap(np.zeros((4, 4)), validity=validity)
        data = np.zeros((4, 4))
        data[:2] = 9.0
        assert evaluate(dmap(data), gt).epe == 0.0
        assert evaluate(dmap(data), gt).valid_count == 8

    def test_empty_pool_rejected(self):
        gt = dmap(np.zeros((4, 4)), validity=np.zeros((4, 4), dtype=bool))
        with pytest.raises(ValueError, match="valid"):
            evaluate(gt, gt)
        full = dmap(np.zeros((4, 4)))
        with pytest.raises(ValueError, match="valid"):
            evaluate(full, full, np.ones((4, 4), dtype=bool))

    def test_shape_validation(self):
        a = dmap(np.zeros((4, 4)))
        b = dmap(np.zeros((4, 5)))
        with pytest.raises(ValueError, match="shape"):
            evaluate(a, b)
        with pytest.raises(ValueError, match="mask"):
            evaluate(a, a, np.zeros((3, 3), dtype=bool))


class TestAlignmentScore:
    def test_matches_direct_formula(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0, 1, (9, 9))
        b = rng.uniform(0, 1, (9, 9))
        da, db = a - a.mean(), b - b.mean()
        want = (da * db).sum() / np.sqrt((da * da).sum() * (db * db).sum())
        assert alignment_score(a, b) == pytest.approx(want, abs=1e-12)

    def test_affine_copy_scores_one(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, (7, 7))
        assert alignment_score(a, 2.0 * a + 1.0) == pytest.approx(1.0, abs=1e-12)
        assert alignment_score(a, -a) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_input_scores_zero(self):
        a = np.full((5, 5), 0.3)
        b = np.random.default_rng(7).uniform(0, 1, (5, 5))
        assert alignment_score(a, b) == 0.0

    def test_mask_changes_pool(self):
        a = np.zeros((4, 4))
        a[:, 0] = 1.0
        b = a.copy()
        b[0, 3] = 5.0  # disagreement only in the masked region
        mask = np.zeros((4, 4), dtype=bool)
        mask[:, 2:] = True
        assert alignment_score(a, b, mask) == pytest.approx(1.0, abs=1e-12)
        assert alignment_score(a, b) < 1.0

    def test_validation(self):
        with pytest.raises(ValueError, match="shape"):
            alignment_score(np.zeros((3, 3)), np.zeros((3, 4)))
        with pytest.raises(ValueError, match="pixels"):
            alignment_score(np.zeros((3, 3)), np.zeros((3, 3)),
                            np.ones((3, 3), dtype=bool))
