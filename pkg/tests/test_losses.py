"""The self-supervised objective: windowed gradient-structure loss, edge-aware
smoothness, the two cross-view consistency terms, and the shift landscape."""

import numpy as np
import pytest

from evstereo.imageops import DisparityMap, GradientField, Image, gradient
from evstereo.losses import (
    LANDSCAPE_KINDS,
    LossWeights,
    cross_consistency_loss,
    gradient_structure_loss,
    internal_disparity_loss,
    loss_landscape,
    resolve_ssim_constants,
    smoothness_loss,
    total_loss,
    warp_objective,
    weighted_total,
)

PAPER_WEIGHTS = LossWeights(lambda_gd=1.0, lambda_sm=0.1,
                            lambda_cc=0.025, lambda_itn=0.005)


def rand_field(seed, shape=(9, 9)):
    rng = np.random.default_rng(seed)
    return GradientField(rng.standard_normal(shape), rng.standard_normal(shape))


# gradient_structure_loss

def test_identical_fields_score_perfectly():
    g = rand_field(0)
    val, raster = gradient_structure_loss(g, g)
    assert val == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(raster, 0.0, atol=1e-12)


def test_two_constant_fields_are_stabilized_to_zero_loss():
    z = GradientField(np.zeros((9, 9)), np.zeros((9, 9)))
    val, _ = gradient_structure_loss(z, z)
    assert val == pytest.approx(0.0, abs=1e-12)


def single_window_oracle(gl, gr, rho, c1, c2):
    """Straight-line evaluation of the windowed structural score on one full
    patch: channel scores from patch means, variances, cross-covariance."""
    scores = []
    for a, b in ((gl.gx, rho * gr.gx), (gl.gy, rho * gr.gy)):
        mu_a, mu_b = a.mean(), b.mean()
        va, vb = a.var(), b.var()
        cab = (a * b).mean() - mu_a * mu_b
        luminance = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
        structure = (2 * cab + c2) / (va + vb + c2)
        scores.append(luminance * structure)
    return 1.0 - 0.5 * (scores[0] + scores[1])


def test_single_window_matches_bruteforce_oracle():
    gl, gr = rand_field(1), rand_field(2)
    w = LossWeights(window=9, c1=1e-4, c2=9e-4)
    val, raster = gradient_structure_loss(gl, gr, w=w)
    # a 9x9 field under a 9x9 window has exactly one full-window center
    expected = single_window_oracle(gl, gr, 1.0, 1e-4, 9e-4)
    assert val == pytest.approx(expected, rel=1e-10)
    assert raster[4, 4] == pytest.approx(expected, rel=1e-10)
    assert np.count_nonzero(raster) == 1


def test_rho_scales_the_reconstruction_side():
    gl, gr = rand_field(3), rand_field(4)
    w = LossWeights(window=9, c1=1e-4, c2=9e-4, rho=1.7)
    val, _ = gradient_structure_loss(gl, gr, w=w)
    assert val == pytest.approx(single_window_oracle(gl, gr, 1.7, 1e-4, 9e-4),
                                rel=1e-10)


def test_loss_stays_in_score_range():
    for seed in range(6):
        gl, gr = rand_field(10 + seed, (15, 15)), rand_field(20 + seed, (15, 15))
        val, raster = gradient_structure_loss(gl, gr)
        assert 0.0 <= val <= 2.0
        assert raster.min() >= -1e-12 and raster.max() <= 2.0 + 1e-12


def test_mask_excludes_pixels_from_mean():
    gl, gr = rand_field(5, (13, 13)), rand_field(6, (13, 13))
    _, raster = gradient_structure_loss(gl, gr)
    mask = np.zeros((13, 13), dtype=bool)
    mask[:, :7] = True
    val_m, raster_m = gradient_structure_loss(gl, gr, mask=mask)
    assert not raster_m[:, :7].any()
    included = (raster_m != 0)
    assert val_m == pytest.approx(raster[included].mean(), rel=1e-12)


def test_all_masked_warns_and_returns_zero():
    g = rand_field(7)
    with pytest.warns(RuntimeWarning):
        val, raster = gradient_structure_loss(g, g, mask=np.ones((9, 9), bool))
    assert val == 0.0 and not raster.any()


def test_affine_remap_with_matched_rho_is_invisible():
    rng = np.random.default_rng(8)
    img = rng.uniform(0, 1, (24, 24))
    a, b = 1.7, 0.2
    gl = gradient(img)
    gr = gradient(a * img + b)
    w = LossWeights(rho=1.0 / a)
    val, _ = gradient_structure_loss(gl, gr, w=w)
    assert val == pytest.approx(0.0, abs=1e-6)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        gradient_structure_loss(rand_field(0), rand_field(1, (7, 7)))


def test_default_stabilizers_follow_field_range():
    fields = [np.array([0.0, 2.0]), np.array([-1.0, 0.5])]
    c1, c2 = resolve_ssim_constants(fields, LossWeights())
    assert c1 == pytest.approx((0.01 * 2.0) ** 2)
    assert c2 == pytest.approx((0.03 * 2.0) ** 2)
    c1f, c2f = resolve_ssim_constants(fields, LossWeights(c1=0.5, c2=0.25))
    assert (c1f, c2f) == (0.5, 0.25)


# smoothness_loss

def test_smoothness_of_constant_disparity_is_zero():
    assert smoothness_loss(np.full((5, 5), 3.0), np.zeros((5, 5))) == 0.0


def test_smoothness_unit_ramp_flat_image():
    xs = np.tile(np.arange(5.0), (5, 1))
    assert smoothness_loss(xs, np.full((5, 5), 0.3)) == pytest.approx(1.0)


def test_smoothness_halves_under_log_two_edge():
    # |grad_x I| = ln 2 everywhere gives weight exp(-ln 2) = 1/2
    xs = np.tile(np.arange(5.0), (5, 1))
    img = np.log(2.0) * xs
    assert smoothness_loss(xs, img) == pytest.approx(0.5)


def test_smoothness_nonnegative_and_shape_checked():
    rng = np.random.default_rng(9)
    assert smoothness_loss(rng.uniform(0, 5, (6, 6)), rng.uniform(0, 1, (6, 6))) > 0
    with pytest.raises(ValueError):
        smoothness_loss(np.zeros((5, 5)), np.zeros((4, 4)))


# cross-view consistency terms

def const_map(v, view="left", shape=(6, 6)):
    return DisparityMap(np.full(shape, float(v)), view=view)


def test_cross_consistency_zero_at_agreement():
    dl, dr = const_map(4), const_map(4, "right")
    assert cross_consistency_loss(dl, dr, dl_w=dr, dr_w=dl) == 0.0


def test_cross_consistency_absolute_values_cancel_sign():
    dl = const_map(4)
    dr_w = DisparityMap(np.full((6, 6), -4.0), view="left")
    dr = const_map(4, "right")
    dl_w = const_map(4, "right")
    assert cross_consistency_loss(dl, dr, dl_w, dr_w) == 0.0


def test_cross_consistency_hand_value():
    loss = cross_consistency_loss(
        const_map(4), const_map(4, "right"),
        dl_w=const_map(4, "right"), dr_w=const_map(6),
    )
    assert loss == pytest.approx(2.0)


def test_cross_consistency_validation():
    with pytest.raises(ValueError):
        cross_consistency_loss(const_map(1), const_map(1, "right"),
                               const_map(1, "right"),
                               const_map(1, shape=(4, 4)))
    with pytest.raises(ValueError):
        cross_consistency_loss(const_map(1), const_map(1, "right"),
                               const_map(1, "right"), const_map(1, "right"))


def test_internal_disparity_trivials_and_oracle():
    assert internal_disparity_loss(const_map(0), const_map(0, "right")) == 0.0
    assert internal_disparity_loss(const_map(1), const_map(0, "right")) == 1.0
    rng = np.random.default_rng(10)
    a = rng.standard_normal((6, 6))
    b = rng.standard_normal((6, 6))
    got = internal_disparity_loss(DisparityMap(np.abs(a)),
                                  DisparityMap(np.abs(b), view="right"))
    assert got == pytest.approx(np.abs(a).mean() + np.abs(b).mean(), rel=1e-12)


# total objective

def test_total_loss_zero_for_perfect_static_pair():
    img = Image(np.random.default_rng(11).uniform(0, 1, (16, 16)))
    rep = total_loss(img, img, np.zeros((16, 16)), np.zeros((16, 16)),
                     PAPER_WEIGHTS)
    assert rep.total == pytest.approx(0.0, abs=1e-9)
    assert rep.gd == pytest.approx(0.0, abs=1e-9)
    assert rep.sm == 0.0


def test_paper_weighting_of_unit_components():
    assert weighted_total(PAPER_WEIGHTS, 1.0, 1.0, 1.0, 1.0) \
        == pytest.approx(1.13)


def test_weighted_total_is_dot_product():
    rng = np.random.default_rng(12)
    for _ in range(10):
        gd, sm, cc, itn = rng.uniform(0, 3, 4)
        got = weighted_total(PAPER_WEIGHTS, gd, sm, cc, itn)
        assert got == pytest.approx(gd + 0.1 * sm + 0.025 * cc + 0.005 * itn,
                                    rel=1e-6)


def test_loss_report_decomposition_identity():
    rng = np.random.default_rng(13)
    left = Image(rng.uniform(0, 1, (20, 20)))
    right = Image(rng.uniform(0, 1, (20, 20)))
    dl = rng.uniform(0, 3, (20, 20))
    dr = rng.uniform(0, 3, (20, 20))
    rep = total_loss(
        left, right, dl, dr, PAPER_WEIGHTS,
        dl_w=DisparityMap(rng.uniform(0, 3, (20, 20)), view="right"),
        dr_w=DisparityMap(rng.uniform(0, 3, (20, 20)), view="left"),
        dl_itn=DisparityMap(rng.uniform(0, 1, (20, 20))),
        dr_itn=DisparityMap(rng.uniform(0, 1, (20, 20)), view="right"),
    )
    assert rep.cc > 0 and rep.itn > 0
    recon = weighted_total(PAPER_WEIGHTS, rep.gd, rep.sm, rep.cc, rep.itn)
    assert rep.total == pytest.approx(recon, rel=1e-6)


def test_rho_is_forced_to_one_for_intensity_pairs():
    rng = np.random.default_rng(14)
    left = Image(rng.uniform(0, 1, (16, 16)))
    right = Image(rng.uniform(0, 1, (16, 16)))
    d = np.ones((16, 16))
    a = total_loss(left, right, d, d, LossWeights(rho=1.0))
    b = total_loss(left, right, d, d, LossWeights(rho=1.5))
    assert a.total == b.total


# per-view objective and its analytic gradient

def test_warp_objective_vanishes_at_perfect_alignment():
    img = Image(np.random.default_rng(15).uniform(0, 1, (16, 16)))
    ev = warp_objective(img, img, np.zeros((16, 16)), LossWeights())
    assert ev.value == pytest.approx(0.0, abs=1e-9)
    assert np.abs(ev.grad).max() < 1e-9


def test_warp_objective_gradient_matches_finite_differences():
    # kink-free instance: disparity noise small against the ramp slopes so
    # no |.| subgradient or bilinear break sits within the probe step
    rng = np.random.default_rng(16)
    ref = Image(rng.uniform(0, 1, (12, 12)))
    oth = Image(rng.uniform(0, 1, (12, 12)))
    yy, xx = np.mgrid[0:12, 0:12]
    d0 = 1.3 + 0.045 * xx + 0.035 * yy + rng.uniform(-0.008, 0.008, (12, 12))
    f = d0 - np.floor(d0)
    d = np.floor(d0) + 0.06 + 0.88 * f
    w = LossWeights(c1=1e-4, c2=9e-4)
    ev = warp_objective(ref, oth, d, w)
    h = 1e-3
    g_fd = np.zeros_like(d)
    for y in range(12):
        for x in range(12):
            dp = d.copy(); dp[y, x] += h
            dm = d.copy(); dm[y, x] -= h
            g_fd[y, x] = (warp_objective(ref, oth, dp, w).value
                          - warp_objective(ref, oth, dm, w).value) / (2 * h)
    rel = np.abs(ev.grad - g_fd).max() / np.abs(g_fd).max()
    assert rel < 1e-4


def test_warp_objective_all_masked_warns():
    img = Image(np.random.default_rng(17).uniform(0, 1, (10, 10)))
    with pytest.warns(RuntimeWarning):
        ev = warp_objective(img, img, np.zeros((10, 10)), LossWeights(),
                            mask=np.ones((10, 10), bool))
    assert ev.gd == 0.0


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_gd=-0.1)
    with pytest.raises(ValueError):
        LossWeights(window=4)
    with pytest.raises(ValueError):
        LossWeights(window=1)
    with pytest.raises(ValueError):
        LossWeights(rho=0.0)
    with pytest.raises(ValueError):
        LossWeights(c1=0.0)
    with pytest.raises(ValueError):
        LossWeights(t=0.0)


# loss landscape

def test_landscape_identical_pair_has_strict_center_minimum():
    img = Image(np.random.default_rng(18).uniform(0, 1, (32, 32)))
    grid = loss_landscape(img, img, 3, "ssim_gradient")
    assert grid.shape == (7, 7)
    center = grid[3, 3]
    rest = np.delete(grid.ravel(), 3 * 7 + 3)
    assert center < rest.min()


def test_landscape_affine_pair_keeps_center_minimum():
    rng = np.random.default_rng(19)
    base = rng.uniform(0.1, 0.9, (32, 32))
    left = Image(base)
    right = Image(np.clip(0.6 * base + 0.2, 0, 1))
    grid = loss_landscape(left, right, 3, "ssim_gradient")
    assert np.unravel_index(np.argmin(grid), grid.shape) == (3, 3)


def test_landscape_l1_pixel_not_required_centered():
    # the pixel-wise loss has no affine invariance; just contract checks here
    rng = np.random.default_rng(20)
    base = rng.uniform(0.1, 0.9, (32, 32))
    left = Image(base)
    right = Image(np.clip(0.6 * base + 0.2, 0, 1))
    grid = loss_landscape(left, right, 3, "l1_pixel")
    assert grid.shape == (7, 7)
    assert np.isfinite(grid).all()


def test_landscape_validation():
    img = Image(np.zeros((16, 16)))
    with pytest.raises(ValueError):
        loss_landscape(img, img, 4, "l1_pixel")  # shift bound is strict
    with pytest.raises(ValueError):
        loss_landscape(img, img, 2, "huber")
    assert set(LANDSCAPE_KINDS) == {"l1_pixel", "l1_gradient",
                                    "ssim_image", "ssim_gradient"}
