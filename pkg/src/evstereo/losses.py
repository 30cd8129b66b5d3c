"""Self-supervised stereo objective: gradient-structure similarity, edge-aware
smoothness, cross-view disparity consistency, internal disparity penalty, the
weighted total, and a shift-grid loss landscape probe.

The structural term compares windowed statistics of image gradients rather
than intensities, which makes it robust to the affine intensity discrepancy
between a camera frame and an event reconstruction: for I' = a*I + b the
gradients differ only by the factor a, which the rescale rho absorbs and the
normalized SSIM form tolerates.

``warp_objective`` additionally returns the analytic derivative of the
photometric-plus-smoothness objective with respect to the disparity field,
chained through the bilinear warp, the gradient stencil, and the window
statistics; the refinement loop in ``stereo`` descends on it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .imageops import (
    DisparityMap,
    GradientField,
    Image,
    gradient,
    gradient_adjoint,
    warp_by_disparity,
    warp_x_derivative,
)
from .windows import box_sum, full_window_mask

LANDSCAPE_KINDS = ("l1_pixel", "l1_gradient", "ssim_image", "ssim_gradient")


@dataclass(frozen=True)
class LossWeights:
    """Weights and constants of the full objective.

    c1/c2 of None are resolved per call from the observed dynamic range of
    the compared fields (standard SSIM stabilizers, scale-adapted because
    gradients are not confined to [0, 1]).
    """

    lambda_gd: float = 1.0
    lambda_sm: float = 0.1
    lambda_cc: float = 0.025
    lambda_itn: float = 0.005
    rho: float = 1.0
    t: float = 2.0
    c1: Optional[float] = None
    c2: Optional[float] = None
    window: int = 7

    def __post_init__(self):
        for name in ("lambda_gd", "lambda_sm", "lambda_cc", "lambda_itn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.t <= 0:
            raise ValueError("occlusion threshold t must be positive")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("SSIM window must be odd and >= 3")
        for name in ("c1", "c2"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive when given")


@dataclass(frozen=True)
class LossReport:
    """Total objective value and its unweighted components.

    gd_map is the left-view per-pixel structural-loss raster (zero at
    excluded pixels).
    """

    total: float
    gd: float
    sm: float
    cc: float
    itn: float
    gd_map: np.ndarray


def weighted_total(w: LossWeights, gd: float, sm: float, cc: float, itn: float) -> float:
    return w.lambda_gd * gd + w.lambda_sm * sm + w.lambda_cc * cc + w.lambda_itn * itn


def resolve_ssim_constants(fields: Sequence[np.ndarray], w: LossWeights) -> tuple[float, float]:
    """Stabilizer constants for a concrete pair of field collections.

    When not pinned in the weights, c1 = (0.01 L)^2 and c2 = (0.03 L)^2 with
    L the largest value range over the given fields (floored at 1e-6 so
    constant fields still get positive stabilizers).
    """
    span = 1e-6
    for f in fields:
        if f.size:
            span = max(span, float(np.max(f)) - float(np.min(f)))
    c1 = w.c1 if w.c1 is not None else (0.01 * span) ** 2
    c2 = w.c2 if w.c2 is not None else (0.03 * span) ** 2
    return float(c1), float(c2)


class _WindowStats(NamedTuple):
    mu_a: np.ndarray
    mu_b: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    n1: np.ndarray
    d1: np.ndarray
    n2: np.ndarray
    d2: np.ndarray
    score: np.ndarray


def _ssim_stats(a: np.ndarray, b: np.ndarray, win: int, c1: float, c2: float) -> _WindowStats:
    """Window means/variances/covariance and the two SSIM factors.

    Values at centers whose window overhangs the frame are polluted by the
    zero fill; callers must restrict to full windows.
    """
    n = float(win * win)
    # One stacked call; each channel sees the same additions it would alone.
    sums = box_sum(np.stack([a, b, a * a, b * b, a * b]), win) / n
    mu_a, mu_b = sums[0], sums[1]
    va = sums[2] - mu_a * mu_a
    vb = sums[3] - mu_b * mu_b
    cab = sums[4] - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + c1
    d1 = mu_a * mu_a + mu_b * mu_b + c1
    n2 = 2.0 * cab + c2
    d2 = va + vb + c2
    f1 = n1 / d1
    f2 = n2 / d2
    return _WindowStats(mu_a, mu_b, f1, f2, n1, d1, n2, d2, f1 * f2)


def _as_field(g) -> GradientField:
    if isinstance(g, GradientField):
        return g
    gx, gy = g
    return GradientField(np.asarray(gx, dtype=np.float64), np.asarray(gy, dtype=np.float64))


def gradient_structure_loss(
    gl, gr, mask: Optional[np.ndarray] = None, w: LossWeights = LossWeights()
) -> tuple[float, np.ndarray]:
    """Windowed structural dissimilarity between two gradient fields.

    gl is the intensity-side field; gr the reconstruction-side field, scaled
    by rho here. Each channel (gx, gy) is scored separately with window
    means, variances, and cross-covariance, the scores averaged, and the loss
    1 - score averaged over included pixels: those with a full window, not
    masked (mask true = excluded). Returns the mean and the per-pixel raster
    (zero at excluded pixels). All pixels excluded yields 0 with a warning.
    """
    gl = _as_field(gl)
    gr = _as_field(gr)
    if gl.gx.shape != gr.gx.shape:
        raise ValueError("gradient fields must share a shape")
    ax, ay = gl.gx, gl.gy
    bx, by = w.rho * gr.gx, w.rho * gr.gy
    c1, c2 = resolve_ssim_constants((ax, ay, bx, by), w)
    score = 0.5 * (
        _ssim_stats(ax, bx, w.window, c1, c2).score
        + _ssim_stats(ay, by, w.window, c1, c2).score
    )
    included = full_window_mask(ax.shape, w.window)
    if mask is not None:
        included = included & ~np.asarray(mask, dtype=bool)
    loss_map = 1.0 - score
    if not included.any():
        warnings.warn("gradient_structure_loss: every pixel excluded", RuntimeWarning)
        return 0.0, np.zeros_like(loss_map)
    value = float(loss_map[included].mean())
    return value, np.where(included, loss_map, 0.0)


def smoothness_loss(disp, img) -> float:
    """Edge-aware first-order smoothness: mean over pixels of
    |dD/dx| exp(-|dI/dx|) + |dD/dy| exp(-|dI/dy|)."""
    d = disp.data if isinstance(disp, DisparityMap) else np.asarray(disp, dtype=np.float64)
    i = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if d.shape != i.shape:
        raise ValueError("disparity and image shapes must match")
    gd = gradient(d)
    gi = gradient(i)
    term = np.abs(gd.gx) * np.exp(-np.abs(gi.gx)) + np.abs(gd.gy) * np.exp(-np.abs(gi.gy))
    return float(term.mean())


def _disp_array(d) -> np.ndarray:
    return d.data if isinstance(d, DisparityMap) else np.asarray(d, dtype=np.float64)


def cross_consistency_loss(dl, dr, dl_w, dr_w) -> float:
    """Mean disagreement between each view's disparity and the disparity
    recovered after cross-view projection, on absolute values so opposite
    sign conventions cancel: mean||dl| - |dr_w|| + mean||dr| - |dl_w||."""
    a = [_disp_array(x) for x in (dl, dr, dl_w, dr_w)]
    if not (a[0].shape == a[3].shape and a[1].shape == a[2].shape):
        raise ValueError("paired disparity maps must share shapes")
    if isinstance(dl, DisparityMap) and isinstance(dr_w, DisparityMap) and dl.view != dr_w.view:
        raise ValueError("dl and dr_w must live in the same view")
    if isinstance(dr, DisparityMap) and isinstance(dl_w, DisparityMap) and dr.view != dl_w.view:
        raise ValueError("dr and dl_w must live in the same view")
    first = np.abs(np.abs(a[0]) - np.abs(a[3])).mean()
    second = np.abs(np.abs(a[1]) - np.abs(a[2])).mean()
    return float(first + second)


def internal_disparity_loss(dl_itn, dr_itn) -> float:
    """Mean magnitude of the same-view disparities, which consistent fields
    drive to zero: mean|dr_itn| + mean|dl_itn|."""
    a = _disp_array(dl_itn)
    b = _disp_array(dr_itn)
    return float(np.abs(b).mean() + np.abs(a).mean())


class SideEval(NamedTuple):
    """One view's photometric objective: value, components, and the analytic
    derivative with respect to that view's disparity field."""

    value: float
    gd: float
    sm: float
    grad: np.ndarray
    gd_map: np.ndarray


def warp_objective(
    ref: Image,
    other: Image,
    disp,
    w: LossWeights,
    mask: Optional[np.ndarray] = None,
    direction: str = "right_to_left",
) -> SideEval:
    """lambda_gd * L_gd + lambda_sm * L_sm for one reference view, with its
    gradient in the disparity field.

    The other view's image is backward-warped onto the reference grid
    (clamped sampling, so out-of-range samples extend the edge and carry zero
    derivative), gradients of the warped result are compared against the
    reference gradients under the windowed structural score, and smoothness
    is weighted by the reference image's own edges. ``mask`` marks pixels to
    exclude from the structural mean, on top of partial windows and invalid
    warp centers.

    The derivative chains the window statistics, the channel averaging, the
    gradient stencil adjoint, and the bilinear warp slope; cc/itn terms are
    piecewise-constant auxiliaries handled by the caller.
    """
    d = _disp_array(disp)
    ref_arr = ref.data
    oth_arr = other.data
    if d.shape != ref_arr.shape or oth_arr.shape != ref_arr.shape:
        raise ValueError("image and disparity shapes must match")
    warped, valid = warp_by_disparity(oth_arr, d, direction, clamp=True)
    ga = gradient(ref_arr)
    gb = gradient(warped)
    rho_a = w.rho if ref.modality == "reconstruction" else 1.0
    rho_b = w.rho if other.modality == "reconstruction" else 1.0
    ax, ay = rho_a * ga.gx, rho_a * ga.gy
    bx, by = rho_b * gb.gx, rho_b * gb.gy
    c1, c2 = resolve_ssim_constants((ax, ay, bx, by), w)
    win = w.window
    n = float(win * win)

    stats_x = _ssim_stats(ax, bx, win, c1, c2)
    stats_y = _ssim_stats(ay, by, win, c1, c2)
    included = full_window_mask(ref_arr.shape, win) & valid
    if mask is not None:
        included = included & ~np.asarray(mask, dtype=bool)
    loss_map = 1.0 - 0.5 * (stats_x.score + stats_y.score)
    n_inc = int(included.sum())

    if n_inc == 0:
        warnings.warn("warp_objective: every pixel excluded from the structural term",
                      RuntimeWarning)
        gd_val = 0.0
        gd_map = np.zeros_like(loss_map)
        d_warped = np.zeros_like(d)
    else:
        gd_val = float(loss_map[included].mean())
        gd_map = np.where(included, loss_map, 0.0)
        inc = included.astype(np.float64)
        scale = -0.5 / n_inc  # d(mean of 1 - avg score)/d(score_c)
        db = []
        for st, a_ch, b_ch in ((stats_x, ax, bx), (stats_y, ay, by)):
            ds_dmu = st.f2 * 2.0 * (st.mu_a * st.d1 - st.n1 * st.mu_b) / (st.d1 * st.d1) \
                + st.f1 * 2.0 * (st.n2 * st.mu_b - st.mu_a * st.d2) / (st.d2 * st.d2)
            ds_dsb = -st.f1 * st.n2 / (n * st.d2 * st.d2)
            ds_dsab = 2.0 * st.f1 / (n * st.d2)
            sums = box_sum(np.stack([inc * ds_dmu, inc * ds_dsb, inc * ds_dsab]), win)
            db.append(scale * (sums[0] / n + 2.0 * b_ch * sums[1] + a_ch * sums[2]))
        d_warped = gradient_adjoint(rho_b * db[0], rho_b * db[1])

    slope = warp_x_derivative(oth_arr, d, direction)
    dgd = d_warped * slope

    gdisp = gradient(d)
    gi = gradient(ref_arr)
    wx = np.exp(-np.abs(gi.gx))
    wy = np.exp(-np.abs(gi.gy))
    sm_val = float((np.abs(gdisp.gx) * wx + np.abs(gdisp.gy) * wy).mean())
    n_pix = float(d.size)
    dsm = gradient_adjoint(np.sign(gdisp.gx) * wx / n_pix, np.sign(gdisp.gy) * wy / n_pix)

    value = w.lambda_gd * gd_val + w.lambda_sm * sm_val
    grad = w.lambda_gd * dgd + w.lambda_sm * dsm
    return SideEval(value, gd_val, sm_val, grad, gd_map)


def total_loss(
    left: Image,
    right: Image,
    dl,
    dr,
    w: LossWeights = LossWeights(),
    dl_w=None,
    dr_w=None,
    dl_itn=None,
    dr_itn=None,
    mask_left: Optional[np.ndarray] = None,
    mask_right: Optional[np.ndarray] = None,
) -> LossReport:
    """Full objective over both views.

    Structural and smoothness terms are evaluated per view (left reference
    warping right, and vice versa) and averaged; the consistency terms use
    the supplied auxiliary disparities and contribute 0 when absent. rho is
    only meaningful when one side is a reconstruction; for a pure intensity
    pair it is forced to 1.
    """
    w_eff = w
    if left.modality != "reconstruction" and right.modality != "reconstruction":
        w_eff = replace(w, rho=1.0)
    side_l = warp_objective(left, right, dl, w_eff, mask_left, "right_to_left")
    side_r = warp_objective(right, left, dr, w_eff, mask_right, "left_to_right")
    gd = 0.5 * (side_l.gd + side_r.gd)
    sm = 0.5 * (side_l.sm + side_r.sm)
    cc = 0.0
    if dl_w is not None and dr_w is not None:
        cc = cross_consistency_loss(dl, dr, dl_w, dr_w)
    itn = 0.0
    if dl_itn is not None and dr_itn is not None:
        itn = internal_disparity_loss(dl_itn, dr_itn)
    total = weighted_total(w, gd, sm, cc, itn)
    return LossReport(total=total, gd=gd, sm=sm, cc=cc, itn=itn, gd_map=side_l.gd_map)


def _ssim_pair_loss(a: np.ndarray, b: np.ndarray, w: LossWeights) -> float:
    """1 - mean windowed SSIM score between two rasters (full windows only)."""
    c1, c2 = resolve_ssim_constants((a, b), w)
    score = _ssim_stats(a, b, w.window, c1, c2).score
    included = full_window_mask(a.shape, w.window)
    if not included.any():
        warnings.warn("ssim landscape cell smaller than the window", RuntimeWarning)
        return 0.0
    return float(1.0 - score[included].mean())


def loss_landscape(
    left: Image,
    right: Image,
    max_shift: int,
    kind: str,
    w: LossWeights = LossWeights(),
) -> np.ndarray:
    """Loss of (left shifted by (dx, dy)) against right over the overlap, for
    every integer shift in [-max_shift, max_shift]^2.

    Returns the (2s+1) x (2s+1) grid indexed [dy + s, dx + s]. A pair that is
    aligned at rest should score its minimum at the center cell for losses
    that tolerate the modality gap; pixel-wise losses need not.
    """
    if kind not in LANDSCAPE_KINDS:
        raise ValueError(f"kind must be one of {LANDSCAPE_KINDS}")
    la = left.data
    ra = right.data
    if la.shape != ra.shape:
        raise ValueError("landscape images must share a shape")
    h, wdt = la.shape
    if max_shift < 0 or max_shift >= min(h, wdt) / 4:
        raise ValueError("max_shift must be non-negative and below min(H, W)/4")
    w_eff = w if right.modality == "reconstruction" else replace(w, rho=1.0)
    s = max_shift
    grid = np.empty((2 * s + 1, 2 * s + 1))
    for dy in range(-s, s + 1):
        for dx in range(-s, s + 1):
            y0, y1 = max(0, dy), h + min(0, dy)
            x0, x1 = max(0, dx), wdt + min(0, dx)
            rc = ra[y0:y1, x0:x1]
            lc = la[y0 - dy:y1 - dy, x0 - dx:x1 - dx]
            if kind == "l1_pixel":
                val = float(np.abs(lc - rc).mean())
            elif kind == "l1_gradient":
                gl = gradient(lc)
                gr = gradient(rc)
                val = float((np.abs(gl.gx - gr.gx) + np.abs(gl.gy - gr.gy)).mean())
            elif kind == "ssim_image":
                val = _ssim_pair_loss(lc, rc, w_eff)
            else:
                val, _ = gradient_structure_loss(gradient(lc), gradient(rc), None, w_eff)
            grid[dy + s, dx + s] = val
    return grid
