"""Multi-modal stereo matching and self-supervised disparity refinement.

Learned feature towers are replaced by fixed gradient-based features with
per-modality handling, which keeps the left/right swap property exactly
checkable. Matching is classical: a windowed structural cost volume, box
aggregation, winner-take-all with parabola sub-pixel refinement. Refinement
then descends on the full objective with backtracking line search, while the
consistency auxiliaries (cross-view and same-view disparities from re-matching
warped images) are refreshed periodically and only adopted when they do not
increase the objective.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .events import VoxelGrid
from .imageops import DisparityMap, Image, gradient, occlusion_mask, warp_by_disparity
from .losses import (
    LossReport,
    LossWeights,
    cross_consistency_loss,
    internal_disparity_loss,
    resolve_ssim_constants,
    warp_objective,
    weighted_total,
)
from .windows import box_mean_valid, box_sum, shift_columns

FEATURE_MODALITIES = ("intensity", "reconstruction", "voxel")
CONTEXT_WINDOW = 3  # smoothing window of the edge-context channel
FEATURE_LOG_EPS = 1e-2  # log offset for the intensity edge map

# fixed stabilizers for the cost formula; features are standardized, so a
# data-adaptive constant would only couple distant pixels through the frame
COST_C1 = 1e-4
COST_C2 = 9e-4


@dataclass(frozen=True)
class FeatureMap:
    """C x H x W matching features plus the modality they came from."""

    channels: np.ndarray
    modality: str

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channels, dtype=np.float64)
        if ch.ndim != 3:
            raise ValueError("feature channels must be C x H x W")
        if not np.all(np.isfinite(ch)):
            raise ValueError("feature channels must be finite")
        if self.modality not in FEATURE_MODALITIES:
            raise ValueError(f"modality must be one of {FEATURE_MODALITIES}")
        ch.flags.writeable = False
        object.__setattr__(self, "channels", ch)

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]


@dataclass(frozen=True)
class CostVolume:
    """H x W x (d_max + 1) matching costs, lower better, +inf where the
    displaced pixel leaves the frame."""

    cost: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.cost, dtype=np.float64)
        if c.ndim != 3:
            raise ValueError("cost volume must be H x W x (d_max + 1)")
        if np.any(np.isnan(c)) or np.any(c == -np.inf):
            raise ValueError("cost volume entries must be finite or +inf")
        c.flags.writeable = False
        object.__setattr__(self, "cost", c)

    @property
    def d_max(self) -> int:
        return self.cost.shape[2] - 1


@dataclass(frozen=True)
class MatchParams:
    """Search range, windows, and refinement schedule."""

    d_max: int = 41
    patch: int = 9
    aggregate_iters: int = 4
    refine_iters: int = 60
    step: float = 0.5
    rematch_every: int = 10

    def __post_init__(self):
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.patch < 3 or self.patch % 2 == 0:
            raise ValueError("patch must be odd and >= 3")
        if self.aggregate_iters < 0 or self.refine_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.rematch_every < 1:
            raise ValueError("rematch_every must be >= 1")


class MatchResult(NamedTuple):
    dl: DisparityMap
    dr: DisparityMap


@dataclass(frozen=True)
class RefineResult:
    """Refined disparity pair plus the per-iteration loss trace.

    ``converged`` marks an early stop because no descent step could reduce
    the objective for 20 consecutive iterations (a plateau); ``diverged``
    marks 20 consecutive trace increases, which monotone acceptance should
    make impossible and is surfaced as a diagnostic, not an exception.
    """

    dl: DisparityMap
    dr: DisparityMap
    trace: tuple
    iterations: int
    converged: bool
    diverged: bool


def _standardize(ch: np.ndarray) -> np.ndarray:
    std = float(ch.std())
    if std <= 1e-12:
        return np.zeros_like(ch)
    return (ch - ch.mean()) / std


def _edge_energy(base: np.ndarray, modality: str, rho: float) -> np.ndarray:
    """Map each modality into a shared horizontal edge-energy domain.

    A leaky event integration over a long window is a high-passed log
    intensity (current content minus a motion-blurred past average), so its
    horizontal derivative magnitude lines up with intensity edges at the
    window end. Intensity images are differentiated in the log domain to
    land in the same units. Voxel proxies (summed absolute polarity) are
    edge densities as-is.
    """
    if modality == "intensity":
        return np.abs(gradient(np.log(base + FEATURE_LOG_EPS)).gx)
    if modality == "reconstruction":
        return rho * np.abs(gradient(base).gx)
    return base


def extract_features(img, modality: Optional[str] = None, rho: float = 1.0) -> FeatureMap:
    """Fixed 4-channel matching features, standardized over the frame.

    All channels derive from the modality's edge-energy map e: the map
    itself, a box-smoothed context copy, and its vertical and horizontal
    derivatives. Because every channel is built from the raster by the same
    recipe, mirroring both inputs of a stereo pair mirrors the cost volume
    exactly, which the swap-symmetry check relies on. The reconstruction
    energy is scaled by rho before standardization; channels with no
    variation standardize to zero.
    """
    if isinstance(img, VoxelGrid):
        base = np.abs(img.data).sum(axis=0)
        peak = float(base.max())
        if peak > 0:
            base = base / peak
        inferred = "voxel"
    elif isinstance(img, Image):
        base = img.data
        inferred = img.modality
    else:
        base = np.asarray(img, dtype=np.float64)
        inferred = "intensity"
    modality = inferred if modality is None else modality
    if modality not in FEATURE_MODALITIES:
        raise ValueError(f"modality must be one of {FEATURE_MODALITIES}")
    e = _edge_energy(base, modality, rho)
    ge = gradient(e)
    context = box_mean_valid(e, np.ones(e.shape, dtype=bool), CONTEXT_WINDOW)
    channels = np.stack([
        _standardize(e),
        _standardize(context),
        _standardize(ge.gy),
        _standardize(ge.gx),
    ])
    return FeatureMap(channels, modality)


def build_cost_volume(
    ref: FeatureMap, other: FeatureMap, p: MatchParams, direction: int = -1
) -> CostVolume:
    """Windowed structural matching cost against the other view.

    direction -1 samples the other view at x - d (left-referenced, the
    default); +1 samples at x + d (right-referenced). cost(y, x, d) is one
    minus the channel-averaged single-window structural score over the patch
    cells whose offsets stay inside both frames; centers whose displaced
    pixel leaves the frame cost +inf.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be -1 or +1")
    a = ref.channels
    if a.shape != other.channels.shape:
        raise ValueError("feature maps must share a shape")
    c_ch, h, w = a.shape
    if p.d_max >= w:
        raise ValueError("d_max must be below the image width")
    ones = np.ones((h, w), dtype=np.float64)
    cost = np.empty((h, w, p.d_max + 1), dtype=np.float64)
    xs = np.arange(w)
    for d in range(p.d_max + 1):
        k = direction * d
        center_ok = (xs + k >= 0) & (xs + k < w)
        vmask = shift_columns(ones, k)
        bm = shift_columns(other.channels, k)
        am = a * vmask
        n = box_sum(vmask, p.patch)
        stats = box_sum(np.concatenate([am, bm, am * am, bm * bm, am * bm]), p.patch)
        sa, sb = stats[:c_ch], stats[c_ch:2 * c_ch]
        saa, sbb = stats[2 * c_ch:3 * c_ch], stats[3 * c_ch:4 * c_ch]
        sab = stats[4 * c_ch:]
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_a = sa / n
            mu_b = sb / n
            va = saa / n - mu_a * mu_a
            vb = sbb / n - mu_b * mu_b
            cab = sab / n - mu_a * mu_b
            f1 = (2.0 * mu_a * mu_b + COST_C1) / (mu_a * mu_a + mu_b * mu_b + COST_C1)
            f2 = (2.0 * cab + COST_C2) / (va + vb + COST_C2)
            score_sum = (f1 * f2).sum(axis=0)
        cost[:, :, d] = np.where(center_ok[None, :], 1.0 - score_sum / c_ch, np.inf)
    return CostVolume(cost)


def aggregate_cost_volume(cv: CostVolume, p: MatchParams) -> CostVolume:
    """3 x 3 box smoothing of each disparity slice, repeated aggregate_iters
    times. +inf cells are treated as missing: they stay +inf and finite
    neighbors renormalize over the finite count."""
    vol = np.moveaxis(cv.cost, 2, 0).copy()
    for _ in range(p.aggregate_iters):
        finite = np.isfinite(vol)
        sums = box_sum(np.where(finite, vol, 0.0), 3)
        counts = box_sum(finite.astype(np.float64), 3)
        with np.errstate(invalid="ignore"):
            smoothed = sums / counts
        vol = np.where(finite, smoothed, np.inf)
    return CostVolume(np.moveaxis(vol, 0, 2))


def wta_disparity(cv: CostVolume, view: str = "left") -> DisparityMap:
    """Winner-take-all with parabola sub-pixel refinement.

    Ties break toward the smaller disparity. Interior winners with finite
    neighbors get the parabola-vertex offset clamped to [-1/2, 1/2]; the fit
    is skipped when the three points are not strictly convex. All-inf
    columns yield disparity 0 with validity False.
    """
    cost = cv.cost
    d_star = np.argmin(cost, axis=2)
    c0 = np.take_along_axis(cost, d_star[:, :, None], axis=2)[:, :, 0]
    valid = np.isfinite(c0)
    d_sub = d_star.astype(np.float64)
    interior = (d_star >= 1) & (d_star <= cv.d_max - 1)
    if np.any(interior):
        dm = np.clip(d_star - 1, 0, cv.d_max)
        dp = np.clip(d_star + 1, 0, cv.d_max)
        cm = np.take_along_axis(cost, dm[:, :, None], axis=2)[:, :, 0]
        cp = np.take_along_axis(cost, dp[:, :, None], axis=2)[:, :, 0]
        denom = cm - 2.0 * c0 + cp
        fit = interior & np.isfinite(cm) & np.isfinite(cp) & (denom > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            delta = np.where(fit, (cm - cp) / (2.0 * denom), 0.0)
        d_sub = d_sub + np.clip(delta, -0.5, 0.5)
    d_sub = np.where(valid, d_sub, 0.0)
    return DisparityMap(d_sub, view=view, validity=valid)


def _search(ref: FeatureMap, other: FeatureMap, p: MatchParams,
            direction: int, view: str) -> DisparityMap:
    cv = build_cost_volume(ref, other, p, direction)
    cv = aggregate_cost_volume(cv, p)
    return wta_disparity(cv, view=view)


def match_stereo(
    left: Image,
    right,
    p: MatchParams = MatchParams(),
    modality_r: Optional[str] = None,
    rho: float = 1.0,
) -> MatchResult:
    """Left- and right-referenced disparity from one stereo pair.

    The right input may be an Image (intensity or reconstruction) or a
    VoxelGrid. Both directions run the same search with mirrored sampling;
    flipping both inputs horizontally and swapping their roles reproduces
    one result from the other, which the test suite pins down.
    """
    fl = extract_features(left, rho=rho)
    fr = extract_features(right, modality=modality_r, rho=rho)
    dl = _search(fl, fr, p, -1, "left")
    dr = _search(fr, fl, p, +1, "right")
    return MatchResult(dl, dr)


class _Aux(NamedTuple):
    """Auxiliaries held fixed between rematches."""

    mask_l: Optional[np.ndarray]
    mask_r: Optional[np.ndarray]
    dr_w: Optional[np.ndarray]
    dl_w: Optional[np.ndarray]
    itn_l: Optional[np.ndarray]
    itn_r: Optional[np.ndarray]
    w_l: LossWeights
    w_r: LossWeights


class _Eval(NamedTuple):
    total: float
    report: LossReport
    grad_l: np.ndarray
    grad_r: np.ndarray


def _evaluate(left: Image, right: Image, dl: np.ndarray, dr: np.ndarray,
              w: LossWeights, aux: _Aux) -> _Eval:
    side_l = warp_objective(left, right, dl, aux.w_l, aux.mask_l, "right_to_left")
    side_r = warp_objective(right, left, dr, aux.w_r, aux.mask_r, "left_to_right")
    n = float(dl.size)
    cc = 0.0
    grad_l = 0.5 * side_l.grad
    grad_r = 0.5 * side_r.grad
    if w.lambda_cc > 0 and aux.dr_w is not None:
        cc = cross_consistency_loss(dl, dr, aux.dl_w, aux.dr_w)
        grad_l = grad_l + w.lambda_cc * np.sign(np.abs(dl) - np.abs(aux.dr_w)) * np.sign(dl) / n
        grad_r = grad_r + w.lambda_cc * np.sign(np.abs(dr) - np.abs(aux.dl_w)) * np.sign(dr) / n
    itn = 0.0
    if w.lambda_itn > 0 and aux.itn_l is not None:
        itn = internal_disparity_loss(aux.itn_l, aux.itn_r)
    gd = 0.5 * (side_l.gd + side_r.gd)
    sm = 0.5 * (side_l.sm + side_r.sm)
    total = weighted_total(w, gd, sm, cc, itn)
    report = LossReport(total=total, gd=gd, sm=sm, cc=cc, itn=itn, gd_map=side_l.gd_map)
    return _Eval(total, report, grad_l, grad_r)


def _resolved_weights(ref: Image, other: Image, d: np.ndarray, w: LossWeights,
                      direction: str) -> LossWeights:
    """Pin the SSIM constants to the current warped pair so the objective is
    a fixed smooth function between rematches."""
    warped, _ = warp_by_disparity(other.data, d, direction, clamp=True)
    ga = gradient(ref.data)
    gb = gradient(warped)
    rho_a = w.rho if ref.modality == "reconstruction" else 1.0
    rho_b = w.rho if other.modality == "reconstruction" else 1.0
    c1, c2 = resolve_ssim_constants(
        (rho_a * ga.gx, rho_a * ga.gy, rho_b * gb.gx, rho_b * gb.gy), w)
    return replace(w, c1=c1, c2=c2)


def _rematch(left: Image, right: Image, dl: np.ndarray, dr: np.ndarray,
             f_l: FeatureMap, f_r: FeatureMap, w: LossWeights, p: MatchParams,
             general: bool) -> _Aux:
    dl_map = DisparityMap(dl, view="left")
    dr_map = DisparityMap(dr, view="right")
    mask_l = occlusion_mask(dl_map, dr_map, w.t)
    mask_r = occlusion_mask(dr_map, dl_map, w.t)
    w_l = _resolved_weights(left, right, dl, w, "right_to_left")
    w_r = _resolved_weights(right, left, dr, w, "left_to_right")
    if not general:
        return _Aux(mask_l, mask_r, None, None, None, None, w_l, w_r)
    synth_right, _ = warp_by_disparity(left, DisparityMap(dr, view="right"),
                                       "left_to_right", clamp=True)
    synth_left, _ = warp_by_disparity(right, DisparityMap(dl, view="left"),
                                      "right_to_left", clamp=True)
    f_sr = extract_features(synth_right, rho=w.rho)
    f_sl = extract_features(synth_left, rho=w.rho)
    dr_w = _search(f_l, f_sr, p, -1, "left").data
    dl_w = _search(f_r, f_sl, p, +1, "right").data
    itn_l = _search(f_l, f_sl, p, -1, "left").data
    itn_r = _search(f_r, f_sr, p, +1, "right").data
    return _Aux(mask_l, mask_r, dr_w, dl_w, itn_l, itn_r, w_l, w_r)


def refine_self_supervised(
    dl0: DisparityMap,
    dr0: DisparityMap,
    left: Image,
    right: Image,
    w: LossWeights = LossWeights(),
    p: MatchParams = MatchParams(),
) -> RefineResult:
    """Descend on the full objective jointly over both disparity fields.

    Steps follow a damped-sign direction (gradient normalized per pixel
    against a fraction of the field maximum) with backtracking halving and
    a strict-decrease acceptance rule; fields stay clamped to [0, d_max]. Every rematch_every iterations the occlusion masks, SSIM
    constants, and (when the consistency weights are active) the cross-view
    and same-view auxiliary disparities are recomputed from the current
    fields; a recomputed set is adopted only if it does not increase the
    objective, except at iteration 0 where it defines it.
    """
    dl = np.asarray(dl0.data, dtype=np.float64).copy()
    dr = np.asarray(dr0.data, dtype=np.float64).copy()
    if dl.shape != left.data.shape or dr.shape != right.data.shape:
        raise ValueError("disparity and image shapes must match")
    if np.any(dl < 0) or np.any(dl > p.d_max) or np.any(dr < 0) or np.any(dr > p.d_max):
        raise ValueError("initial disparities must lie within [0, d_max]")
    general = w.lambda_cc > 0 or w.lambda_itn > 0
    f_l = extract_features(left, rho=w.rho)
    f_r = extract_features(right, rho=w.rho)

    aux = None
    current = None
    trace = []
    eta = p.step
    stall = 0
    rise = 0
    converged = False
    diverged = False
    iterations = 0

    for it in range(p.refine_iters):
        if it % p.rematch_every == 0:
            candidate = _rematch(left, right, dl, dr, f_l, f_r, w, p, general)
            cand_eval = _evaluate(left, right, dl, dr, w, candidate)
            if aux is None or cand_eval.total <= current.total + 1e-12:
                aux = candidate
                current = cand_eval
        if current is None:
            current = _evaluate(left, right, dl, dr, w, aux)

        gmax = max(float(np.abs(current.grad_l).max()),
                   float(np.abs(current.grad_r).max()))
        stepped = False
        if gmax > 1e-15:
            # near-sign steps for strong-gradient pixels, damped for weak
            # ones; keeps slow pixels moving without losing scale freedom
            damp = 0.1 * gmax
            dir_l = current.grad_l / (np.abs(current.grad_l) + damp)
            dir_r = current.grad_r / (np.abs(current.grad_r) + damp)
            trial = eta
            for _ in range(12):
                cand_dl = np.clip(dl - trial * dir_l, 0.0, float(p.d_max))
                cand_dr = np.clip(dr - trial * dir_r, 0.0, float(p.d_max))
                cand = _evaluate(left, right, cand_dl, cand_dr, w, aux)
                if cand.total < current.total - 1e-15:
                    dl, dr = cand_dl, cand_dr
                    current = cand
                    eta = min(trial * 1.2, p.step)
                    stepped = True
                    break
                trial *= 0.5
        iterations = it + 1
        if trace and current.total > trace[-1].total + 1e-12:
            rise += 1
        else:
            rise = 0
        trace.append(current.report)
        if stepped:
            stall = 0
        else:
            stall += 1
        if rise >= 20:
            diverged = True
            break
        if stall >= 20:
            converged = True
            break

    return RefineResult(
        dl=DisparityMap(dl, view="left", validity=dl0.validity),
        dr=DisparityMap(dr, view="right", validity=dr0.validity),
        trace=tuple(trace),
        iterations=iterations,
        converged=converged,
        diverged=diverged,
    )
