"""Image containers, spatial gradients, disparity warping, and occlusion logic.

All stereo geometry here is rectified and horizontal: a scene point at left
pixel x sits at right pixel x - d for disparity d >= 0. Warping is backward
(sample the source at the displaced coordinate) with linear interpolation
along x only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .events import EventStream

MODALITIES = ("intensity", "reconstruction")
VIEWS = ("left", "right")


class GradientField(NamedTuple):
    """Spatial gradient pair (d/dx, d/dy) of a single-channel image."""

    gx: np.ndarray
    gy: np.ndarray


@dataclass(frozen=True)
class Image:
    """A single-channel float image tagged with how it was produced.

    ``modality`` distinguishes camera intensity frames from event-based
    reconstructions; the latter carry a different contrast response and get
    the gradient rescale factor rho applied inside matching and losses.
    """

    data: np.ndarray
    modality: str = "intensity"

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image data must be H x W with positive dimensions")
        if not np.all(np.isfinite(data)):
            raise ValueError("image data must be finite")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel horizontal disparity for one view plus a validity mask.

    ``validity`` marks pixels whose value is meaningful (e.g. not produced by
    an all-invalid cost column or an out-of-frame projection); it defaults to
    all-true.
    """

    data: np.ndarray
    view: str = "left"
    validity: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("disparity data must be H x W")
        if not np.all(np.isfinite(data)):
            raise ValueError("disparity data must be finite")
        if self.view not in VIEWS:
            raise ValueError(f"view must be one of {VIEWS}")
        validity = self.validity
        if validity is None:
            validity = np.ones(data.shape, dtype=bool)
        else:
            validity = np.ascontiguousarray(validity, dtype=bool)
            if validity.shape != data.shape:
                raise ValueError("validity mask shape must match disparity data")
        data.flags.writeable = False
        validity.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "validity", validity)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def _as_array(obj) -> np.ndarray:
    if isinstance(obj, (Image, DisparityMap)):
        return obj.data
    return np.asarray(obj, dtype=np.float64)


def gradient(img) -> GradientField:
    """Spatial gradient (gx, gy): central differences inside, one-sided at
    the borders. Requires at least 3 pixels per axis so the interior exists."""
    arr = _as_array(img)
    if arr.ndim != 2:
        raise ValueError("gradient expects an H x W array")
    if arr.shape[0] < 3 or arr.shape[1] < 3:
        raise ValueError("gradient needs at least 3 pixels along each axis")
    gy, gx = np.gradient(arr)
    return GradientField(gx, gy)


def gradient_adjoint(ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    """Adjoint of the gradient stencil: the image-space field f such that
    <gradient(g), (ux, uy)> = <g, f> for every image g.

    Used to chain analytic loss derivatives taken with respect to gradient
    channels back onto the underlying image.
    """
    ux = np.asarray(ux, dtype=np.float64)
    uy = np.asarray(uy, dtype=np.float64)
    out = np.zeros_like(ux)
    # x stencil: central /2 in the interior, one-sided at first/last column
    out[:, 2:] += 0.5 * ux[:, 1:-1]
    out[:, :-2] -= 0.5 * ux[:, 1:-1]
    out[:, 1] += ux[:, 0]
    out[:, 0] -= ux[:, 0]
    out[:, -1] += ux[:, -1]
    out[:, -2] -= ux[:, -1]
    # y stencil, same shape transposed
    out[2:, :] += 0.5 * uy[1:-1, :]
    out[:-2, :] -= 0.5 * uy[1:-1, :]
    out[1, :] += uy[0, :]
    out[0, :] -= uy[0, :]
    out[-1, :] += uy[-1, :]
    out[-2, :] -= uy[-1, :]
    return out


def warp_x_derivative(img, disparity, direction: str) -> np.ndarray:
    """Derivative of the clamp-mode warp_by_disparity output with respect to
    the disparity value at the same pixel.

    For right_to_left the sample coordinate is x - d, so the derivative is
    minus the local image slope; for left_to_right it is plus the slope.
    Samples outside [0, W-1] sit on the clamped edge and have derivative 0.
    """
    _check_direction(direction, disparity)
    arr = _as_array(img)
    disp = _as_array(disparity)
    h, w = arr.shape
    offs = np.arange(w)[None, :]
    xs = offs - disp if direction == "right_to_left" else offs + disp
    inside = (xs >= 0.0) & (xs <= w - 1.0)
    x0 = np.clip(np.floor(np.clip(xs, 0.0, w - 1.0)).astype(np.int64), 0, max(w - 2, 0))
    rows = np.arange(h)[:, None]
    slope = arr[rows, np.minimum(x0 + 1, w - 1)] - arr[rows, x0]
    sign = -1.0 if direction == "right_to_left" else 1.0
    return np.where(inside, sign * slope, 0.0)


def _sample_rows(arr: np.ndarray, xs: np.ndarray, clamp: bool) -> tuple[np.ndarray, np.ndarray]:
    """Linearly sample each row of ``arr`` at float x coordinates ``xs``.

    Returns (values, validity). Out-of-range samples are 0 with validity
    False, unless ``clamp`` extends the edge value (validity still reports
    in-bounds-ness so callers can tell).
    """
    h, w = arr.shape
    valid = (xs >= 0.0) & (xs <= w - 1.0)
    xq = np.clip(xs, 0.0, w - 1.0) if clamp else xs
    x0 = np.clip(np.floor(xq).astype(np.int64), 0, max(w - 2, 0))
    frac = xq - x0
    rows = np.arange(h)[:, None]
    vals = (1.0 - frac) * arr[rows, x0] + frac * arr[rows, np.minimum(x0 + 1, w - 1)]
    if not clamp:
        vals = np.where(valid, vals, 0.0)
    return vals, valid


def _check_direction(direction: str, disp) -> None:
    if direction not in ("right_to_left", "left_to_right"):
        raise ValueError("direction must be 'right_to_left' or 'left_to_right'")
    if isinstance(disp, DisparityMap):
        wanted = "left" if direction == "right_to_left" else "right"
        if disp.view != wanted:
            raise ValueError(
                f"{direction} warp needs a {wanted}-view disparity map, got {disp.view}"
            )


def warp_by_disparity(img, disparity, direction: str, clamp: bool = False):
    """Backward-warp ``img`` into the view the disparity map belongs to.

    direction "right_to_left": out[y, x] = img[y, x - d[y, x]], bringing a
    right image onto the left grid with a left-view map; "left_to_right"
    samples at x + d with a right-view map. Returns (warped, validity);
    samples outside [0, W-1] are zero with validity False (edge-extended
    instead when ``clamp`` is set). An Image input yields an Image output
    with the modality preserved.
    """
    _check_direction(direction, disparity)
    arr = _as_array(img)
    disp = _as_array(disparity)
    if disp.shape != arr.shape[-2:]:
        raise ValueError("disparity shape must match image shape")
    offs = np.arange(disp.shape[1])[None, :]
    xs = offs - disp if direction == "right_to_left" else offs + disp
    if arr.ndim == 2:
        vals, valid = _sample_rows(arr, xs, clamp)
    elif arr.ndim == 3:
        vals = np.empty_like(arr)
        valid = None
        for c in range(arr.shape[0]):
            vals[c], valid = _sample_rows(arr[c], xs, clamp)
    else:
        raise ValueError("image must be H x W or C x H x W")
    if isinstance(img, Image):
        return Image(vals, img.modality), valid
    return vals, valid


def project_disparity(src: DisparityMap, via: DisparityMap) -> DisparityMap:
    """Resample one view's disparity map onto the other view's grid.

    ``via`` supplies the sampling offsets in its own view; ``src`` must come
    from the opposite view. The result lives in via's view; pixels whose
    sample fell outside the frame carry validity False.
    """
    if not isinstance(src, DisparityMap) or not isinstance(via, DisparityMap):
        raise TypeError("project_disparity expects DisparityMap arguments")
    if src.view == via.view:
        raise ValueError("src and via must come from opposite views")
    direction = "right_to_left" if via.view == "left" else "left_to_right"
    offs = np.arange(via.width)[None, :]
    xs = offs - via.data if direction == "right_to_left" else offs + via.data
    vals, valid = _sample_rows(src.data, xs, clamp=False)
    return DisparityMap(vals, view=via.view, validity=valid)


def occlusion_mask(ref: DisparityMap, other: DisparityMap, threshold: float = 2.0) -> np.ndarray:
    """Boolean mask of pixels whose two-view disparities disagree.

    A pixel in ref's view is flagged when |d_ref - P(d_other; d_ref)| >=
    threshold, P being the cross-view projection above; pixels whose
    projection lands outside the frame are always flagged.
    """
    if threshold <= 0:
        raise ValueError("occlusion threshold must be positive")
    projected = project_disparity(other, ref)
    mask = np.abs(ref.data - projected.data) >= threshold
    mask[~projected.validity] = True
    return mask


def warp_events(stream: EventStream, disparity) -> EventStream:
    """Shift right-camera events onto the left pixel grid.

    Each event at column x moves to round(x + d[y, x]) using the right-view
    disparity at its own pixel; events leaving the frame are dropped.
    Timestamps, rows, and polarities are untouched, so order is preserved.
    """
    if isinstance(disparity, DisparityMap) and disparity.view != "right":
        raise ValueError("warp_events needs the right-view disparity map")
    disp = _as_array(disparity)
    if disp.shape != (stream.height, stream.width):
        raise ValueError("disparity shape must match sensor dimensions")
    if not len(stream):
        return stream
    # floor(v + 0.5) rounds half-up, matching integer pixel semantics
    xs = np.floor(stream.x + disp[stream.y, stream.x] + 0.5).astype(np.int64)
    keep = (xs >= 0) & (xs < stream.width)
    return EventStream(
        stream.t[keep], xs[keep], stream.y[keep], stream.polarity[keep],
        stream.width, stream.height,
    )
