"""Square-window sums and shifts used by the SSIM losses and the matcher.

box_sum accumulates the window offsets one shifted array at a time, in
row-major offset order with zero fill outside the frame. Per pixel this
performs the identical sequence of float additions a naive per-pixel offset
loop would (adding 0.0 where the loop would skip an out-of-frame offset is an
exact no-op), so window statistics here agree bitwise with straight-line
reference code. Do not replace with cumulative-sum tricks; those change the
summation order and break that equality.
"""

from __future__ import annotations

import numpy as np


def shift2d(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[y, x] = arr[y + dy, x + dx], zero where that falls off the frame."""
    h, w = arr.shape[-2:]
    out = np.zeros_like(arr)
    # Stops clamped at 0: a shift of the full frame or more selects nothing
    # (a bare negative stop would wrap around to the other end).
    ys = slice(max(0, -dy), max(0, min(h, h - dy)))
    xs = slice(max(0, -dx), max(0, min(w, w - dx)))
    yd = slice(max(0, dy), max(0, min(h, h + dy)))
    xd = slice(max(0, dx), max(0, min(w, w + dx)))
    out[..., ys, xs] = arr[..., yd, xd]
    return out


def shift_columns(arr: np.ndarray, k: int) -> np.ndarray:
    """out[..., x] = arr[..., x + k], zero-filled at the frame edges."""
    return shift2d(arr.reshape((-1,) + arr.shape[-2:]), 0, k).reshape(arr.shape)


def box_sum(arr: np.ndarray, win: int) -> np.ndarray:
    """Sum of arr over the win x win window centered at each pixel.

    Out-of-frame window cells contribute nothing. win must be odd.
    """
    if win < 1 or win % 2 == 0:
        raise ValueError("window size must be odd and positive")
    r = win // 2
    h, w = arr.shape[-2:]
    out = np.zeros_like(arr)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            # In-place slice accumulation: same per-pixel addition order as
            # out += shift2d(arr, dy, dx), minus the exact +0.0 no-ops.
            ys = slice(max(0, -dy), max(0, min(h, h - dy)))
            xs = slice(max(0, -dx), max(0, min(w, w - dx)))
            yd = slice(max(0, dy), max(0, min(h, h + dy)))
            xd = slice(max(0, dx), max(0, min(w, w + dx)))
            out[..., ys, xs] += arr[..., yd, xd]
    return out


def box_count(shape: tuple[int, int], win: int) -> np.ndarray:
    """Number of in-frame cells of a win x win window at each center."""
    return box_sum(np.ones(shape, dtype=np.float64), win)


def full_window_mask(shape: tuple[int, int], win: int) -> np.ndarray:
    """True at centers whose win x win window lies entirely in the frame."""
    h, w = shape
    r = win // 2
    mask = np.zeros((h, w), dtype=bool)
    if h >= win and w >= win:
        mask[r:h - r, r:w - r] = True
    return mask


def box_mean_valid(arr: np.ndarray, valid: np.ndarray, win: int) -> np.ndarray:
    """Window mean over valid cells only; centers with no valid cell give 0."""
    sums = box_sum(np.where(valid, arr, 0.0), win)
    counts = box_sum(valid.astype(np.float64), win)
    return np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
