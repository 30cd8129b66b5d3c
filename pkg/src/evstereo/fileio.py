"""Bit-exact readers and writers for the artifact formats.

Every format here is deterministic byte for byte: floats in text formats use
Python's shortest round-trip repr, PFM payloads are raw little-endian
float32, and colormapped previews go through a fixed lookup table rather
than a figure renderer. See docs/formats.md for the exact layouts.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np
from PIL import Image as PILImage

from .imageops import DisparityMap, Image
from .losses import LossReport
from .metrics import EvalResult

__all__ = [
    "read_pfm",
    "write_pfm",
    "read_png",
    "write_png",
    "read_mask_png",
    "write_mask_png",
    "write_colormap_png",
    "read_trace_csv",
    "write_trace_csv",
    "read_landscape_csv",
    "write_landscape_csv",
    "eval_to_json",
    "write_eval_json",
    "format_eval_table",
]


# ---------------------------------------------------------------------------
# PFM (grayscale, 32-bit float, scale -1.0 = little-endian, bottom-up rows)

def write_pfm(path, data) -> None:
    """Write a 2-D float array (or DisparityMap) as grayscale PFM."""
    if isinstance(data, DisparityMap):
        data = data.data
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PFM payload must be 2-D")
    h, w = arr.shape
    payload = arr[::-1].astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(payload)


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM back into a float64 H x W array (top-down)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        magic, rest = blob.split(b"\n", 1)
        dims, rest = rest.split(b"\n", 1)
        scale_line, payload = rest.split(b"\n", 1)
    except ValueError:
        raise ValueError(f"{path}: truncated PFM header")
    if magic != b"Pf":
        raise ValueError(f"{path}: not a grayscale PFM (magic {magic!r})")
    try:
        w, h = (int(tok) for tok in dims.split())
        scale = float(scale_line)
    except ValueError:
        raise ValueError(f"{path}: malformed PFM header")
    if w <= 0 or h <= 0 or scale == 0:
        raise ValueError(f"{path}: malformed PFM header")
    endian = "<" if scale < 0 else ">"
    expected = w * h * 4
    if len(payload) != expected:
        raise ValueError(
            f"{path}: PFM payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=f"{endian}f4").reshape(h, w)
    return arr[::-1].astype(np.float64)


# ---------------------------------------------------------------------------
# PNG (8-bit)

def write_png(path, data) -> None:
    """Write a [0, 1] float raster (or Image) as 8-bit grayscale PNG."""
    if isinstance(data, Image):
        data = data.data
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PNG payload must be 2-D")
    quantized = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    PILImage.fromarray(quantized, mode="L").save(path, format="PNG")


def read_png(path, modality: str = "intensity") -> Image:
    """Read an 8-bit grayscale PNG into an Image with values in [0, 1]."""
    with PILImage.open(path) as img:
        gray = img.convert("L")
        arr = np.asarray(gray, dtype=np.float64) / 255.0
    return Image(arr, modality=modality)


def write_mask_png(path, mask: np.ndarray) -> None:
    """Write a boolean mask as 0/255 grayscale PNG."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    PILImage.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG")


def read_mask_png(path) -> np.ndarray:
    with PILImage.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr > 127


def write_colormap_png(path, data, vmin: Optional[float] = None,
                       vmax: Optional[float] = None, cmap: str = "viridis") -> None:
    """Colormapped 8-bit RGB preview. The colormap lookup is applied
    directly (no figure pipeline), so the bytes depend only on the data."""
    if isinstance(data, DisparityMap):
        data = data.data
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("preview payload must be 2-D")
    lo = float(arr.min()) if vmin is None else float(vmin)
    hi = float(arr.max()) if vmax is None else float(vmax)
    span = hi - lo
    normed = np.zeros_like(arr) if span <= 0 else np.clip((arr - lo) / span, 0.0, 1.0)
    import matplotlib

    lut = matplotlib.colormaps[cmap]
    rgba = lut(normed)
    rgb = np.floor(rgba[:, :, :3] * 255.0 + 0.5).astype(np.uint8)
    PILImage.fromarray(rgb, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# CSV traces and heatmaps

TRACE_HEADER = "iteration,total,gd,sm,cc,itn"


def write_trace_csv(path, trace: Sequence[LossReport]) -> None:
    lines = [TRACE_HEADER]
    for i, rep in enumerate(trace):
        lines.append(",".join([
            str(i), repr(rep.total), repr(rep.gd), repr(rep.sm),
            repr(rep.cc), repr(rep.itn),
        ]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path):
    """Rows of (iteration, total, gd, sm, cc, itn) as a list of tuples."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(f"{path}: missing trace header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 6:
            raise ValueError(f"{path}: malformed trace row {ln!r}")
        rows.append((int(parts[0]),) + tuple(float(p) for p in parts[1:]))
    return rows


def write_landscape_csv(path, grid: np.ndarray, max_shift: int, kind: str) -> None:
    """Heatmap grid as CSV: one comment line with the shift range and loss
    kind, then one row per dy (from -max_shift to +max_shift)."""
    g = np.asarray(grid, dtype=np.float64)
    side = 2 * max_shift + 1
    if g.shape != (side, side):
        raise ValueError("grid shape does not match max_shift")
    lines = [f"# evstereo landscape max_shift={max_shift} kind={kind}"]
    for row in g:
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_landscape_csv(path):
    """Returns (grid, max_shift, kind)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or not lines[0].startswith("# evstereo landscape "):
        raise ValueError(f"{path}: missing landscape header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[3:])
    max_shift = int(fields["max_shift"])
    kind = fields["kind"]
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    grid = np.asarray(rows, dtype=np.float64)
    side = 2 * max_shift + 1
    if grid.shape != (side, side):
        raise ValueError(f"{path}: grid shape does not match header")
    return grid, max_shift, kind


# ---------------------------------------------------------------------------
# Eval records

def eval_to_json(result: EvalResult) -> str:
    record = {
        "epe": result.epe,
        "bad1": result.bad1,
        "bad3": result.bad3,
        "bad5": result.bad5,
        "valid_count": result.valid_count,
    }
    return json.dumps(record, sort_keys=True, indent=2) + "\n"


def write_eval_json(path, result: EvalResult) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(eval_to_json(result))


def format_eval_table(result: EvalResult) -> str:
    rows = [
        ("epe", f"{result.epe:.4f}"),
        ("bad1", f"{result.bad1:.4f}"),
        ("bad3", f"{result.bad3:.4f}"),
        ("bad5", f"{result.bad5:.4f}"),
        ("valid", str(result.valid_count)),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
