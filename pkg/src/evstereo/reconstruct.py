"""Leaky log-intensity integration of event streams into images.

Each event deposits a signed step of height tau in a per-pixel state that
decays exponentially at ``decay`` (1/s); evaluating the superposition at the
query time t1 over a finite trailing window gives

    S(y, x; t1) = sum_i p_i * tau * exp(-decay * (t1 - t_i) / 1e6)

which is then min-max normalized to [0, 1] for use as a matchable image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream
from .imageops import Image


@dataclass(frozen=True)
class ReconstructionConfig:
    """Contrast step, leak rate, and trailing window for event integration."""

    tau: float = 0.15
    decay: float = 10.0  # 1/s; 0 disables the leak entirely
    window_us: int = 150_000

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")
        if self.window_us <= 0:
            raise ValueError("window_us must be positive")


def integrate_events_raw(
    stream: EventStream, t1: int, config: ReconstructionConfig = ReconstructionConfig()
) -> np.ndarray:
    """Unnormalized integration state S(t1) as an H x W float64 array.

    Only events with t in the closed window [t1 - window_us, t1] contribute;
    later events are ignored rather than an error so a long recording can be
    queried at any frame time.
    """
    sel = stream.slice_time(t1 - config.window_us, t1)
    out = np.zeros((stream.height, stream.width), dtype=np.float64)
    if len(sel):
        age_s = (t1 - sel.t).astype(np.float64) / 1e6
        contrib = sel.polarity.astype(np.float64) * config.tau * np.exp(-config.decay * age_s)
        np.add.at(out, (sel.y, sel.x), contrib)
    return out


def integrate_events(
    stream: EventStream, t1: int, config: ReconstructionConfig = ReconstructionConfig()
) -> Image:
    """Reconstruction image at time t1, min-max normalized to [0, 1].

    A constant state (including the no-events case) maps to a flat 0.5 image
    so downstream matching sees a well-defined, gradient-free input.
    """
    raw = integrate_events_raw(stream, t1, config)
    lo = float(raw.min())
    hi = float(raw.max())
    if hi - lo < 1e-12:
        return Image(np.full_like(raw, 0.5), modality="reconstruction")
    return Image((raw - lo) / (hi - lo), modality="reconstruction")


def reference_time(t1: int, config: ReconstructionConfig = ReconstructionConfig()) -> float:
    """Effective scene time (microseconds) that the reconstruction represents.

    With decay * window >= 1 the integration acts as a high-pass filter:
    current edges enter at full weight while older content is a blurred,
    subtracted average, so the structural content sits at the window end.
    As the leak weakens the image degenerates toward a plain difference over
    the window, whose content spreads toward the window midpoint; the age
    interpolates linearly between the two regimes. Pairing the intensity
    frame nearest this time avoids a motion-induced disparity bias.
    """
    w_s = config.window_us / 1e6
    lam_w = config.decay * w_s
    age_s = 0.5 * w_s * max(0.0, 1.0 - lam_w)
    return t1 - age_s * 1e6
