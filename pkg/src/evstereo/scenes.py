"""Procedural stereo scenes with exact ground truth.

A scene is a stack of fronto-parallel textured planes, each at a constant
disparity. Textures scroll horizontally at the scene velocity so the frame
sequence generates events, while the geometry (and hence the ground-truth
disparity) stays fixed. Rendering is deterministic: textures are evaluated
analytically at real-valued coordinates from hashed lattice noise, never from
a stateful RNG.

Plane stacking: in the left view, later-declared planes cover earlier ones
where their regions overlap; in the right view the nearest plane (largest
disparity) wins, which matches the left rule whenever planes are declared
back to front, as all standard scenes are. Ground-truth occlusion comes from
forward-splatting every left pixel into the right view, larger disparity
winning each landing column.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .imageops import DisparityMap, Image
from .reconstruct import ReconstructionConfig, reference_time

TEXTURES = ("perlin", "checker", "stripes")
STANDARD_SCENES = ("plane", "layers", "stripes")
# "zero" (a disparity-0 plane) is addressable by name but kept out of the
# standard tuple: property suites quantify over STANDARD_SCENES and several
# of their claims (warp must change alignment) are vacuous at zero disparity.
SCENE_NAMES = STANDARD_SCENES + ("zero",)

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class ScenePlane:
    """One fronto-parallel plane: constant disparity, region, and texture.

    ``region`` is (x0, y0, x1, y1), half-open, in left-view coordinates;
    None covers the whole frame. ``phase`` offsets the texture horizontally
    so two planes with the same texture/seed still look different.
    """

    disparity: float
    region: Optional[tuple[int, int, int, int]] = None
    texture: str = "perlin"
    seed: int = 0
    phase: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.disparity) or self.disparity < 0:
            raise ValueError("plane disparity must be finite and >= 0")
        if self.texture not in TEXTURES:
            raise ValueError(f"texture must be one of {TEXTURES}")
        if self.region is not None:
            x0, y0, x1, y1 = self.region
            if x1 <= x0 or y1 <= y0:
                raise ValueError("plane region must have positive area")


@dataclass(frozen=True)
class SceneSpec:
    """Full description of a renderable stereo sequence."""

    width: int
    height: int
    planes: tuple[ScenePlane, ...]
    velocity: float = 240.0  # texture scroll speed, px/s
    duration: float = 0.15  # seconds
    frame_rate: float = 480.0

    def __post_init__(self):
        object.__setattr__(self, "planes", tuple(self.planes))
        if self.width < 8 or self.height < 8:
            raise ValueError("scene must be at least 8 x 8")
        if not self.planes:
            raise ValueError("scene needs at least one plane")
        if self.frame_rate * self.duration < 2:
            raise ValueError("frame_rate * duration must allow at least 2 frames")

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.frame_rate)) + 1

    def timestamps(self) -> np.ndarray:
        k = np.arange(self.frame_count, dtype=np.float64)
        return np.floor(k * 1e6 / self.frame_rate + 0.5).astype(np.int64)


@dataclass(frozen=True)
class StereoScene:
    """Rendered frames plus exact disparity/occlusion ground truth."""

    spec: SceneSpec
    timestamps: np.ndarray
    left_frames: np.ndarray
    right_frames: np.ndarray
    gt_disparity: DisparityMap
    gt_disparity_right: DisparityMap
    gt_occlusion: np.ndarray

    def left_image(self, k: int) -> Image:
        return Image(self.left_frames[k], modality="intensity")

    def right_image(self, k: int) -> Image:
        return Image(self.right_frames[k], modality="intensity")

    def reference_index(self, t1: int, recon: ReconstructionConfig) -> int:
        """Frame whose timestamp is nearest the reconstruction's content
        centroid for a window ending at t1; pair this frame with the
        reconstruction to avoid a motion-induced disparity bias."""
        target = reference_time(t1, recon)
        return int(np.argmin(np.abs(self.timestamps.astype(np.float64) - target)))


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1): splitmix64 finalizer over mixed
    coordinates. Negative lattice indices wrap through uint64 on purpose."""
    z = ix.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    z ^= iy.astype(np.int64).astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
    z ^= np.uint64((seed * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def _value_noise(u: np.ndarray, v: np.ndarray, scale: float, seed: int) -> np.ndarray:
    """Smoothstep-interpolated lattice value noise in [0, 1)."""
    us = u / scale
    vs = v / scale
    iu = np.floor(us)
    iv = np.floor(vs)
    fu = us - iu
    fv = vs - iv
    wu = fu * fu * (3.0 - 2.0 * fu)
    wv = fv * fv * (3.0 - 2.0 * fv)
    h00 = _hash01(iu, iv, seed)
    h10 = _hash01(iu + 1, iv, seed)
    h01 = _hash01(iu, iv + 1, seed)
    h11 = _hash01(iu + 1, iv + 1, seed)
    top = h00 + (h10 - h00) * wu
    bot = h01 + (h11 - h01) * wu
    return top + (bot - top) * wv


def texture_value(name: str, u: np.ndarray, v: np.ndarray, seed: int = 0) -> np.ndarray:
    """Evaluate a texture at real-valued coordinates; range within [0.05, 0.95]."""
    if name == "checker":
        cell = np.mod(np.floor(u / 4.0) + np.floor(v / 4.0), 2.0)
        return 0.15 + 0.7 * cell
    if name == "stripes":
        return 0.5 + 0.45 * np.sin(2.0 * np.pi * u / 16.0)
    if name == "perlin":
        acc = _value_noise(u, v, 8.0, seed)
        acc = acc + 0.5 * _value_noise(u, v, 4.0, seed + 101)
        acc = acc + 0.25 * _value_noise(u, v, 2.0, seed + 202)
        return 0.05 + 0.9 * (acc / 1.75)
    raise ValueError(f"unknown texture {name!r}")


def _covers_left(plane: ScenePlane, xg: np.ndarray, yg: np.ndarray) -> np.ndarray:
    if plane.region is None:
        return np.ones(xg.shape, dtype=bool)
    x0, y0, x1, y1 = plane.region
    return (xg >= x0) & (xg < x1) & (yg >= y0) & (yg < y1)


def _owners(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Owning plane index per pixel for each view. Uncovered pixels fall back
    to the farthest (minimum-disparity) plane, extending the background."""
    h, w = spec.height, spec.width
    yg, xg = np.mgrid[0:h, 0:w]
    fallback = int(np.argmin([p.disparity for p in spec.planes]))
    owner_l = np.full((h, w), fallback, dtype=np.int64)
    for i, p in enumerate(spec.planes):
        owner_l[_covers_left(p, xg, yg)] = i
    owner_r = np.full((h, w), fallback, dtype=np.int64)
    best = np.full((h, w), -np.inf)
    for i, p in enumerate(spec.planes):
        # right pixel x sees plane i where its left-view point x + d lies in
        # the region; nearest plane (largest d) wins, later declaration on tie
        cover = _covers_left(p, xg + p.disparity, yg) & (p.disparity >= best)
        owner_r[cover] = i
        best[cover] = p.disparity
    return owner_l, owner_r


def _gt_occlusion(d_left: np.ndarray, d_right: np.ndarray) -> np.ndarray:
    """Left pixels invisible from the right camera, by per-row forward splat
    with larger disparity winning each landing column."""
    h, w = d_left.shape
    occl = np.ones((h, w), dtype=bool)
    xs = np.arange(w)
    for y in range(h):
        r = np.floor(xs - d_left[y] + 0.5).astype(np.int64)
        inside = (r >= 0) & (r < w)
        best = np.full(w, -np.inf)
        np.maximum.at(best, r[inside], d_left[y][inside])
        vis = inside.copy()
        vis[inside] = d_left[y][inside] >= best[r[inside]]
        occl[y] = ~vis
    return occl


def render_scene(spec: SceneSpec) -> StereoScene:
    """Render the left/right frame stacks and exact ground truth.

    At every instant, corresponding pixels are bit-identical: the right frame
    evaluates each plane's texture at (x + d) + (velocity * t + phase), the
    same real number the left frame uses at column x + d.
    """
    h, w = spec.height, spec.width
    ts = spec.timestamps()
    owner_l, owner_r = _owners(spec)
    d_left = np.array([p.disparity for p in spec.planes])[owner_l]
    d_right = np.array([p.disparity for p in spec.planes])[owner_r]
    yg, xg = np.mgrid[0:h, 0:w]
    xg = xg.astype(np.float64)
    yg_f = yg.astype(np.float64)
    left = np.empty((ts.size, h, w))
    right = np.empty((ts.size, h, w))
    for k, t_us in enumerate(ts):
        t_s = float(t_us) / 1e6
        for i, p in enumerate(spec.planes):
            off = spec.velocity * t_s + p.phase
            sel_l = owner_l == i
            sel_r = owner_r == i
            if np.any(sel_l):
                left[k][sel_l] = texture_value(
                    p.texture, (xg + 0.0)[sel_l] + off, yg_f[sel_l], p.seed
                )
            if np.any(sel_r):
                right[k][sel_r] = texture_value(
                    p.texture, (xg + p.disparity)[sel_r] + off, yg_f[sel_r], p.seed
                )
    return StereoScene(
        spec=spec,
        timestamps=ts,
        left_frames=left,
        right_frames=right,
        gt_disparity=DisparityMap(d_left, view="left"),
        gt_disparity_right=DisparityMap(d_right, view="right"),
        gt_occlusion=_gt_occlusion(d_left, d_right),
    )


def standard_scene(name: str) -> SceneSpec:
    """Named scenes shared by the test suite and the CLI defaults."""
    if name == "zero":
        return SceneSpec(
            width=64,
            height=64,
            planes=(ScenePlane(disparity=0.0, texture="perlin", seed=7),),
            velocity=240.0,
            duration=0.15,
            frame_rate=960.0,
        )
    if name == "plane":
        return SceneSpec(
            width=64,
            height=64,
            planes=(ScenePlane(disparity=6.0, texture="perlin", seed=7),),
            velocity=240.0,
            duration=0.15,
            frame_rate=960.0,
        )
    if name == "layers":
        return SceneSpec(
            width=64,
            height=64,
            planes=(
                ScenePlane(disparity=2.0, texture="perlin", seed=3),
                ScenePlane(disparity=10.0, region=(24, 18, 44, 46), texture="perlin", seed=11, phase=37.0),
            ),
            velocity=240.0,
            duration=0.15,
            frame_rate=960.0,
        )
    if name == "stripes":
        return SceneSpec(
            width=48,
            height=48,
            planes=(ScenePlane(disparity=5.0, texture="stripes"),),
            velocity=200.0,
            duration=0.15,
            frame_rate=960.0,
        )
    raise ValueError(f"unknown standard scene {name!r}; choose from {SCENE_NAMES}")
