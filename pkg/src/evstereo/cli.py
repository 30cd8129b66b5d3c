"""Command-line surface: simulate, match, eval, warp-events, landscape.

Configuration lives in a flat INI document whose sections mirror the run
config (scene, sim, recon, weights, match, run); any value can be overridden
on the command line with ``--set section.key=value`` or the shorthand
``--section.key=value``. Commands validate configuration and inputs before
writing anything, so argument errors never leave partial artifacts.

Exit codes: 0 success, 2 argument or config error, 3 input-data error,
4 numerical divergence during refinement.
"""

from __future__ import annotations

import argparse
import configparser
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .events import EventFormatError, parse_events, write_events
from .fileio import (
    eval_to_json,
    format_eval_table,
    read_mask_png,
    read_pfm,
    read_png,
    write_colormap_png,
    write_eval_json,
    write_landscape_csv,
    write_mask_png,
    write_pfm,
    write_png,
    write_trace_csv,
)
from .imageops import DisparityMap, occlusion_mask, warp_events
from .losses import LANDSCAPE_KINDS, LossWeights, loss_landscape
from .metrics import evaluate
from .reconstruct import ReconstructionConfig, integrate_events
from .scenes import SCENE_NAMES, SceneSpec, render_scene, standard_scene
from .simulate import SimulatorConfig, simulate_events
from .stereo import MatchParams, match_stereo, refine_self_supervised

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_DIVERGED = 4

_OVERRIDE_RE = re.compile(r"^--([a-z_]+)\.([a-z_0-9]+)=(.*)$")


class ConfigError(Exception):
    """Bad configuration or arguments (exit 2)."""


class InputError(Exception):
    """Unreadable or inconsistent input data (exit 3)."""


@dataclass(frozen=True)
class RunConfig:
    scene: SceneSpec = standard_scene("plane")
    sim: SimulatorConfig = SimulatorConfig()
    recon: ReconstructionConfig = ReconstructionConfig()
    weights: LossWeights = LossWeights()
    match: MatchParams = MatchParams()
    seed: int = 0
    out_dir: str = "out"
    t1: Optional[int] = None


_SCHEMA = {
    "scene": {"name": str, "duration": float, "velocity": float, "frame_rate": float},
    "sim": {"tau": float, "eps": float, "refractory_us": int},
    "recon": {"tau": float, "decay": float, "window_us": int},
    "weights": {
        "lambda_gd": float, "lambda_sm": float, "lambda_cc": float,
        "lambda_itn": float, "rho": float, "t": float, "window": int,
        "c1": float, "c2": float,
    },
    "match": {
        "d_max": int, "patch": int, "aggregate_iters": int,
        "refine_iters": int, "step": float, "rematch_every": int,
    },
    "run": {"seed": int, "out_dir": str, "t1": int},
}


def _coerce(section: str, key: str, raw: str):
    try:
        caster = _SCHEMA[section][key]
    except KeyError:
        raise ConfigError(f"unknown config key {section}.{key}")
    if key in ("c1", "c2", "t1") and raw.strip().lower() in ("", "auto", "none"):
        return None
    try:
        return caster(raw)
    except ValueError:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}")


def load_config(path: Optional[str], overrides=()) -> RunConfig:
    """Read the INI config (if any) and apply section.key=value overrides."""
    values = {section: {} for section in _SCHEMA}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}")
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                values[section][key] = _coerce(section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        values[section][key] = _coerce(section, key, raw)

    try:
        scene_vals = dict(values["scene"])
        scene_name = scene_vals.pop("name", "plane")
        if scene_name not in SCENE_NAMES:
            raise ConfigError(
                f"scene.name must be one of {SCENE_NAMES}, got {scene_name!r}")
        scene = replace(standard_scene(scene_name), **scene_vals)
        cfg = RunConfig(
            scene=scene,
            sim=SimulatorConfig(**values["sim"]),
            recon=ReconstructionConfig(**values["recon"]),
            weights=LossWeights(**values["weights"]),
            match=MatchParams(**values["match"]),
            seed=values["run"].get("seed", 0),
            out_dir=values["run"].get("out_dir", "out"),
            t1=values["run"].get("t1"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return cfg


def _read_png_checked(path, modality="intensity"):
    try:
        return read_png(path, modality=modality)
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}")


def _read_pfm_checked(path):
    try:
        return read_pfm(path)
    except OSError as exc:
        raise InputError(f"cannot read PFM {path}: {exc}")
    except ValueError as exc:
        raise InputError(str(exc))


def _events_format(path) -> str:
    return "binary_le" if str(path).endswith((".evs", ".bin")) else "text_csv"


def _parse_events_checked(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read events {path}: {exc}")
    try:
        return parse_events(data, _events_format(path))
    except EventFormatError as exc:
        raise InputError(f"{path}: {exc}")


def _ensure_out_dir(out_dir: str) -> Path:
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {path}: {exc}")
    return path


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out_dir = args.out_dir or cfg.out_dir
    scene = render_scene(cfg.scene)
    if cfg.match.d_max >= scene.spec.width:
        raise ConfigError("match.d_max must be below the scene width")
    events = simulate_events(scene.right_frames, scene.timestamps, cfg.sim)
    t1 = int(scene.timestamps[-1]) if cfg.t1 is None else cfg.t1
    k = scene.reference_index(t1, cfg.recon)

    out = _ensure_out_dir(out_dir)
    write_png(out / "left.png", scene.left_image(k))
    write_png(out / "right.png", scene.right_image(k))
    (out / "events.csv").write_bytes(write_events(events, "text_csv"))
    write_pfm(out / "gt_disparity.pfm", scene.gt_disparity)
    write_pfm(out / "gt_disparity_right.pfm", scene.gt_disparity_right)
    write_mask_png(out / "gt_occlusion.png", scene.gt_occlusion)
    print(f"simulated {len(events)} events over "
          f"{scene.spec.frame_count} frames -> {out}")
    return EXIT_OK


def cmd_match(args) -> int:
    cfg = load_config(args.config, args.overrides)
    weights = cfg.weights
    if args.no_general_losses:
        weights = replace(weights, lambda_cc=0.0, lambda_itn=0.0)
    out_dir = args.out_dir or cfg.out_dir

    left = _read_png_checked(args.left, modality="intensity")
    stream = _parse_events_checked(args.events)
    if (stream.width, stream.height) != (left.width, left.height):
        raise InputError(
            f"resolution mismatch: image {left.width}x{left.height}, "
            f"events {stream.width}x{stream.height}")
    if cfg.match.d_max >= left.width:
        raise ConfigError("match.d_max must be below the image width")
    if len(stream) == 0 and cfg.t1 is None:
        raise InputError("event stream is empty and run.t1 is not set")
    gt = None
    if args.gt is not None:
        gt_arr = _read_pfm_checked(args.gt)
        if gt_arr.shape != left.data.shape:
            raise InputError("GT disparity shape does not match the image")
        gt = DisparityMap(gt_arr, view="left")
    gt_mask = None
    if args.gt_mask is not None:
        if gt is None:
            raise ConfigError("--gt-mask requires --gt")
        try:
            gt_mask = read_mask_png(args.gt_mask)
        except OSError as exc:
            raise InputError(f"cannot read mask {args.gt_mask}: {exc}")
        if gt_mask.shape != left.data.shape:
            raise InputError("GT mask shape does not match the image")

    t1 = int(stream.t[-1]) if cfg.t1 is None else cfg.t1
    recon = integrate_events(stream, t1, cfg.recon)
    dl0, dr0 = match_stereo(left, recon, cfg.match, rho=weights.rho)
    result = refine_self_supervised(dl0, dr0, left, recon, weights, cfg.match)
    mask = occlusion_mask(result.dl, result.dr, weights.t)

    out = _ensure_out_dir(out_dir)
    write_pfm(out / "dl.pfm", result.dl)
    write_pfm(out / "dr.pfm", result.dr)
    write_mask_png(out / "occlusion.png", mask)
    write_colormap_png(out / "dl_preview.png", result.dl, vmin=0.0,
                       vmax=float(cfg.match.d_max))
    write_colormap_png(out / "dr_preview.png", result.dr, vmin=0.0,
                       vmax=float(cfg.match.d_max))
    write_trace_csv(out / "trace.csv", result.trace)
    print(f"matched {left.width}x{left.height} pair, "
          f"{result.iterations} refinement iterations -> {out}")
    if gt is not None:
        res = evaluate(result.dl, gt, gt_mask)
        print(format_eval_table(res))
        print(f"EPE: {res.epe:.4f}")
    if result.diverged:
        print("refinement diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_arr = _read_pfm_checked(args.pred)
    gt_arr = _read_pfm_checked(args.gt)
    if pred_arr.shape != gt_arr.shape:
        raise InputError("prediction and GT shapes do not match")
    mask = None
    if args.mask is not None:
        try:
            mask = read_mask_png(args.mask)
        except OSError as exc:
            raise InputError(f"cannot read mask {args.mask}: {exc}")
        if mask.shape != gt_arr.shape:
            raise InputError("mask shape does not match the disparity maps")
    try:
        res = evaluate(DisparityMap(pred_arr, view="left"),
                       DisparityMap(gt_arr, view="left"), mask)
    except ValueError as exc:
        raise InputError(str(exc))
    print(format_eval_table(res))
    print(eval_to_json(res), end="")
    if args.json is not None:
        write_eval_json(args.json, res)
    return EXIT_OK


def cmd_warp_events(args) -> int:
    stream = _parse_events_checked(args.events)
    disp_arr = _read_pfm_checked(args.disparity)
    if disp_arr.shape != (stream.height, stream.width):
        raise InputError("disparity map must cover the event sensor")
    disp = DisparityMap(disp_arr, view="right")
    warped = warp_events(stream, disp)
    Path(args.out).write_bytes(write_events(warped, _events_format(args.out)))
    print(f"warped {len(warped)} events, dropped {len(stream) - len(warped)}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out_dir = args.out_dir or cfg.out_dir
    if args.kind not in LANDSCAPE_KINDS:
        raise ConfigError(f"kind must be one of {LANDSCAPE_KINDS}")
    if args.max_shift < 0:
        raise ConfigError("max-shift must be non-negative")
    left = _read_png_checked(args.left)
    right = _read_png_checked(args.right)
    if left.data.shape != right.data.shape:
        raise InputError("left and right images must share a shape")
    try:
        grid = loss_landscape(left, right, args.max_shift, args.kind, cfg.weights)
    except ValueError as exc:
        raise ConfigError(str(exc))

    out = _ensure_out_dir(out_dir)
    write_landscape_csv(out / "landscape.csv", grid, args.max_shift, args.kind)
    write_colormap_png(out / "landscape.png", grid)
    idx = np.unravel_index(int(np.argmin(grid)), grid.shape)
    print(f"argmin dy={idx[0] - args.max_shift} dx={idx[1] - args.max_shift}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evstereo",
        description="Intensity/event stereo matching pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override one config value")
        p.add_argument("--out-dir", default=None)

    p_sim = sub.add_parser("simulate", help="render a scene and simulate events")
    add_common(p_sim)
    p_sim.set_defaults(handler=cmd_simulate)

    p_match = sub.add_parser("match", help="reconstruct, match, and refine")
    add_common(p_match)
    p_match.add_argument("--left", required=True, help="left intensity PNG")
    p_match.add_argument("--events", required=True, help="right-camera events")
    p_match.add_argument("--gt", default=None, help="optional GT disparity PFM")
    p_match.add_argument("--gt-mask", default=None,
                         help="PNG mask of GT pixels to exclude from the score")
    p_match.add_argument("--no-general-losses", action="store_true",
                         help="disable the cross-consistency and internal terms")
    p_match.set_defaults(handler=cmd_match)

    p_eval = sub.add_parser("eval", help="score a disparity map against GT")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--mask", default=None,
                        help="PNG mask of pixels to exclude (255 = excluded)")
    p_eval.add_argument("--json", default=None, help="also write the JSON record here")
    p_eval.set_defaults(handler=cmd_eval)

    p_warp = sub.add_parser("warp-events", help="move events into the left frame")
    p_warp.add_argument("--events", required=True)
    p_warp.add_argument("--disparity", required=True,
                        help="right-view disparity PFM")
    p_warp.add_argument("--out", required=True)
    p_warp.set_defaults(handler=cmd_warp_events)

    p_land = sub.add_parser("landscape", help="loss value over a shift grid")
    add_common(p_land)
    p_land.add_argument("--left", required=True)
    p_land.add_argument("--right", required=True)
    p_land.add_argument("--max-shift", type=int, default=8)
    p_land.add_argument("--kind", default="ssim_gradient")
    p_land.set_defaults(handler=cmd_landscape)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args, extras = parser.parse_known_args(argv)
    for extra in extras:
        m = _OVERRIDE_RE.match(extra)
        if m is None:
            print(f"error: unrecognized argument {extra!r}", file=sys.stderr)
            return EXIT_CONFIG
        args.overrides = list(getattr(args, "overrides", [])) + [
            f"{m.group(1)}.{m.group(2)}={m.group(3)}"]
    if not hasattr(args, "overrides"):
        args.overrides = []
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
