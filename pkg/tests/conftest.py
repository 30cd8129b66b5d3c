"""Shared fixtures: the standard scenes are expensive to render and simulate,
so they are built once per session and handed out read-only."""

import numpy as np
import pytest
from hypothesis import settings

from evstereo.imageops import Image
from evstereo.reconstruct import ReconstructionConfig, integrate_events
from evstereo.scenes import STANDARD_SCENES, render_scene, standard_scene
from evstereo.simulate import simulate_events
from evstereo.stereo import COST_C1, COST_C2

settings.register_profile("suite", deadline=None, derandomize=True, max_examples=40)
settings.load_profile("suite")


def naive_cost_volume_impl(ref, other, p, direction):
    """Scalar-loop cost volume with the same per-cell arithmetic as the
    production path: shifted views built column by column, window sums
    accumulated in row-major offset order, and the score formula applied
    term by term. Bitwise comparable, not just close."""
    a = ref.channels
    c_ch, h, w = a.shape
    r = p.patch // 2
    cost = np.empty((h, w, p.d_max + 1))
    for d in range(p.d_max + 1):
        k = direction * d
        vmask = np.zeros((h, w))
        bm = np.zeros_like(a)
        for x in range(w):
            if 0 <= x + k < w:
                vmask[:, x] = 1.0
                bm[:, :, x] = other.channels[:, :, x + k]
        am = a * vmask
        aa, bb, ab = am * am, bm * bm, am * bm
        for y in range(h):
            for x in range(w):
                if not (0 <= x + k < w):
                    cost[y, x, d] = np.inf
                    continue
                n = 0.0
                sa = [0.0] * c_ch
                sb = [0.0] * c_ch
                saa = [0.0] * c_ch
                sbb = [0.0] * c_ch
                sab = [0.0] * c_ch
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w:
                            n += vmask[yy, xx]
                            for c in range(c_ch):
                                sa[c] += am[c, yy, xx]
                                sb[c] += bm[c, yy, xx]
                                saa[c] += aa[c, yy, xx]
                                sbb[c] += bb[c, yy, xx]
                                sab[c] += ab[c, yy, xx]
                score = None
                for c in range(c_ch):
                    mu_a = sa[c] / n
                    mu_b = sb[c] / n
                    va = saa[c] / n - mu_a * mu_a
                    vb = sbb[c] / n - mu_b * mu_b
                    cab = sab[c] / n - mu_a * mu_b
                    f1 = (2.0 * mu_a * mu_b + COST_C1) / (mu_a * mu_a + mu_b * mu_b + COST_C1)
                    f2 = (2.0 * cab + COST_C2) / (va + vb + COST_C2)
                    term = f1 * f2
                    score = term if score is None else score + term
                cost[y, x, d] = 1.0 - score / c_ch
    return cost


@pytest.fixture(scope="session")
def naive_cost_volume():
    return naive_cost_volume_impl


@pytest.fixture(scope="session")
def scenes():
    """name -> rendered StereoScene for every standard scene."""
    return {name: render_scene(standard_scene(name)) for name in STANDARD_SCENES}


@pytest.fixture(scope="session")
def right_streams(scenes):
    """name -> right-camera event stream simulated from the rendered frames."""
    return {
        name: simulate_events(sc.right_frames, sc.timestamps)
        for name, sc in scenes.items()
    }


@pytest.fixture(scope="session")
def right_recons(scenes, right_streams):
    """name -> right-view reconstruction at the final frame time, decay 20.

    Decay 20 keeps the integrator's memory short enough that trailing-edge
    ghosts stay below the matcher's noise floor on these scenes.
    """
    out = {}
    for name, sc in scenes.items():
        t1 = int(sc.timestamps[-1])
        cfg = ReconstructionConfig(decay=20.0)
        out[name] = integrate_events(right_streams[name], t1, cfg)
    return out


@pytest.fixture(scope="session")
def left_images(scenes):
    """name -> left intensity Image at the reconstruction's reference time
    (the final frame for every standard scene at these decay settings)."""
    return {
        name: Image(np.asarray(sc.left_frames[-1]))
        for name, sc in scenes.items()
    }
