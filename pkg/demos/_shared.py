"""Synthetic test images and output helpers shared by the demo scripts."""

from pathlib import Path

import numpy as np

OUT_DIR = Path(__file__).parent / "output"


def test_image(size=96, channels=3, seed=0):
    """Procedural test scene: smooth gradient, two discs, and a grid overlay."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    base = 0.25 + 0.5 * (0.6 * xx + 0.4 * yy)
    for cy, cx, r, v in ((0.3, 0.35, 0.18, 0.95), (0.68, 0.62, 0.12, 0.05)):
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        base = np.where(disc, v, base)
    base[::12, :] = 0.85
    base[:, ::12] = 0.15
    img = np.stack([np.clip(base + 0.05 * k + 0.01 * rng.standard_normal(base.shape), 0, 1)
                    for k in range(channels)])
    return img


def out_path(name):
    OUT_DIR.mkdir(exist_ok=True)
    return OUT_DIR / name
