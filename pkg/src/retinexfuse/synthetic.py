"""Synthetic IR/VIS pairs for smoke runs and demos."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter


def textured_visible(size: int = 64, seed: int = 0) -> np.ndarray:
    """Gratings, a checkerboard patch and mild noise under a lighting ramp."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    img = 0.5 + 0.2 * np.sin(2 * np.pi * 6 * x) * np.cos(2 * np.pi * 3 * y)
    q = size // 4
    checker = ((np.arange(size)[:, None] // 4 + np.arange(size)[None, :] // 4) % 2).astype(float)
    img[q : 2 * q, 2 * q : 3 * q] = 0.25 + 0.5 * checker[q : 2 * q, 2 * q : 3 * q]
    img += 0.03 * rng.standard_normal((size, size))
    img *= 0.6 + 0.4 * x
    return np.clip(img, 0.0, 1.0)


def hotspot_infrared(size: int = 64, seed: int = 0, n_spots: int = 3) -> np.ndarray:
    """Blurred bright blobs on a dim background."""
    rng = np.random.default_rng(seed + 1)
    mask = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(n_spots):
        cy, cx = rng.uniform(0.2, 0.8, size=2) * size
        r = rng.uniform(0.06, 0.15) * size
        mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1.0
    img = 0.15 + 0.75 * gaussian_filter(mask, sigma=size / 32)
    return np.clip(img, 0.0, 1.0)


def synthetic_pair(size: int = 64, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(ir, vis)`` as float64 arrays in ``[0, 1]``."""
    return hotspot_infrared(size, seed), textured_visible(size, seed)
