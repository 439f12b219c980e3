"""Synthetic structured images for demos and desk-scale training runs.

Each image layers a smooth background gradient with a handful of hard-edged
shapes (rectangles, disks, stripe textures), so edge masks are non-trivial
and codecs have both structure and texture to learn.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import save_image

import torch


def synthetic_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """One (H, W, 3) float32 image in [0, 1]."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))

    # background: oriented linear gradient between two random colors
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    c0, c1 = rng.uniform(0.05, 0.95, size=(2, 3))
    img += ramp[..., None] * c0 + (1 - ramp[..., None]) * c1

    for _ in range(rng.integers(2, 6)):
        color = rng.uniform(0, 1, size=3)
        kind = rng.integers(0, 3)
        if kind == 0:  # rectangle
            y0, x0 = rng.integers(0, h - 8), rng.integers(0, w - 8)
            y1 = rng.integers(y0 + 4, min(h, y0 + h // 2) + 1)
            x1 = rng.integers(x0 + 4, min(w, x0 + w // 2) + 1)
            img[y0:y1, x0:x1] = color
        elif kind == 1:  # disk
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(size / 12, size / 4)
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
            img[inside] = color
        else:  # stripe texture patch
            y0, x0 = rng.integers(0, h - 8), rng.integers(0, w - 8)
            y1 = rng.integers(y0 + 6, min(h, y0 + h // 2) + 1)
            x1 = rng.integers(x0 + 6, min(w, x0 + w // 2) + 1)
            period = rng.uniform(2.0, 8.0)
            stripes = 0.5 + 0.5 * np.sin(2 * np.pi * xx[y0:y1, x0:x1] / period)
            img[y0:y1, x0:x1] = stripes[..., None] * color

    noise = rng.normal(0, 0.01, size=img.shape)
    return np.clip(img + noise, 0.0, 1.0).astype(np.float32)


def generate_dataset(directory, count: int, size: int = 64, seed: int = 0) -> list[Path]:
    """Write `count` PNG images into `directory`; deterministic in seed."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        arr = synthetic_image(rng, size)
        t = torch.from_numpy(np.moveaxis(arr, -1, 0))
        path = root / f"img{i:05d}.png"
        save_image(t, path)
        paths.append(path)
    return paths
