"""Lossless 8-bit image I/O as float tensors in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

IMAGE_EXTENSIONS = (".png", ".ppm", ".pgm", ".bmp", ".tif", ".tiff")


def load_image(path) -> Tensor:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(arr, -1, 0)))


def save_image(x: Tensor, path) -> None:
    arr = x.detach().cpu().clamp(0.0, 1.0).numpy()
    arr = np.moveaxis(arr, 0, -1)
    img = Image.fromarray(np.round(arr * 255.0).astype(np.uint8))
    img.save(path)


def list_images(directory) -> list[Path]:
    root = Path(directory)
    paths = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in IMAGE_EXTENSIONS and p.is_file())
    return paths
