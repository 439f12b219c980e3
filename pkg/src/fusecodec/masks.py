"""Binary masks gating the base codec's reconstruction loss.

Masks either come from precomputed files (one single-channel image per
training image, named `<stem>.mask`) or from the built-in edge detector:
Otsu-thresholded gradient magnitude, dilated to a band.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.morphology import disk
from torch import Tensor

MASK_SUFFIX = ".mask"
DEFAULT_DILATION_RADIUS = 2

_LUMA = np.array([0.299, 0.587, 0.114])


class MaskError(ValueError):
    pass


def mask_path_for(image_path) -> Path:
    p = Path(image_path)
    return p.with_name(p.stem + MASK_SUFFIX)


def load_mask(path, expected_size: tuple[int, int]) -> np.ndarray:
    """Read a mask file: pixels >= 128 map to 1, the rest to 0.

    expected_size is (height, width) of the paired image; a mismatch is an
    error, never silently resized.
    """
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except (OSError, ValueError) as exc:
        raise MaskError(f"cannot read mask file {path}: {exc}") from exc
    if arr.shape != tuple(expected_size):
        raise MaskError(
            f"mask {path} is {arr.shape}, expected {tuple(expected_size)}"
        )
    return (arr >= 128).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    """Write {0,1} mask as an 8-bit single-channel PGM payload."""
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    with open(path, "wb") as fh:
        Image.fromarray(arr, mode="L").save(fh, format="PPM")


def edge_mask(x: Tensor | np.ndarray, dilation_radius: int = DEFAULT_DILATION_RADIUS) -> np.ndarray:
    """Edge-band mask: gradient magnitude over luma, Otsu threshold, then
    dilation by a disk of the given radius.

    Accepts a (3, H, W) tensor or an (H, W, 3) array in [0, 1].  A constant
    image has no gradient and yields the all-zeros mask.
    """
    if dilation_radius < 0:
        raise MaskError("dilation_radius must be >= 0")
    if isinstance(x, Tensor):
        arr = x.detach().cpu().numpy()
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise MaskError(f"expected (3, H, W) tensor, got {arr.shape}")
        arr = np.moveaxis(arr, 0, -1)
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[-1] != 3:
            raise MaskError(f"expected (H, W, 3) array, got {arr.shape}")
    gray = arr.astype(np.float64) @ _LUMA
    gx = ndimage.sobel(gray, axis=1)
    gy = ndimage.sobel(gray, axis=0)
    mag = np.hypot(gx, gy)
    if mag.max() <= mag.min():
        return np.zeros(gray.shape, dtype=np.uint8)
    mask = mag > threshold_otsu(mag)
    if dilation_radius > 0:
        mask = ndimage.binary_dilation(mask, structure=disk(dilation_radius))
    return mask.astype(np.uint8)


def mask_for_image(image_path, x: Tensor, mask_dir=None,
                   dilation_radius: int = DEFAULT_DILATION_RADIUS) -> np.ndarray:
    """Mask from `<mask_dir>/<stem>.mask` when present, else edge_mask(x)."""
    if mask_dir is not None:
        candidate = Path(mask_dir) / (Path(image_path).stem + MASK_SUFFIX)
        if candidate.exists():
            return load_mask(candidate, tuple(x.shape[-2:]))
    return edge_mask(x, dilation_radius)
