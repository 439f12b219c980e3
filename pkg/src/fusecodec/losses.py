"""Rate estimation and the rate-distortion training objectives.

All three objectives share the same shape: rate terms plus a Lagrangian
distortion term.  The base codec weighs a mask-gated MSE, the enhancement
codec a plain MSE over its own rate terms only.  Rates are whatever unit
the caller computed (total bits here, bits per pixel inside the training
loop); the breakdown just records the arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import torch
from torch import Tensor

if TYPE_CHECKING:
    from .core import EntropyParams

# smallest per-symbol probability before taking the log; keeps code lengths
# bounded and matches the 16-bit CDF precision of the real coder
PROB_FLOOR = 2.0 ** -15

_SQRT2 = math.sqrt(2.0)


@dataclass
class LossBreakdown:
    rate_y: Tensor | float
    rate_z: Tensor | float
    distortion: Tensor | float
    total: Tensor | float
    lam: float

    def detach(self) -> "LossBreakdown":
        def _val(v):
            return float(v.detach()) if isinstance(v, Tensor) else float(v)

        return LossBreakdown(_val(self.rate_y), _val(self.rate_z),
                             _val(self.distortion), _val(self.total), float(self.lam))


def _gaussian_mass(values: Tensor, mean: Tensor, scale: Tensor) -> Tensor:
    upper = torch.erf((values + 0.5 - mean) / (scale * _SQRT2))
    lower = torch.erf((values - 0.5 - mean) / (scale * _SQRT2))
    return 0.5 * (upper - lower)


def estimated_rate(symbols: Tensor, params: "EntropyParams") -> Tensor:
    """Total code length in bits of `symbols` under a conditional Gaussian.

    Each element contributes -log2 of the Gaussian mass on the unit interval
    around its value, floored at PROB_FLOOR.  Differentiable in both the
    parameters and (for the additive-noise training surrogate) the symbols.
    """
    mean, scale = params.mean, params.scale
    if symbols.shape != mean.shape or symbols.shape != scale.shape:
        raise ValueError(
            f"shape mismatch: symbols {tuple(symbols.shape)}, "
            f"mean {tuple(mean.shape)}, scale {tuple(scale.shape)}"
        )
    if not (torch.isfinite(mean).all() and torch.isfinite(scale).all()):
        raise ValueError("non-finite entropy parameters")
    p = _gaussian_mass(symbols, mean, scale)
    p = torch.clamp(p, min=PROB_FLOOR)
    return -torch.log2(p).sum()


def masked_mse(x: Tensor, x_hat: Tensor, mask: Tensor) -> Tensor:
    """MSE between mask-gated images, averaged over all elements.

    Masked-out positions contribute exact zeros to the sum, so an all-zero
    mask yields 0 and an all-one mask reduces to plain MSE.  The mask
    broadcasts across the channel axis.
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    m = mask.to(x.dtype)
    if m.shape[-2:] != x.shape[-2:]:
        raise ValueError(
            f"mask spatial size {tuple(m.shape[-2:])} does not match "
            f"image {tuple(x.shape[-2:])}"
        )
    diff = x * m - x_hat * m
    return diff.pow(2).mean()


def loss_lic(x: Tensor, x_hat: Tensor, rate_y, rate_z, lam: float) -> LossBreakdown:
    """Plain rate-distortion objective: rate_y + rate_z + lam * mse."""
    distortion = (x - x_hat).pow(2).mean()
    total = rate_y + rate_z + lam * distortion
    return LossBreakdown(rate_y, rate_z, distortion, total, lam)


def loss_saicm(x: Tensor, x_hat: Tensor, mask: Tensor, rate_y, rate_z,
               lam: float) -> LossBreakdown:
    """Mask-weighted objective for the base (machine) codec."""
    distortion = masked_mse(x, x_hat, mask)
    total = rate_y + rate_z + lam * distortion
    return LossBreakdown(rate_y, rate_z, distortion, total, lam)


def loss_enh(x: Tensor, x_hat: Tensor, rate_ya, rate_za, lam: float) -> LossBreakdown:
    """Enhancement objective: its own rate terms plus full-image MSE.

    Base-layer bits are excluded by construction; freezing of the base
    weights is the training loop's responsibility.
    """
    distortion = (x - x_hat).pow(2).mean()
    total = rate_ya + rate_za + lam * distortion
    return LossBreakdown(rate_ya, rate_za, distortion, total, lam)
