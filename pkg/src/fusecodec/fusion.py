"""Latent-space fusion of the two layers.

The first m base groups are summed element-wise with the m enhancement
groups; the remaining n - m base groups pass through untouched (the same
tensor object, not a copy), so they stay bit-identical.
"""

from __future__ import annotations

from torch import Tensor

from .core import LatentGroups


def fuse_groups(base, enh) -> list[Tensor]:
    """yf_k = y_k + ya_k for k <= m, yf_k = y_k for m < k <= n.

    Inputs may be LatentGroups or plain sequences; returns a plain list in
    base-group order.  Fusion happens after entropy decoding on quantized
    latents and the sums are intentionally not re-quantized.
    """
    base_list = list(base.groups if isinstance(base, LatentGroups) else base)
    enh_list = list(enh.groups if isinstance(enh, LatentGroups) else enh)
    if len(enh_list) > len(base_list):
        raise ValueError(
            f"enhancement has {len(enh_list)} groups but base only {len(base_list)}"
        )
    fused: list[Tensor] = []
    for k, (b, a) in enumerate(zip(base_list, enh_list), start=1):
        if b.shape != a.shape:
            raise ValueError(
                f"group {k} shape mismatch: base {tuple(b.shape)} vs "
                f"enhancement {tuple(a.shape)}"
            )
        fused.append(b + a)
    fused.extend(base_list[len(enh_list):])
    return fused
