"""Encode images to scalable bitstreams and decode either layer back.

The encoder and decoder share one conditioning discipline: group i's
entropy parameters are computed from the hyper context plus the already
*decoded* groups < i.  On the encoder side "decoded" means the same
round-and-clip values the range decoder will output, so both sides build
identical CDF tables and the reconstructed latents agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from . import rangecoder as rc
from .bitstream import (
    FLAG_DC_RESIDUAL,
    FLAG_ENHANCEMENT,
    BitstreamError,
    LayerMissingError,
    ScalableBitstream,
)
from .checkpoints import (
    KIND_BASE,
    KIND_ENHANCEMENT,
    KIND_RESIDUAL,
    LoadedModel,
    ModelMismatchError,
    check_pair,
)
from .config import lambda_id
from .core import (
    EntropyParams,
    GroupedCodec,
    concat_groups,
    crop_to,
    pad_to_multiple,
    quantize_clip,
    split_groups,
    validate_image,
)
from .fusion import fuse_groups

_CHUNK = 8192


@dataclass
class CodingLayout:
    """Encoder-side bookkeeping for tests and diagnostics.

    Byte spans are offsets into the finished section payloads marking where
    each group's symbols were emitted.  The range coder buffers up to a few
    bytes (carry cache), so the first bytes of a span may still belong to
    the previous group; consumers should leave a small guard margin.
    """

    z_hat: Tensor
    base_groups: list[Tensor]
    y_spans: list[tuple[int, int]]
    za_hat: Tensor | None = None
    enh_groups: list[Tensor] | None = None
    ya_spans: list[tuple[int, int]] | None = None


def padded_size(height: int, width: int, s: int) -> tuple[int, int]:
    return (math.ceil(height / s) * s, math.ceil(width / s) * s)


def hyper_size(lh: int, lw: int) -> tuple[int, int]:
    # two stride-2 convolutions, each rounding up
    return (math.ceil(math.ceil(lh / 2) / 2), math.ceil(math.ceil(lw / 2) / 2))


def _params_arrays(params: EntropyParams) -> tuple[np.ndarray, np.ndarray]:
    mean = params.mean.detach().contiguous().cpu().numpy().astype(np.float64).ravel()
    scale = params.scale.detach().contiguous().cpu().numpy().astype(np.float64).ravel()
    return mean, scale


def _encode_gaussian(enc: rc.RangeEncoder, values: Tensor, params: EntropyParams) -> Tensor:
    """Quantize, clip and range-encode a tensor; returns the decoded values."""
    sym = quantize_clip(values)
    flat = sym.detach().cpu().numpy().astype(np.int64).ravel()
    mean, scale = _params_arrays(params)
    for a in range(0, flat.size, _CHUNK):
        b = min(a + _CHUNK, flat.size)
        cdf = rc.build_cdf(mean[a:b], scale[a:b])
        rc.encode_symbols(enc, flat[a:b], cdf)
    return sym


def _decode_gaussian(dec: rc.RangeDecoder, params: EntropyParams,
                     dtype=torch.float32) -> Tensor:
    mean, scale = _params_arrays(params)
    out = np.empty(mean.size, dtype=np.int64)
    for a in range(0, mean.size, _CHUNK):
        b = min(a + _CHUNK, mean.size)
        cdf = rc.build_cdf(mean[a:b], scale[a:b])
        out[a:b] = rc.decode_symbols(dec, cdf)
    t = torch.from_numpy(out.astype(np.float32)).reshape(params.mean.shape)
    return t.to(dtype)


def _encode_layer(model: GroupedCodec, x_pad: Tensor) -> tuple[bytes, bytes, Tensor, list[Tensor], list[tuple[int, int]]]:
    """Run one codec's analysis/coding pass; returns (z_stream, y_stream,
    z_hat, decoded groups, per-group byte spans)."""
    y = model.analyze(x_pad)
    z = model.hyper_encode(y)
    z_enc = rc.RangeEncoder()
    z_hat = _encode_gaussian(z_enc, z, model.z_prior.expand(z.shape))
    z_stream = z_enc.finish()

    ctx = model.hyper_decode(z_hat, y.shape[-2:])
    y_enc = rc.RangeEncoder()
    decoded: list[Tensor] = []
    spans: list[tuple[int, int]] = []
    for i, g in enumerate(split_groups(y, model.num_groups), start=1):
        params = model.group_params(i, ctx, decoded)
        start = len(y_enc)
        decoded.append(_encode_gaussian(y_enc, g, params))
        spans.append((start, len(y_enc)))
    return z_stream, y_enc.finish(), z_hat, decoded, spans


def _decode_layer(model: GroupedCodec, z_stream: bytes, y_stream: bytes,
                  lh: int, lw: int) -> tuple[Tensor, list[Tensor]]:
    """Inverse of _encode_layer for known latent spatial size."""
    zh, zw = hyper_size(lh, lw)
    z_shape = (1, model.cfg.hyper_width, zh, zw)
    z_dec = rc.RangeDecoder(z_stream)
    z_hat = _decode_gaussian(z_dec, model.z_prior.expand(z_shape))

    ctx = model.hyper_decode(z_hat, (lh, lw))
    y_dec = rc.RangeDecoder(y_stream)
    decoded: list[Tensor] = []
    for i in range(1, model.num_groups + 1):
        params = model.group_params(i, ctx, decoded)
        decoded.append(_decode_gaussian(y_dec, params))
    return z_hat, decoded


def encode_image(x: Tensor, base: LoadedModel, enh: LoadedModel | None = None,
                 return_layout: bool = False):
    """Encode an image into a ScalableBitstream.

    With an enhancement model the stream carries the za/ya sections and
    sets the enhancement flag; without one the stream is base-only.
    """
    validate_image(x)
    if base.kind != KIND_BASE:
        raise ModelMismatchError(f"expected a base checkpoint, got {base.kind!r}")
    if enh is not None:
        if enh.kind != KIND_ENHANCEMENT:
            raise ModelMismatchError(
                f"expected an enhancement checkpoint, got {enh.kind!r}")
        check_pair(base, enh)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    height, width = x.shape[-2:]

    with torch.no_grad():
        x_pad, _ = pad_to_multiple(x, base.config.downsample_factor)
        z_stream, y_stream, z_hat, groups, y_spans = _encode_layer(base.model, x_pad)
        layout = CodingLayout(z_hat=z_hat, base_groups=groups, y_spans=y_spans)

        flags = 0
        za_stream = ya_stream = None
        m = 0
        if enh is not None:
            flags = FLAG_ENHANCEMENT
            m = enh.config.enh_group_count
            za_stream, ya_stream, za_hat, enh_groups, ya_spans = \
                _encode_layer(enh.model, x_pad)
            layout.za_hat = za_hat
            layout.enh_groups = enh_groups
            layout.ya_spans = ya_spans

    stream = ScalableBitstream(
        width=width, height=height,
        n=base.config.group_count, m=m,
        lambda_id=lambda_id(base.config.lam),
        model_hash=base.model_hash,
        z_stream=z_stream, y_stream=y_stream,
        za_stream=za_stream, ya_stream=ya_stream,
        flags=flags,
    )
    return (stream, layout) if return_layout else stream


def _as_stream(data) -> ScalableBitstream:
    if isinstance(data, ScalableBitstream):
        return data
    return ScalableBitstream.parse(data)


def _check_base(stream: ScalableBitstream, base: LoadedModel) -> None:
    if base.kind != KIND_BASE:
        raise ModelMismatchError(f"expected a base checkpoint, got {base.kind!r}")
    if stream.model_hash != base.model_hash:
        raise ModelMismatchError(
            "bitstream was produced by a different base model "
            f"(stream {stream.model_hash.hex()}, checkpoint {base.model_hash.hex()})"
        )
    if stream.n != base.config.group_count:
        raise ModelMismatchError(
            f"stream has {stream.n} groups, base model {base.config.group_count}")


def decode_base_latents(stream: ScalableBitstream, base: LoadedModel):
    s = base.config.downsample_factor
    hp, wp = padded_size(stream.height, stream.width, s)
    return _decode_layer(base.model, stream.z_stream, stream.y_stream,
                         hp // s, wp // s)


def decode_enh_latents(stream: ScalableBitstream, enh: LoadedModel):
    """Decoded (za_hat, groups) of the second-layer sections."""
    if not stream.has_enhancement:
        raise LayerMissingError("stream has no enhancement sections")
    s = enh.config.downsample_factor
    hp, wp = padded_size(stream.height, stream.width, s)
    return _decode_layer(enh.model, stream.za_stream, stream.ya_stream,
                         hp // s, wp // s)


def decode_machine(data, base: LoadedModel) -> Tensor:
    """Machine-layer image; enhancement sections are ignored entirely."""
    stream = _as_stream(data)
    _check_base(stream, base)
    with torch.no_grad():
        _, groups = decode_base_latents(stream, base)
        x_hat = base.model.synthesize(concat_groups(groups)).clamp(0.0, 1.0)
    return crop_to(x_hat, (stream.height, stream.width)).squeeze(0)


def decode_human(data, base: LoadedModel, enh: LoadedModel) -> Tensor:
    """Human-layer image: decode both layers, fuse, run the human decoder."""
    stream = _as_stream(data)
    _check_base(stream, base)
    if stream.is_dc:
        raise BitstreamError(
            "stream carries a DC residual layer, not a fusion layer; use decode_dc")
    if not stream.flags & FLAG_ENHANCEMENT:
        raise LayerMissingError("stream has no enhancement layer")
    if enh.kind != KIND_ENHANCEMENT:
        raise ModelMismatchError(
            f"expected an enhancement checkpoint, got {enh.kind!r}")
    check_pair(base, enh)
    if stream.m != enh.config.enh_group_count:
        raise ModelMismatchError(
            f"stream has m={stream.m}, enhancement model m={enh.config.enh_group_count}")

    s = base.config.downsample_factor
    hp, wp = padded_size(stream.height, stream.width, s)
    lh, lw = hp // s, wp // s
    with torch.no_grad():
        _, base_groups = decode_base_latents(stream, base)
        _, enh_groups = _decode_layer(enh.model, stream.za_stream,
                                      stream.ya_stream, lh, lw)
        fused = fuse_groups(base_groups, enh_groups)
        x_hat = enh.model.synthesize(concat_groups(fused)).clamp(0.0, 1.0)
    return crop_to(x_hat, (stream.height, stream.width)).squeeze(0)


# ---------------------------------------------------------------------------
# difference-compression (DC) baseline: layer 2 carries a coded residual


def shift_residual(r: Tensor) -> Tensor:
    """Map a residual in [-1, 1] into [0, 1] for coding."""
    return (r + 1.0) * 0.5


def unshift_residual(r01: Tensor) -> Tensor:
    return r01 * 2.0 - 1.0


def combine_residual(x_t_hat: Tensor, r01_hat: Tensor) -> Tensor:
    """Machine-layer image plus decoded residual, clamped to [0, 1]."""
    return torch.clamp(x_t_hat + unshift_residual(r01_hat), 0.0, 1.0)


def encode_dc(x: Tensor, base: LoadedModel, residual: LoadedModel) -> ScalableBitstream:
    """Two-layer stream whose second layer codes (x - x_t_hat) with a plain
    LIC; the base sections are identical to a normal encode."""
    validate_image(x)
    if residual.kind != KIND_RESIDUAL:
        raise ModelMismatchError(f"expected a residual checkpoint, got {residual.kind!r}")
    check_pair(base, residual)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    height, width = x.shape[-2:]

    with torch.no_grad():
        x_pad, _ = pad_to_multiple(x, base.config.downsample_factor)
        z_stream, y_stream, _, groups, _ = _encode_layer(base.model, x_pad)
        x_t_hat = base.model.synthesize(concat_groups(groups)).clamp(0.0, 1.0)
        # residual of the *decoded* machine image; both operands in [0, 1],
        # so the shifted residual is too
        r01 = shift_residual(x - crop_to(x_t_hat, (height, width)))
        r01_pad, _ = pad_to_multiple(r01, residual.config.downsample_factor)
        za_stream, ya_stream, _, _, _ = _encode_layer(residual.model, r01_pad)

    return ScalableBitstream(
        width=width, height=height,
        n=base.config.group_count, m=residual.config.group_count,
        lambda_id=lambda_id(base.config.lam),
        model_hash=base.model_hash,
        z_stream=z_stream, y_stream=y_stream,
        za_stream=za_stream, ya_stream=ya_stream,
        flags=FLAG_DC_RESIDUAL,
    )


def decode_dc(data, base: LoadedModel, residual: LoadedModel) -> Tensor:
    stream = _as_stream(data)
    _check_base(stream, base)
    if not stream.is_dc:
        raise LayerMissingError("stream has no DC residual layer")
    if residual.kind != KIND_RESIDUAL:
        raise ModelMismatchError(f"expected a residual checkpoint, got {residual.kind!r}")
    check_pair(base, residual)

    s = base.config.downsample_factor
    hp, wp = padded_size(stream.height, stream.width, s)
    with torch.no_grad():
        _, base_groups = decode_base_latents(stream, base)
        x_t_hat = base.model.synthesize(concat_groups(base_groups)).clamp(0.0, 1.0)
        x_t_hat = crop_to(x_t_hat, (stream.height, stream.width))
        _, res_groups = _decode_layer(residual.model, stream.za_stream,
                                      stream.ya_stream, hp // s, wp // s)
        r01_hat = residual.model.synthesize(concat_groups(res_groups)).clamp(0.0, 1.0)
        r01_hat = crop_to(r01_hat, (stream.height, stream.width))
        x_dc = combine_residual(x_t_hat, r01_hat)
    return x_dc.squeeze(0)
