"""The two neural codecs and their shared latent machinery.

The base codec turns an image into a C-channel latent split into n channel
groups that are coded sequentially: group i's Gaussian parameters are
predicted from the hyperprior context plus the already-decoded groups < i.
The enhancement codec is the same construction with m <= n groups; its
decoder, however, consumes the full C-channel fused latent and targets
human viewing.

Conventions: images are float tensors in [0, 1], channels-first, with an
optional leading batch axis.  Group feedback always uses eval-quantized
(rounded, support-clipped) values, including during training, so the
conditioning path is identical between training, encoding and decoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import ModelConfig
from .losses import estimated_rate
from .rangecoder import SUPPORT_MAX, SUPPORT_MIN

# lower bound on predicted Gaussian scales; keeps CDF tables well-conditioned
SCALE_FLOOR = 0.11


@dataclass
class LatentGroups:
    """Ordered channel groups of one latent tensor."""

    groups: list[Tensor]
    quantized: bool = False

    def __post_init__(self):
        if not self.groups:
            raise ValueError("LatentGroups needs at least one group")
        hw = self.groups[0].shape[-2:]
        for g in self.groups[1:]:
            if g.shape[-2:] != hw:
                raise ValueError("groups must share spatial dimensions")

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def __getitem__(self, i: int) -> Tensor:
        return self.groups[i]


@dataclass
class EntropyParams:
    """Per-element Gaussian mean/scale for one latent tensor."""

    mean: Tensor
    scale: Tensor

    def __post_init__(self):
        if self.mean.shape != self.scale.shape:
            raise ValueError("mean and scale must have identical shapes")


def quantize(x: Tensor, mode: str, generator: torch.Generator | None = None) -> Tensor:
    """Quantization and its training surrogate.

    eval: round to nearest integer, ties away from zero.
    train: additive uniform noise in [-0.5, 0.5), differentiable.
    """
    if mode == "eval":
        return torch.sign(x) * torch.floor(x.abs() + 0.5)
    if mode == "train":
        noise = torch.rand(x.shape, generator=generator, dtype=x.dtype,
                           device=x.device) - 0.5
        return x + noise
    raise ValueError(f"unknown quantize mode {mode!r}")


def quantize_clip(x: Tensor) -> Tensor:
    """Eval quantization clipped into the entropy coder's symbol support.

    This is the canonical decoded value: encoder feedback, decoder output
    and synthesis input all use it, so all three agree bit-exactly.
    """
    return torch.clamp(quantize(x, "eval"), SUPPORT_MIN, SUPPORT_MAX)


def split_groups(y: Tensor, n: int) -> list[Tensor]:
    """Split a latent along channels into n equal groups."""
    channels = y.shape[-3]
    if channels % n != 0:
        raise ValueError(f"cannot split {channels} channels into {n} groups")
    return list(torch.split(y, channels // n, dim=-3))


def concat_groups(groups) -> Tensor:
    """Channel-axis concatenation; exact inverse of split_groups."""
    gs = list(groups)
    if not gs:
        raise ValueError("no groups to concatenate")
    hw = gs[0].shape[-2:]
    if any(g.shape[-2:] != hw for g in gs):
        raise ValueError("groups must share spatial dimensions")
    return torch.cat(gs, dim=-3)


def pad_to_multiple(x: Tensor, s: int) -> tuple[Tensor, tuple[int, int]]:
    """Reflect-pad the trailing two dims up to the next multiple of s.

    Returns the padded tensor and the original (H, W) for cropping after
    synthesis.  Falls back to replicate padding when the image is smaller
    than the required pad (reflect needs pad < size).
    """
    h, w = x.shape[-2:]
    ph = (-h) % s
    pw = (-w) % s
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    x = F.pad(x, (0, pw, 0, ph), mode=mode)
    if squeeze:
        x = x.squeeze(0)
    return x, (h, w)


def crop_to(x: Tensor, size: tuple[int, int]) -> Tensor:
    return x[..., : size[0], : size[1]]


def validate_image(x: Tensor) -> None:
    if x.dim() not in (3, 4) or x.shape[-3] != 3:
        raise ValueError(f"expected a 3-channel image tensor, got shape {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError("image contains non-finite values")
    if x.min() < 0 or x.max() > 1:
        raise ValueError("image values must lie in [0, 1]")


def conv(in_ch: int, out_ch: int, kernel: int = 5, stride: int = 2) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2)


def deconv(in_ch: int, out_ch: int, kernel: int = 5, stride: int = 2) -> nn.ConvTranspose2d:
    return nn.ConvTranspose2d(in_ch, out_ch, kernel, stride=stride,
                              padding=kernel // 2, output_padding=stride - 1)


class AnalysisTransform(nn.Sequential):
    """Strided conv stack, one stride-2 stage per factor of two of downsampling."""

    def __init__(self, in_ch: int, hidden: tuple[int, ...], out_ch: int):
        widths = [in_ch, *hidden, out_ch]
        layers = []
        for i in range(len(widths) - 1):
            layers.append(conv(widths[i], widths[i + 1]))
            if i < len(widths) - 2:
                layers.append(nn.LeakyReLU(inplace=True))
        super().__init__(*layers)


class SynthesisTransform(nn.Sequential):
    """Mirrored transposed-conv stack."""

    def __init__(self, in_ch: int, hidden: tuple[int, ...], out_ch: int):
        widths = [in_ch, *hidden, out_ch]
        layers = []
        for i in range(len(widths) - 1):
            layers.append(deconv(widths[i], widths[i + 1]))
            if i < len(widths) - 2:
                layers.append(nn.LeakyReLU(inplace=True))
        super().__init__(*layers)


class HyperAnalysis(nn.Sequential):
    def __init__(self, latent_ch: int, width: int):
        super().__init__(
            conv(latent_ch, width, kernel=3, stride=1),
            nn.LeakyReLU(inplace=True),
            conv(width, width),
            nn.LeakyReLU(inplace=True),
            conv(width, width),
        )


class HyperSynthesis(nn.Sequential):
    def __init__(self, width: int, out_ch: int):
        super().__init__(
            deconv(width, width),
            nn.LeakyReLU(inplace=True),
            deconv(width, width * 3 // 2),
            nn.LeakyReLU(inplace=True),
            conv(width * 3 // 2, out_ch, kernel=3, stride=1),
        )


class GroupPredictor(nn.Module):
    """Predicts mean/scale for one group from [hyper context, groups < i]."""

    def __init__(self, in_ch: int, width: int, group_width: int):
        super().__init__()
        self.net = nn.Sequential(
            conv(in_ch, width, kernel=3, stride=1),
            nn.GELU(),
            conv(width, width, kernel=3, stride=1),
            nn.GELU(),
            conv(width, 2 * group_width, kernel=1, stride=1),
        )

    def forward(self, ctx: Tensor) -> tuple[Tensor, Tensor]:
        mean, raw_scale = self.net(ctx).chunk(2, dim=-3)
        return mean, SCALE_FLOOR + F.softplus(raw_scale)


class FactorizedGaussianPrior(nn.Module):
    """Learned per-channel Gaussian prior for the hyper latent."""

    def __init__(self, channels: int):
        super().__init__()
        self.mean = nn.Parameter(torch.zeros(channels))
        self.raw_scale = nn.Parameter(torch.zeros(channels))

    def expand(self, shape) -> EntropyParams:
        view = (1,) * (len(shape) - 3) + (-1, 1, 1)
        mean = self.mean.view(view).expand(shape)
        scale = (SCALE_FLOOR + F.softplus(self.raw_scale)).view(view).expand(shape)
        return EntropyParams(mean, scale)


class GroupedCodec(nn.Module):
    """Analysis + hyperprior + sequential per-group entropy parameters.

    Subclasses fix the latent width / group count and attach a synthesis
    transform.
    """

    def __init__(self, cfg: ModelConfig, latent_channels: int, num_groups: int):
        super().__init__()
        self.cfg = cfg
        self.latent_channels = latent_channels
        self.num_groups = num_groups
        self.group_width = latent_channels // num_groups
        self.g_a = AnalysisTransform(3, cfg.hidden_widths, latent_channels)
        self.h_a = HyperAnalysis(latent_channels, cfg.hyper_width)
        self.h_s = HyperSynthesis(cfg.hyper_width, 2 * latent_channels)
        self.z_prior = FactorizedGaussianPrior(cfg.hyper_width)
        self.predictors = nn.ModuleList(
            GroupPredictor(2 * latent_channels + i * self.group_width,
                           cfg.predictor_width, self.group_width)
            for i in range(num_groups)
        )

    def analyze(self, x: Tensor) -> Tensor:
        return self.g_a(x)

    def hyper_encode(self, y: Tensor) -> Tensor:
        return self.h_a(y)

    def hyper_decode(self, z_hat: Tensor, latent_hw: tuple[int, int] | None = None) -> Tensor:
        """Context tensor (2 * latent channels), cropped back to the latent
        resolution when the hyper downsampling rounded it up."""
        ctx = self.h_s(z_hat)
        if latent_hw is not None:
            ctx = ctx[..., : latent_hw[0], : latent_hw[1]]
        return ctx

    def group_params(self, i: int, ctx: Tensor, prev: list[Tensor]) -> EntropyParams:
        """Entropy parameters for 1-based group i given decoded groups < i."""
        if not 1 <= i <= self.num_groups:
            raise ValueError(f"group index {i} out of range 1..{self.num_groups}")
        if len(prev) != i - 1:
            raise ValueError(f"group {i} needs {i - 1} prior groups, got {len(prev)}")
        inp = torch.cat([ctx, *prev], dim=-3) if prev else ctx
        mean, scale = self.predictors[i - 1](inp)
        return EntropyParams(mean, scale)

    def eval_latents(self, x: Tensor) -> tuple[Tensor, Tensor, list[Tensor]]:
        """Deterministic coding-side pass: (z_hat, ctx, decoded groups).

        All quantization is round+clip, exactly what the entropy decoder
        reproduces, so these latents match the decoded ones bit for bit.
        """
        y = self.g_a(x)
        z = self.h_a(y)
        z_hat = quantize_clip(z)
        ctx = self.hyper_decode(z_hat, y.shape[-2:])
        decoded = [quantize_clip(g) for g in split_groups(y, self.num_groups)]
        return z_hat, ctx, decoded

    def rate_forward(self, x: Tensor, generator: torch.Generator | None = None) -> dict:
        """Training-surrogate pass shared by both codecs.

        Rates are measured on noise-quantized values; group feedback uses
        eval-quantized values so the conditioning path matches decode time.
        Returns the noisy groups for the synthesis path and total bits.
        """
        y = self.g_a(x)
        z = self.h_a(y)
        z_tilde = quantize(z, "train", generator)
        bits_z = estimated_rate(z_tilde, self.z_prior.expand(z_tilde.shape))
        ctx = self.hyper_decode(z_tilde, y.shape[-2:])
        decoded: list[Tensor] = []
        noisy: list[Tensor] = []
        bits_y = x.new_zeros(())
        for i, g in enumerate(split_groups(y, self.num_groups), start=1):
            params = self.group_params(i, ctx, decoded)
            g_tilde = quantize(g, "train", generator)
            bits_y = bits_y + estimated_rate(g_tilde, params)
            noisy.append(g_tilde)
            decoded.append(quantize_clip(g).detach())
        return {"y_groups": noisy, "bits_y": bits_y, "bits_z": bits_z}


class BaseCodec(GroupedCodec):
    """Machine-layer codec: n latent groups, edge/structure reconstruction."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg, cfg.latent_channels, cfg.group_count)
        self.g_s = SynthesisTransform(cfg.latent_channels,
                                      tuple(reversed(cfg.hidden_widths)), 3)

    def synthesize(self, y_hat: Tensor) -> Tensor:
        return self.g_s(y_hat)

    def forward(self, x: Tensor, generator: torch.Generator | None = None) -> dict:
        out = self.rate_forward(x, generator)
        out["x_hat"] = self.synthesize(concat_groups(out["y_groups"]))
        return out


class EnhancementCodec(GroupedCodec):
    """Additional-information codec: m groups, plus the human-layer decoder
    that consumes the fused n-group latent."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg, cfg.enh_latent_channels, cfg.enh_group_count)
        self.g_human = SynthesisTransform(cfg.latent_channels,
                                          tuple(reversed(cfg.hidden_widths)), 3)

    def synthesize(self, yf: Tensor) -> Tensor:
        return self.g_human(yf)

    def forward(self, x: Tensor, base_groups: list[Tensor],
                generator: torch.Generator | None = None) -> dict:
        from .fusion import fuse_groups  # local import avoids a module cycle

        out = self.rate_forward(x, generator)
        fused = fuse_groups(base_groups, out["y_groups"])
        out["x_hat"] = self.synthesize(concat_groups(fused))
        return out


def build_base_codec(cfg: ModelConfig) -> BaseCodec:
    """Construct with weight init seeded from the config."""
    torch.manual_seed(cfg.seed)
    return BaseCodec(cfg)


def build_enhancement_codec(cfg: ModelConfig) -> EnhancementCodec:
    torch.manual_seed(cfg.seed + 1)
    return EnhancementCodec(cfg)


def _as_group_list(groups, expected: int, require_quantized: bool) -> list[Tensor]:
    if isinstance(groups, LatentGroups):
        if require_quantized and not groups.quantized:
            raise ValueError("expected quantized latent groups")
        gs = groups.groups
    else:
        gs = list(groups)
    if len(gs) != expected:
        raise ValueError(f"expected {expected} groups, got {len(gs)}")
    return gs


# ---------------------------------------------------------------------------
# operation-level wrappers


def analyze_base(x: Tensor, model: BaseCodec) -> Tensor:
    """Base latent of an image (reflect-padded up to the stride multiple)."""
    validate_image(x)
    x_pad, _ = pad_to_multiple(x, model.cfg.downsample_factor)
    return model.analyze(x_pad)


def analyze_enhancement(x: Tensor, model: EnhancementCodec) -> LatentGroups:
    """Enhancement latent, split into its m groups."""
    validate_image(x)
    x_pad, _ = pad_to_multiple(x, model.cfg.downsample_factor)
    ya = model.analyze(x_pad)
    return LatentGroups(split_groups(ya, model.num_groups))


def group_entropy_params(model: GroupedCodec, i: int, ctx: Tensor,
                         prev) -> EntropyParams:
    prev_list = list(prev.groups if isinstance(prev, LatentGroups) else prev)
    return model.group_params(i, ctx, prev_list)


def synth_machine(y_hat, model: BaseCodec) -> Tensor:
    """Machine-layer image from n quantized groups, clamped to [0, 1]."""
    gs = _as_group_list(y_hat, model.num_groups, require_quantized=True)
    return model.synthesize(concat_groups(gs)).clamp(0.0, 1.0)


def synth_human(yf, model: EnhancementCodec) -> Tensor:
    """Human-layer image from the n fused groups, clamped to [0, 1]."""
    gs = _as_group_list(yf, model.cfg.group_count, require_quantized=False)
    return model.synthesize(concat_groups(gs)).clamp(0.0, 1.0)
