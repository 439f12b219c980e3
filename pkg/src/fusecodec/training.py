"""Two-stage training: base codec first, then enhancement against a frozen base.

The training objective follows the usual LIC normalization: rates enter in
bits per pixel and the MSE is scaled by 255^2, so the published lambda
values keep their conventional meaning.  All stochasticity (weight init,
sample order, crops, quantization noise) is derived from the config seed
and runs single-threaded, making checkpoints bit-reproducible.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch

from .checkpoints import (
    KIND_BASE,
    KIND_ENHANCEMENT,
    KIND_RESIDUAL,
    LoadedModel,
    load_model,
    model_hash,
    save_checkpoint,
    state_to_arrays,
)
from .config import TrainConfig
from .core import BaseCodec, build_base_codec, build_enhancement_codec
from .coding import shift_residual
from .imageio import list_images, load_image
from .losses import LossBreakdown, loss_enh, loss_lic, loss_saicm
from .masks import mask_for_image

# distortion scale pairing bits-per-pixel rates with [0,1]-range MSE
DISTORTION_SCALE = 255.0 ** 2

GRAD_CLIP_NORM = 1.0

LOG_COLUMNS = ("step", "rate_y", "rate_z", "distortion", "total")


class TrainingError(RuntimeError):
    pass


class _Sampler:
    """Deterministic crop sampler: seeded shuffle, seeded crop positions,
    images and full-frame masks cached in memory."""

    def __init__(self, cfg: TrainConfig, with_masks: bool):
        self.cfg = cfg
        self.with_masks = with_masks
        self.paths = list_images(cfg.dataset)
        if not self.paths:
            raise TrainingError(f"dataset {cfg.dataset} contains no images")
        self.rng = np.random.default_rng(cfg.seed)
        self._images: dict[int, torch.Tensor] = {}
        self._masks: dict[int, torch.Tensor] = {}
        self._order: list[int] = []

    def _image(self, idx: int) -> torch.Tensor:
        if idx not in self._images:
            x = load_image(self.paths[idx])
            c = self.cfg.crop_size
            if x.shape[-2] < c or x.shape[-1] < c:
                raise TrainingError(
                    f"{self.paths[idx]} is {tuple(x.shape[-2:])}, smaller than "
                    f"crop_size {c}")
            self._images[idx] = x
        return self._images[idx]

    def _full_mask(self, idx: int) -> torch.Tensor:
        if idx not in self._masks:
            x = self._image(idx)
            m = mask_for_image(self.paths[idx], x, self.cfg.mask_dir,
                               self.cfg.dilation_radius)
            self._masks[idx] = torch.from_numpy(m.astype(np.float32))
        return self._masks[idx]

    def _next_index(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.paths)))
        return int(self._order.pop())

    def batch(self) -> tuple[torch.Tensor, torch.Tensor | None]:
        c = self.cfg.crop_size
        xs, ms = [], []
        for _ in range(self.cfg.batch_size):
            idx = self._next_index()
            x = self._image(idx)
            h, w = x.shape[-2:]
            y0 = int(self.rng.integers(0, h - c + 1))
            x0 = int(self.rng.integers(0, w - c + 1))
            xs.append(x[:, y0:y0 + c, x0:x0 + c])
            if self.with_masks:
                ms.append(self._full_mask(idx)[y0:y0 + c, x0:x0 + c])
        x_batch = torch.stack(xs)
        m_batch = torch.stack(ms).unsqueeze(1) if self.with_masks else None
        return x_batch, m_batch


class _CsvLogger:
    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path and not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    def log(self, step: int, bd: LossBreakdown) -> None:
        if not self.path:
            return
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(
                [step, float(bd.rate_y), float(bd.rate_z),
                 float(bd.distortion), float(bd.total)])


def _check_finite(bd: LossBreakdown, step: int) -> None:
    values = {k: getattr(bd, k) for k in ("rate_y", "rate_z", "distortion", "total")}
    if not all(np.isfinite(v) for v in values.values()):
        raise TrainingError(f"non-finite loss at step {step}: {values}")


def _assert_decreasing(totals: list[float]) -> None:
    k = max(1, len(totals) // 10)
    first = sum(totals[:k]) / k
    last = sum(totals[-k:]) / k
    if not last < first:
        raise TrainingError(
            f"smoothed training loss did not decrease: start {first:.4f}, "
            f"end {last:.4f}")


def _make_optimizer(cfg: TrainConfig, params):
    opt = torch.optim.Adam(params, lr=cfg.lr)
    sched = None
    if cfg.lr_milestones:
        sched = torch.optim.lr_scheduler.MultiStepLR(
            opt, milestones=list(cfg.lr_milestones), gamma=0.1)
    return opt, sched


def _noise_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed + 0x9E3779B9)
    return gen


def train_base(cfg: TrainConfig, out_path, log_path=None) -> Path:
    """Stage 1: train the machine-layer codec with the mask-gated loss."""
    torch.set_num_threads(1)
    mc = cfg.model_config()
    model = build_base_codec(mc)
    sampler = _Sampler(cfg, with_masks=True)
    gen = _noise_generator(cfg.seed)
    opt, sched = _make_optimizer(cfg, model.parameters())
    logger = _CsvLogger(log_path)
    lam_eff = cfg.lam * DISTORTION_SCALE
    totals: list[float] = []

    for step in range(1, cfg.steps + 1):
        x, mask = sampler.batch()
        out = model(x, gen)
        npix = x.shape[0] * x.shape[-2] * x.shape[-1]
        bd = loss_saicm(x, out["x_hat"], mask,
                        out["bits_y"] / npix, out["bits_z"] / npix, lam_eff)
        snapshot = bd.detach()
        _check_finite(snapshot, step)
        opt.zero_grad()
        bd.total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
        opt.step()
        if sched is not None:
            sched.step()
        logger.log(step, snapshot)
        totals.append(snapshot.total)
        if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_checkpoint(out_path, KIND_BASE, mc, model)

    _assert_decreasing(totals)
    save_checkpoint(out_path, KIND_BASE, mc, model)
    return Path(out_path)


def train_enhancement(cfg: TrainConfig, base_ckpt, out_path, log_path=None) -> Path:
    """Stage 2: train the additional-information codec; the base is frozen."""
    torch.set_num_threads(1)
    base = load_model(base_ckpt)
    if base.kind != KIND_BASE:
        raise TrainingError(f"{base_ckpt} is a {base.kind!r} checkpoint, need a base")
    mc = cfg.model_config()
    if not mc.compatible_base(base.config):
        raise TrainingError(
            "training config (C, n, s) does not match the base checkpoint: "
            f"{(mc.latent_channels, mc.group_count, mc.downsample_factor)} vs "
            f"{(base.config.latent_channels, base.config.group_count, base.config.downsample_factor)}")

    model = build_enhancement_codec(mc)
    sampler = _Sampler(cfg, with_masks=False)
    gen = _noise_generator(cfg.seed)
    opt, sched = _make_optimizer(cfg, model.parameters())
    logger = _CsvLogger(log_path)
    lam_eff = cfg.lam * DISTORTION_SCALE
    totals: list[float] = []

    for step in range(1, cfg.steps + 1):
        x, _ = sampler.batch()
        with torch.no_grad():
            _, _, base_groups = base.model.eval_latents(x)
        out = model(x, base_groups, gen)
        npix = x.shape[0] * x.shape[-2] * x.shape[-1]
        bd = loss_enh(x, out["x_hat"],
                      out["bits_y"] / npix, out["bits_z"] / npix, lam_eff)
        snapshot = bd.detach()
        _check_finite(snapshot, step)
        opt.zero_grad()
        bd.total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
        opt.step()
        if sched is not None:
            sched.step()
        logger.log(step, snapshot)
        totals.append(snapshot.total)
        if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_checkpoint(out_path, KIND_ENHANCEMENT, mc, model,
                            extra={"base_hash": base.model_hash.hex()})

    _assert_decreasing(totals)
    after = model_hash(KIND_BASE, base.config, state_to_arrays(base.model))
    if after != base.model_hash:
        raise TrainingError("base weights changed during enhancement training")
    save_checkpoint(out_path, KIND_ENHANCEMENT, mc, model,
                    extra={"base_hash": base.model_hash.hex()})
    return Path(out_path)


def train_dc_residual(cfg: TrainConfig, base_ckpt, out_path, log_path=None) -> Path:
    """Baseline stage 2: a plain LIC trained on shifted machine-layer residuals."""
    torch.set_num_threads(1)
    base = load_model(base_ckpt)
    if base.kind != KIND_BASE:
        raise TrainingError(f"{base_ckpt} is a {base.kind!r} checkpoint, need a base")
    mc = cfg.model_config()
    if not mc.compatible_base(base.config):
        raise TrainingError("residual config (C, n, s) does not match the base checkpoint")

    torch.manual_seed(cfg.seed + 2)
    model = BaseCodec(mc)
    sampler = _Sampler(cfg, with_masks=False)
    gen = _noise_generator(cfg.seed)
    opt, sched = _make_optimizer(cfg, model.parameters())
    logger = _CsvLogger(log_path)
    lam_eff = cfg.lam * DISTORTION_SCALE
    totals: list[float] = []

    for step in range(1, cfg.steps + 1):
        x, _ = sampler.batch()
        with torch.no_grad():
            _, _, base_groups = base.model.eval_latents(x)
            x_t_hat = base.model.synthesize(torch.cat(base_groups, dim=-3))
            r01 = shift_residual(x - x_t_hat.clamp(0.0, 1.0))
        out = model(r01, gen)
        npix = x.shape[0] * x.shape[-2] * x.shape[-1]
        bd = loss_lic(r01, out["x_hat"],
                      out["bits_y"] / npix, out["bits_z"] / npix, lam_eff)
        snapshot = bd.detach()
        _check_finite(snapshot, step)
        opt.zero_grad()
        bd.total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
        opt.step()
        if sched is not None:
            sched.step()
        logger.log(step, snapshot)
        totals.append(snapshot.total)

    _assert_decreasing(totals)
    save_checkpoint(out_path, KIND_RESIDUAL, mc, model,
                    extra={"base_hash": base.model_hash.hex()})
    return Path(out_path)
