import os
import tempfile
from pathlib import Path

import pytest
import torch

from fusecodec.checkpoints import (
    KIND_BASE,
    KIND_ENHANCEMENT,
    KIND_RESIDUAL,
    load_model,
    save_checkpoint,
)
from fusecodec.config import ModelConfig
from fusecodec.core import BaseCodec, build_base_codec, build_enhancement_codec

# bitwise reproducibility contract assumes single-threaded execution
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_cfg() -> ModelConfig:
    """Smallest config exercising every code path: 2-stage transform, 4 groups."""
    return ModelConfig(latent_channels=16, group_count=4, enh_group_count=2,
                       downsample_factor=4, hidden_widths=(16,), hyper_width=8,
                       predictor_width=16, lam=0.01, seed=3)


@pytest.fixture(scope="session")
def tiny_models(tiny_cfg, tmp_path_factory):
    """Untrained but deterministic base/enh/residual checkpoint trio."""
    d = tmp_path_factory.mktemp("tiny-ckpts")
    base = build_base_codec(tiny_cfg)
    enh = build_enhancement_codec(tiny_cfg)
    torch.manual_seed(tiny_cfg.seed + 2)
    residual = BaseCodec(tiny_cfg)

    base_hash = save_checkpoint(d / "base.ckpt", KIND_BASE, tiny_cfg, base)
    save_checkpoint(d / "enh.ckpt", KIND_ENHANCEMENT, tiny_cfg, enh,
                    extra={"base_hash": base_hash.hex()})
    save_checkpoint(d / "res.ckpt", KIND_RESIDUAL, tiny_cfg, residual,
                    extra={"base_hash": base_hash.hex()})
    return {
        "dir": d,
        "base": load_model(d / "base.ckpt"),
        "enh": load_model(d / "enh.ckpt"),
        "residual": load_model(d / "res.ckpt"),
    }


@pytest.fixture()
def rng_image():
    def make(h=32, w=32, seed=0):
        g = torch.Generator().manual_seed(seed)
        return torch.rand(3, h, w, generator=g)
    return make


def training_cache_dir() -> Path | None:
    """Optional on-disk cache for trained test checkpoints (dev speed-up).

    Set FUSECODEC_TEST_CACHE to a directory to reuse training artifacts
    between pytest runs; unset, everything is retrained in tmp dirs.
    """
    path = os.environ.get("FUSECODEC_TEST_CACHE")
    if not path:
        return None
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d
