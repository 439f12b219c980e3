"""fusecodec: a two-layer scalable learned image codec.

The base layer reconstructs edge/structure content for machine vision; an
optional enhancement layer carries additional information that is fused
with the base latent to decode an image for human viewing.
"""

from .bitstream import BitstreamError, LayerMissingError, ScalableBitstream
from .checkpoints import (
    LoadedModel,
    ModelMismatchError,
    load_model,
    save_checkpoint,
)
from .coding import (
    decode_dc,
    decode_human,
    decode_machine,
    encode_dc,
    encode_image,
)
from .config import LAMBDA_TABLE, ModelConfig, TrainConfig, parse_train_config
from .core import (
    BaseCodec,
    EnhancementCodec,
    EntropyParams,
    LatentGroups,
    analyze_base,
    analyze_enhancement,
    build_base_codec,
    build_enhancement_codec,
    concat_groups,
    quantize,
    split_groups,
    synth_human,
    synth_machine,
)
from .evaluation import RDPoint, bpp, count_enh_params, dc_baseline, psnr, rd_sweep
from .fusion import fuse_groups
from .losses import (
    LossBreakdown,
    estimated_rate,
    loss_enh,
    loss_lic,
    loss_saicm,
    masked_mse,
)
from .masks import edge_mask, load_mask, save_mask
from .training import TrainingError, train_base, train_dc_residual, train_enhancement

__version__ = "0.1.0"

__all__ = [
    "BaseCodec",
    "BitstreamError",
    "EnhancementCodec",
    "EntropyParams",
    "LAMBDA_TABLE",
    "LatentGroups",
    "LayerMissingError",
    "LoadedModel",
    "LossBreakdown",
    "ModelConfig",
    "ModelMismatchError",
    "RDPoint",
    "ScalableBitstream",
    "TrainConfig",
    "TrainingError",
    "analyze_base",
    "analyze_enhancement",
    "bpp",
    "build_base_codec",
    "build_enhancement_codec",
    "concat_groups",
    "count_enh_params",
    "dc_baseline",
    "decode_dc",
    "decode_human",
    "decode_machine",
    "encode_dc",
    "encode_image",
    "estimated_rate",
    "fuse_groups",
    "load_mask",
    "load_model",
    "loss_enh",
    "loss_lic",
    "loss_saicm",
    "masked_mse",
    "edge_mask",
    "parse_train_config",
    "psnr",
    "quantize",
    "rd_sweep",
    "save_checkpoint",
    "save_mask",
    "split_groups",
    "synth_human",
    "synth_machine",
    "train_base",
    "train_dc_residual",
    "train_enhancement",
]
