"""Model and training configuration.

Both codecs (base and enhancement) are described by a single
:class:`ModelConfig`; the enhancement codec additionally reads
``enh_group_count`` (m) while the base codec only uses ``group_count`` (n).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

# Lagrangian weights registered for the 1-byte lambda_id header field.
LAMBDA_TABLE = (0.005, 0.01, 0.02, 0.03, 0.05)

# lambda_id written when the trained lambda is not in LAMBDA_TABLE.
LAMBDA_ID_UNREGISTERED = 255


def lambda_id(lam: float) -> int:
    for i, v in enumerate(LAMBDA_TABLE):
        if math.isclose(lam, v, rel_tol=1e-9):
            return i
    return LAMBDA_ID_UNREGISTERED


def lambda_from_id(lam_id: int) -> float | None:
    if 0 <= lam_id < len(LAMBDA_TABLE):
        return LAMBDA_TABLE[lam_id]
    return None


@dataclass(frozen=True)
class ModelConfig:
    """Structural hyper-parameters shared by the encoder/decoder pair.

    latent_channels (C) must be divisible by group_count (n); each latent
    group then carries C/n channels.  The enhancement codec emits
    enh_group_count (m) groups of the same per-group width, 1 <= m <= n.
    downsample_factor is the total spatial stride of the analysis transform
    and must be a power of two; the transform uses log2(s) strided stages,
    so hidden_widths needs log2(s) - 1 entries.
    """

    latent_channels: int = 320
    group_count: int = 5
    enh_group_count: int = 5
    downsample_factor: int = 16
    hidden_widths: tuple[int, ...] = (128, 128, 128)
    hyper_width: int = 64
    predictor_width: int = 64
    lam: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.latent_channels <= 0:
            raise ValueError("latent_channels must be positive")
        if self.group_count <= 0:
            raise ValueError("group_count must be positive")
        if self.latent_channels % self.group_count != 0:
            raise ValueError(
                f"latent_channels ({self.latent_channels}) must be divisible "
                f"by group_count ({self.group_count})"
            )
        if not 1 <= self.enh_group_count <= self.group_count:
            raise ValueError(
                f"enh_group_count must satisfy 1 <= m <= n, got "
                f"m={self.enh_group_count}, n={self.group_count}"
            )
        s = self.downsample_factor
        if s < 2 or s & (s - 1) != 0:
            raise ValueError("downsample_factor must be a power of two >= 2")
        if len(self.hidden_widths) != self.num_stages - 1:
            raise ValueError(
                f"hidden_widths needs {self.num_stages - 1} entries for "
                f"downsample_factor {s}, got {len(self.hidden_widths)}"
            )
        if any(w <= 0 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.hyper_width <= 0 or self.predictor_width <= 0:
            raise ValueError("hyper/predictor widths must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def num_stages(self) -> int:
        return self.downsample_factor.bit_length() - 1

    @property
    def group_width(self) -> int:
        return self.latent_channels // self.group_count

    @property
    def enh_latent_channels(self) -> int:
        """Channel count of the enhancement latent: m * (C/n)."""
        return self.enh_group_count * self.group_width

    def compatible_base(self, other: "ModelConfig") -> bool:
        """True when an enhancement codec with this config can sit on top of
        a base codec with `other` (same latent geometry)."""
        return (
            self.latent_channels == other.latent_channels
            and self.group_count == other.group_count
            and self.downsample_factor == other.downsample_factor
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: tuple(v) if k == "hidden_widths" else v for k, v in d.items()})

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class TrainConfig:
    """One training run: dataset, optimisation schedule and model shape."""

    dataset: str
    mask_dir: str | None = None
    crop_size: int = 64
    batch_size: int = 8
    steps: int = 2000
    lr: float = 1e-4
    lr_milestones: tuple[int, ...] = ()
    lam: float = 0.01
    latent_channels: int = 48
    group_count: int = 4
    enh_group_count: int = 2
    downsample_factor: int = 16
    hidden_widths: tuple[int, ...] = (48, 48, 48)
    hyper_width: int = 32
    predictor_width: int = 48
    seed: int = 0
    checkpoint_interval: int = 0
    dilation_radius: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        object.__setattr__(self, "lr_milestones", tuple(self.lr_milestones))
        if self.crop_size % self.downsample_factor != 0:
            raise ValueError(
                f"crop_size ({self.crop_size}) must be divisible by "
                f"downsample_factor ({self.downsample_factor})"
            )
        if lambda_id(self.lam) == LAMBDA_ID_UNREGISTERED:
            raise ValueError(
                f"lambda {self.lam} is not in the published table {LAMBDA_TABLE}"
            )
        if self.batch_size <= 0 or self.steps <= 0:
            raise ValueError("batch_size and steps must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        self.model_config()  # validate model fields eagerly

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            latent_channels=self.latent_channels,
            group_count=self.group_count,
            enh_group_count=self.enh_group_count,
            downsample_factor=self.downsample_factor,
            hidden_widths=self.hidden_widths,
            hyper_width=self.hyper_width,
            predictor_width=self.predictor_width,
            lam=self.lam,
            seed=self.seed,
        )


# key-value config file <-> TrainConfig field names
_KV_ALIASES = {
    "lambda": "lam",
    "groups": "group_count",
    "enh_groups": "enh_group_count",
}

_INT_TUPLE_FIELDS = {"hidden_widths", "lr_milestones"}


def parse_train_config(path: str) -> TrainConfig:
    """Parse a `key = value` text file into a TrainConfig.

    Blank lines and lines starting with '#' are ignored.  Tuple fields take
    comma-separated integers; an empty value yields an empty tuple.
    """
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kwargs: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = _KV_ALIASES.get(key.strip(), key.strip())
            value = value.strip()
            if key not in fields:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(key, value)
    if "dataset" not in kwargs:
        raise ValueError(f"{path}: missing required key 'dataset'")
    return TrainConfig(**kwargs)


def _parse_value(key: str, value: str):
    if key in _INT_TUPLE_FIELDS:
        if not value:
            return ()
        return tuple(int(v.strip()) for v in value.split(","))
    if key in ("dataset", "mask_dir"):
        return None if value.lower() == "none" else value
    if key in ("lr", "lam"):
        return float(value)
    return int(value)


def write_train_config(cfg: TrainConfig, path: str) -> None:
    inverse = {v: k for k, v in _KV_ALIASES.items()}
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(cfg, f.name)
        if value is None:
            value = "none"
        elif f.name in _INT_TUPLE_FIELDS:
            value = ",".join(str(v) for v in value)
        lines.append(f"{inverse.get(f.name, f.name)} = {value}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
