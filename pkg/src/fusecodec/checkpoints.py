"""Self-describing weight checkpoints.

A checkpoint is: 8-byte magic, 4-byte big-endian JSON header length, the
JSON header (kind, config, tensor directory, extras, hash), then the raw
little-endian tensor bytes concatenated in directory order.  Serialization
is fully deterministic (sorted keys, canonical JSON), so identical weights
produce identical files, and the embedded hash doubles as the bitstream
header's model_hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .core import BaseCodec, EnhancementCodec, GroupedCodec

MAGIC = b"FUSECKPT"

KIND_BASE = "base"
KIND_ENHANCEMENT = "enhancement"
KIND_RESIDUAL = "residual"

_MODEL_CLASSES = {
    KIND_BASE: BaseCodec,
    KIND_ENHANCEMENT: EnhancementCodec,
    KIND_RESIDUAL: BaseCodec,
}


class CheckpointError(ValueError):
    pass


class ModelMismatchError(CheckpointError):
    """Checkpoint pair or bitstream/checkpoint hashes do not line up."""


def state_to_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def model_hash(kind: str, config: ModelConfig, state: dict[str, np.ndarray]) -> bytes:
    """8-byte digest over kind, config and every weight byte."""
    h = hashlib.sha256()
    h.update(kind.encode())
    h.update(config.canonical_json().encode())
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(arr.tobytes())
    return h.digest()[:8]


@dataclass
class LoadedModel:
    """A checkpoint materialized into an eval-mode model."""

    kind: str
    config: ModelConfig
    model: GroupedCodec
    model_hash: bytes
    base_hash: bytes | None = None

    @property
    def lam(self) -> float:
        return self.config.lam


def save_checkpoint(path, kind: str, config: ModelConfig, model: nn.Module,
                    extra: dict | None = None) -> bytes:
    """Write a checkpoint; returns its model hash."""
    if kind not in _MODEL_CLASSES:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    state = state_to_arrays(model)
    digest = model_hash(kind, config, state)
    tensors = []
    payload = bytearray()
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        tensors.append({
            "name": name,
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
            "nbytes": arr.nbytes,
        })
        payload += arr.tobytes()
    header = {
        "kind": kind,
        "config": config.to_dict(),
        "tensors": tensors,
        "extra": extra or {},
        "hash": digest.hex(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "big"))
        fh.write(header_bytes)
        fh.write(payload)
    return digest


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Raw header dict plus named arrays, with hash verification."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    hlen = int.from_bytes(data[8:12], "big")
    try:
        header = json.loads(data[12:12 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    pos = 12 + hlen
    state: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        nbytes = entry["nbytes"]
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(data[pos:pos + nbytes], dtype=np.dtype(entry["dtype"]))
        state[entry["name"]] = arr.reshape(entry["shape"]).copy()
        pos += nbytes
    config = ModelConfig.from_dict(header["config"])
    digest = model_hash(header["kind"], config, state)
    if digest.hex() != header["hash"]:
        raise CheckpointError(f"{path}: hash mismatch, file corrupt")
    return header, state


def load_model(path) -> LoadedModel:
    """Build the model a checkpoint describes and load its weights."""
    header, state = read_checkpoint(path)
    kind = header["kind"]
    if kind not in _MODEL_CLASSES:
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
    config = ModelConfig.from_dict(header["config"])
    model = _MODEL_CLASSES[kind](config)
    tensors = {k: torch.from_numpy(v) for k, v in state.items()}
    model.load_state_dict(tensors)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    base_hash = header["extra"].get("base_hash")
    return LoadedModel(
        kind=kind,
        config=config,
        model=model,
        model_hash=bytes.fromhex(header["hash"]),
        base_hash=bytes.fromhex(base_hash) if base_hash else None,
    )


def check_pair(base: LoadedModel, enh: LoadedModel) -> None:
    """Validate that an enhancement/residual checkpoint matches its base."""
    if base.kind != KIND_BASE:
        raise ModelMismatchError(f"expected a base checkpoint, got {base.kind!r}")
    if enh.kind not in (KIND_ENHANCEMENT, KIND_RESIDUAL):
        raise ModelMismatchError(f"expected an enhancement checkpoint, got {enh.kind!r}")
    if not enh.config.compatible_base(base.config):
        raise ModelMismatchError(
            "enhancement config (C, n, s) does not match the base codec"
        )
    if enh.base_hash is not None and enh.base_hash != base.model_hash:
        raise ModelMismatchError(
            "enhancement checkpoint was trained against a different base model"
        )
