"""Rate-distortion evaluation: metrics, sweep CSVs and the DC baseline.

bpp accounting counts every container byte (header, section length
prefixes, payloads); the base share covers everything needed for machine
decode, the enhancement share the za/ya sections.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor

from .bitstream import ScalableBitstream
from .checkpoints import LoadedModel, load_model
from .coding import decode_dc, decode_human, decode_machine, encode_dc, encode_image
from .config import ModelConfig
from .core import EnhancementCodec
from .imageio import list_images, load_image

PSNR_CAP_DB = 100.0

RD_CSV_COLUMNS = ("lambda", "m", "bpp_base", "bpp_enh", "bpp_total",
                  "psnr_machine", "psnr_human", "count")

DC_CSV_COLUMNS = ("method",) + RD_CSV_COLUMNS


def psnr(x: Tensor, x_hat: Tensor) -> float:
    """10*log10(1/mse) on [0,1]-scaled values, capped at 100 dB."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    mse = float((x - x_hat).pow(2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def bpp(stream, width: int | None = None, height: int | None = None) -> tuple[float, float, float]:
    """(base, enhancement, total) bits per pixel of a container."""
    if not isinstance(stream, ScalableBitstream):
        stream = ScalableBitstream.parse(stream)
    w = width if width is not None else stream.width
    h = height if height is not None else stream.height
    pixels = w * h
    base = 8.0 * stream.base_bytes / pixels
    enh = 8.0 * stream.enh_bytes / pixels
    return base, enh, base + enh


@dataclass
class RDPoint:
    lam: float
    m: int
    bpp_base: float
    bpp_enh: float
    bpp_total: float
    psnr_machine: float
    psnr_human: float
    count: int

    def __post_init__(self):
        if abs(self.bpp_total - (self.bpp_base + self.bpp_enh)) > 1e-9:
            raise ValueError("bpp_total must equal bpp_base + bpp_enh")

    def row(self) -> list[str]:
        return [str(self.lam), str(self.m), str(self.bpp_base), str(self.bpp_enh),
                str(self.bpp_total), str(self.psnr_machine), str(self.psnr_human),
                str(self.count)]

    @classmethod
    def from_row(cls, row: list[str]) -> "RDPoint":
        return cls(float(row[0]), int(row[1]), float(row[2]), float(row[3]),
                   float(row[4]), float(row[5]), float(row[6]), int(row[7]))


def evaluate_pair(base: LoadedModel, enh: LoadedModel | None, image_paths,
                  jsonl_path=None) -> RDPoint:
    """Average RD metrics of one model pair over a list of images.

    Without an enhancement model the human-layer PSNR is NaN and the
    enhancement rate is zero.
    """
    paths = list(image_paths)
    if not paths:
        raise ValueError("no images to evaluate")
    sums = {"bpp_base": 0.0, "bpp_enh": 0.0, "psnr_machine": 0.0, "psnr_human": 0.0}
    records = []
    for path in paths:
        x = load_image(path)
        stream = encode_image(x, base, enh)
        b, e, _ = bpp(stream)
        x_t = decode_machine(stream, base)
        pm = psnr(x, x_t)
        ph = psnr(x, decode_human(stream, base, enh)) if enh is not None else float("nan")
        sums["bpp_base"] += b
        sums["bpp_enh"] += e
        sums["psnr_machine"] += pm
        sums["psnr_human"] += ph
        records.append({"file": str(path), "bpp_base": b, "bpp_enh": e,
                        "psnr_machine": pm, "psnr_human": ph})
    n = len(paths)
    if jsonl_path:
        with open(jsonl_path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    return RDPoint(
        lam=base.config.lam,
        m=enh.config.enh_group_count if enh is not None else 0,
        bpp_base=sums["bpp_base"] / n,
        bpp_enh=sums["bpp_enh"] / n,
        bpp_total=sums["bpp_base"] / n + sums["bpp_enh"] / n,
        psnr_machine=sums["psnr_machine"] / n,
        psnr_human=sums["psnr_human"] / n,
        count=n,
    )


@dataclass
class SweepCell:
    lam: float
    m: int
    base_ckpt: str
    enh_ckpt: str


def rd_sweep(cells: list[SweepCell], image_dir, csv_path) -> list[RDPoint]:
    """One RDPoint per (lambda, m) grid cell, written as CSV."""
    paths = list_images(image_dir)
    points = []
    for cell in cells:
        base = load_model(cell.base_ckpt)
        enh = load_model(cell.enh_ckpt)
        point = evaluate_pair(base, enh, paths)
        points.append(point)
    write_rd_csv(points, csv_path)
    return points


def write_rd_csv(points: list[RDPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RD_CSV_COLUMNS)
        for p in points:
            writer.writerow(p.row())


def read_rd_csv(path) -> list[RDPoint]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RD_CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {header}")
        return [RDPoint.from_row(row) for row in reader]


def count_enh_params(config: ModelConfig) -> int:
    """Exact trainable parameter count of the enhancement model."""
    torch.manual_seed(0)
    model = EnhancementCodec(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# DC baseline


def dc_baseline(x: Tensor, base: LoadedModel, residual: LoadedModel):
    """Encode with the difference-compression layering and decode it back.

    Returns (bitstream, x_dc_hat) so rates and PSNR are directly comparable
    with the fusion pipeline.
    """
    stream = encode_dc(x, base, residual)
    x_dc = decode_dc(stream, base, residual)
    return stream, x_dc


@dataclass
class DCComparisonCell:
    lam: float
    base_ckpt: str
    enh_ckpt: str
    residual_ckpt: str


def dc_comparison(cells: list[DCComparisonCell], image_dir, csv_path) -> list[tuple[str, RDPoint]]:
    """Paired fusion-vs-DC rows at matched lambda.

    The report is always emitted; if the DC model outperforms fusion at some
    lambda the ordering is logged as a warning rather than asserted.
    """
    paths = list_images(image_dir)
    if not paths:
        raise ValueError(f"no images in {image_dir}")
    rows: list[tuple[str, RDPoint]] = []
    for cell in cells:
        base = load_model(cell.base_ckpt)
        enh = load_model(cell.enh_ckpt)
        residual = load_model(cell.residual_ckpt)
        fusion_point = evaluate_pair(base, enh, paths)

        sums = {"bpp_base": 0.0, "bpp_enh": 0.0, "psnr_machine": 0.0, "psnr_dc": 0.0}
        for path in paths:
            x = load_image(path)
            stream, x_dc = dc_baseline(x, base, residual)
            b, e, _ = bpp(stream)
            sums["bpp_base"] += b
            sums["bpp_enh"] += e
            sums["psnr_machine"] += psnr(x, decode_machine(stream, base))
            sums["psnr_dc"] += psnr(x, x_dc)
        n = len(paths)
        dc_point = RDPoint(
            lam=cell.lam, m=residual.config.group_count,
            bpp_base=sums["bpp_base"] / n, bpp_enh=sums["bpp_enh"] / n,
            bpp_total=(sums["bpp_base"] + sums["bpp_enh"]) / n,
            psnr_machine=sums["psnr_machine"] / n,
            psnr_human=sums["psnr_dc"] / n, count=n,
        )
        rows.append(("fusion", fusion_point))
        rows.append(("dc", dc_point))
        if not (fusion_point.psnr_human >= dc_point.psnr_human
                or fusion_point.bpp_total <= dc_point.bpp_total):
            warnings.warn(
                f"lambda={cell.lam}: DC baseline dominates fusion "
                f"(fusion {fusion_point.psnr_human:.2f} dB @ {fusion_point.bpp_total:.4f} bpp, "
                f"dc {dc_point.psnr_human:.2f} dB @ {dc_point.bpp_total:.4f} bpp)",
                stacklevel=2)

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DC_CSV_COLUMNS)
        for method, point in rows:
            writer.writerow([method] + point.row())
    return rows
