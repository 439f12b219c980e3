"""Command-line interface.

Subcommands: mask, train-base, train-enh, encode, decode, eval, sweep.
Exit codes: 0 success, 1 usage error, 2 data/parse error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import evaluation, training
from .bitstream import BitstreamError
from .checkpoints import CheckpointError, ModelMismatchError, load_model
from .coding import decode_human, decode_machine, encode_image
from .config import parse_train_config
from .imageio import list_images, load_image, save_image
from .masks import DEFAULT_DILATION_RADIUS, MaskError, edge_mask, save_mask

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusecodec",
                     description="two-layer scalable image codec")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("mask", help="write edge masks for a directory of images")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--dilate", type=int, default=DEFAULT_DILATION_RADIUS)

    p = sub.add_parser("train-base", help="train the machine-layer codec")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")

    p = sub.add_parser("train-enh", help="train the enhancement codec")
    p.add_argument("--config", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")

    p = sub.add_parser("encode", help="encode an image to a .sicm stream")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--enh")
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="decode a .sicm stream to an image")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--enh")
    p.add_argument("--layer", choices=("machine", "human"), default="machine")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="average RD metrics over a directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--enh")
    p.add_argument("--csv", required=True)
    p.add_argument("--jsonl")

    p = sub.add_parser("sweep", help="RD sweep over a checkpoint grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--dc-csv", dest="dc_csv")

    return parser


def _cmd_mask(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = list_images(args.in_dir)
    if not paths:
        raise MaskError(f"no images found in {args.in_dir}")
    for path in paths:
        mask = edge_mask(load_image(path), args.dilate)
        save_mask(mask, out_dir / (path.stem + ".mask"))
    print(f"wrote {len(paths)} masks to {out_dir}")
    return EXIT_OK


def _cmd_train_base(args) -> int:
    cfg = parse_train_config(args.config)
    out = training.train_base(cfg, args.out, args.log)
    print(f"base checkpoint written to {out}")
    return EXIT_OK


def _cmd_train_enh(args) -> int:
    cfg = parse_train_config(args.config)
    out = training.train_enhancement(cfg, args.base, args.out, args.log)
    print(f"enhancement checkpoint written to {out}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    base = load_model(args.base)
    enh = load_model(args.enh) if args.enh else None
    x = load_image(args.in_path)
    stream = encode_image(x, base, enh)
    data = stream.serialize()
    with open(args.out, "wb") as fh:
        fh.write(data)
    print(f"{args.out}: {len(data)} bytes "
          f"({8.0 * len(data) / (stream.width * stream.height):.4f} bpp)")
    return EXIT_OK


def _cmd_decode(args) -> int:
    if args.layer == "human" and not args.enh:
        raise _UsageError("--layer human requires --enh")
    base = load_model(args.base)
    with open(args.in_path, "rb") as fh:
        data = fh.read()
    if args.layer == "human":
        x_hat = decode_human(data, base, load_model(args.enh))
    else:
        x_hat = decode_machine(data, base)
    save_image(x_hat, args.out)
    print(f"decoded {args.layer} layer to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    base = load_model(args.base)
    enh = load_model(args.enh) if args.enh else None
    point = evaluation.evaluate_pair(base, enh, list_images(args.in_dir),
                                     jsonl_path=args.jsonl)
    evaluation.write_rd_csv([point], args.csv)
    print(f"{point.count} images: {point.bpp_total:.4f} bpp, "
          f"machine {point.psnr_machine:.2f} dB, human {point.psnr_human:.2f} dB")
    return EXIT_OK


def _parse_grid(path):
    """Grid file: `images = DIR` plus repeated `cell = lambda,m,base,enh`
    and optional `dc = lambda,base,enh,residual` lines."""
    images = None
    cells: list[evaluation.SweepCell] = []
    dc_cells: list[evaluation.DCComparisonCell] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "images":
                images = value
            elif key == "cell":
                lam, m, base, enh = (v.strip() for v in value.split(","))
                cells.append(evaluation.SweepCell(float(lam), int(m), base, enh))
            elif key == "dc":
                lam, base, enh, residual = (v.strip() for v in value.split(","))
                dc_cells.append(evaluation.DCComparisonCell(
                    float(lam), base, enh, residual))
            else:
                raise ValueError(f"{path}:{lineno}: unknown grid key {key!r}")
    if images is None:
        raise ValueError(f"{path}: missing 'images' entry")
    if not cells and not dc_cells:
        raise ValueError(f"{path}: no cells defined")
    return images, cells, dc_cells


def _cmd_sweep(args) -> int:
    images, cells, dc_cells = _parse_grid(args.grid)
    if cells:
        points = evaluation.rd_sweep(cells, images, args.csv)
        print(f"wrote {len(points)} sweep rows to {args.csv}")
    if dc_cells:
        dc_csv = args.dc_csv or str(args.csv) + ".dc.csv"
        rows = evaluation.dc_comparison(dc_cells, images, dc_csv)
        print(f"wrote {len(rows)} fusion/dc rows to {dc_csv}")
    return EXIT_OK


_COMMANDS = {
    "mask": _cmd_mask,
    "train-base": _cmd_train_base,
    "train-enh": _cmd_train_enh,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
}

_DATA_ERRORS = (BitstreamError, CheckpointError, ModelMismatchError, MaskError,
                training.TrainingError, OSError, ValueError)


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise _UsageError("a subcommand is required")
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
