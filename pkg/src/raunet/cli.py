"""``raunet`` command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from raunet import __version__
from raunet import config as rconfig
from raunet.checkpoint import CheckpointError, load_checkpoint
from raunet.data.netpbm import NetpbmError, read_ppm, write_pgm, write_ppm
from raunet.data.synth import DatasetManifest, generate
from raunet.gradcheck import run_suite
from raunet.metrics import write_report_csv
from raunet.model import build, count_params
from raunet.tensor import Precision
from raunet.trainer import DivergenceError, SegmentationData, evaluate_model, predict, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

# Overlay colours indexed by class id - 1.
PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 190),
], dtype=np.uint8)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--seed", type=int, help="training / initialization seed")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--width-mult", help="channel width multiplier, e.g. 1/8")
    p.add_argument("--use-aam", nargs="?", const="true", choices=["true", "false"],
                   help="attention fusion on/off (bare flag means true)")
    p.add_argument("--loss", choices=["ce", "dice", "celdice"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--manifest", help="dataset manifest (overrides config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")


_FLAG_KEYS = {"seed": "seed", "width_mult": "width_mult", "use_aam": "use_aam", "loss": "loss",
              "alpha": "alpha", "epochs": "epochs", "batch": "batch_size", "lr": "lr0", "manifest": "manifest"}


def build_parser():
    parser = _Parser(prog="raunet", description="RAUNet segmentation engine")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render a synthetic dataset + manifest")
    _common(p)

    p = sub.add_parser("train", help="train a model, writing checkpoints and a CSV log")
    _common(p)

    p = sub.add_parser("eval", help="per-class metrics CSV for a checkpoint on a manifest split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")

    p = sub.add_parser("predict", help="write PGM masks (and optional overlays) for PPM images")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("inputs", nargs="+", help="PPM files or directories of PPM files")
    p.add_argument("--overlay", action="store_true", help="also write colour overlay PPMs")

    p = sub.add_parser("gradcheck", help="float64 finite-difference checks of every operator")
    _common(p)
    p.add_argument("--cases", type=int, default=20, help="random shapes per operator")

    p = sub.add_parser("params", help="parameter count breakdown")
    _common(p)

    p = sub.add_parser("ablate", help="{AAM, plain} x {ce, dice, celdice} comparison")
    _common(p)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds per cell (median reported)")
    return parser


def resolve(args) -> rconfig.RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise rconfig.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    return rconfig.load(args.config, overrides)


def _precision(cfg):
    return Precision.F64 if cfg.precision == "f64" else Precision.F32


def _manifest_path(cfg):
    if not cfg.manifest:
        raise UsageError("no dataset: pass --manifest or set 'manifest' in the config")
    return cfg.manifest


def cmd_gen_data(args, cfg):
    manifest = generate(cfg.gen, args.out)
    print(f"wrote {len(manifest.records)} samples to {os.path.join(args.out, 'manifest.tsv')}")
    freq = manifest.class_frequency()
    print("class frequency: " + ", ".join(f"{c}:{n}" for c, n in freq.items()))
    return EXIT_OK


def cmd_train(args, cfg):
    data = SegmentationData.from_manifest(_manifest_path(cfg))
    model = build(cfg.model, cfg.train.seed, _precision(cfg))
    state = train(model, data, dataclasses.replace(cfg.train, checkpoint_dir=args.out))
    print(f"finished {state.epoch} epochs ({state.step} steps); best test mean_dice {state.best_mean_dice:.4f}")
    return EXIT_OK


def cmd_eval(args, cfg):
    model, _ = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(_manifest_path(cfg))
    images, masks = manifest.load_arrays(args.split)
    report = evaluate_model(model, images, masks)
    path = os.path.join(args.out, f"metrics_{args.split}.csv")
    write_report_csv(report, path)
    print(f"{args.split}: mean_dice {report.mean_dice:.4f} mean_iou {report.mean_iou:.4f} -> {path}")
    return EXIT_OK


def _collect_inputs(inputs):
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.glob("*.ppm")))
        else:
            files.append(p)
    return files


def overlay(image: np.ndarray, mask: np.ndarray, opacity: float = 0.5) -> np.ndarray:
    out = image.astype(np.float64)
    fg = mask > 0
    colors = PALETTE[(mask[fg].astype(np.int64) - 1) % len(PALETTE)]
    out[fg] = (1 - opacity) * out[fg] + opacity * colors
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def cmd_predict(args, cfg):
    model, _ = load_checkpoint(args.checkpoint)
    files = _collect_inputs(args.inputs)
    if not files:
        raise UsageError("no input images")
    for path in files:
        image = read_ppm(path)
        mask = predict(model, image[None])[0]
        write_pgm(os.path.join(args.out, f"{path.stem}.pgm"), mask)
        if args.overlay:
            write_ppm(os.path.join(args.out, f"{path.stem}_overlay.ppm"), overlay(image, mask))
    print(f"wrote {len(files)} masks to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    results = run_suite(cases_per_op=args.cases, seed=cfg.train.seed)
    width = max(len(r.op) for r in results)
    failed = False
    for r in results:
        status = "ok" if r.ok else "FAIL"
        failed |= not r.ok
        print(f"{r.op:<{width}}  max_rel_err {r.max_rel_err:.3e}  tol {r.tolerance:.0e}  "
              f"cases {r.cases}  {r.seconds:.2f}s  {status}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_params(args, cfg):
    model = build(cfg.model, cfg.train.seed, _precision(cfg))
    counts = count_params(model)
    rows = [(k, counts[k]) for k in ("encoder", "decoder", "aam", "head", "total")]
    for name, n in rows:
        print(f"{name:<8} {n:>12,d}  {n / 1e6:8.3f}M")
    with open(os.path.join(args.out, "params.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "params"])
        writer.writerows(rows)
    return EXIT_OK


def cmd_ablate(args, cfg):
    from raunet.ablation import run_ablation

    manifest = cfg.manifest
    if not manifest:
        data_dir = os.path.join(args.out, "data")
        generate(cfg.gen, data_dir)
        manifest = os.path.join(data_dir, "manifest.tsv")
    data = SegmentationData.from_manifest(manifest)
    seeds = [cfg.train.seed + i for i in range(args.seeds)]
    rows = run_ablation(data, cfg.model, cfg.train, seeds, args.out, _precision(cfg))
    for r in rows:
        print(f"{r['fusion']:<5} {r['loss']:<8} mean_dice {r['mean_dice']:.4f} mean_iou {r['mean_iou']:.4f}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "params": cmd_params,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        os.makedirs(args.out, exist_ok=True)
        cfg.dump(os.path.join(args.out, "resolved.cfg"))
        return COMMANDS[args.command](args, cfg)
    except (rconfig.ConfigError, UsageError) as exc:
        print(f"raunet: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, NetpbmError, CheckpointError) as exc:
        print(f"raunet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, FloatingPointError) as exc:
        print(f"raunet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"raunet: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
