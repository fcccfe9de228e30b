"""Command-line entry point.

    mtsedge train     --config <preset|path> [--data DIR | --synthetic] ...
    mtsedge predict   --checkpoint CK --images DIR --out DIR [--dump-intermediate]
    mtsedge eval      --pred DIR --gt DIR [--setting thin|raw] [--tolerance F]
    mtsedge gradcheck [micro|small]
    mtsedge params    --config <preset|path> [--height H --width W] [--compare-reference]
    mtsedge synth     --out DIR --count N --size S [--seed N]

Exit codes: 0 ok, 1 internal, 2 config, 3 data, 4 geometry.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .config import PRESET_NAMES, load_config
from .errors import ConfigError, DataError, GeometryError, MtsEdgeError


def _thread_cap(args):
    n = args.threads
    if n is None:
        env = os.environ.get("MTSEDGE_THREADS", "").strip()
        n = int(env) if env else None
    if n is None or n < 1:
        return
    if kernels.BACKEND == "numba":
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _load_run_dataset(args, cfg):
    from .data import (AugmentedDataset, biped_recipe, bsds_recipe,
                       load_dataset, synth_generate)
    if args.synthetic or (args.data is None and cfg.data.synthetic is not None):
        spec = cfg.data.synthetic
        count = args.count or (spec.count if spec else 64)
        size = args.size or (spec.size if spec else 64)
        return synth_generate(count, size, size, cfg.train.seed)
    root = args.data or cfg.data.root
    if not root:
        raise ConfigError("no dataset: pass --data DIR or --synthetic "
                          "(or set data.root / data.synthetic in the config)")
    loaded = load_dataset(root)
    for name in loaded.orphan_images:
        print(f"warning: image without label: {name}", file=sys.stderr)
    for name in loaded.orphan_labels:
        print(f"warning: label without image: {name}", file=sys.stderr)
    for msg in loaded.corrupt:
        print(f"warning: skipped {msg}", file=sys.stderr)
    samples = loaded.samples
    if not samples:
        raise DataError(f"no usable samples under {root}")
    if args.augment == "biped":
        return AugmentedDataset(samples, biped_recipe(), seed=cfg.train.seed)
    if args.augment == "bsds":
        return AugmentedDataset(samples, bsds_recipe(), seed=cfg.train.seed)
    return samples


def cmd_train(args):
    from .training import train
    cfg = load_config(args.config)
    if args.epochs:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    dataset = _load_run_dataset(args, cfg)
    result = train(cfg, dataset, args.out, max_steps=args.max_steps,
                   resume=args.resume, progress=print)
    if result.skipped:
        print(f"skipped {result.skipped} degenerate samples", file=sys.stderr)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    return 0


def _normalized_mean(arr):
    m = arr.mean(axis=2)
    lo, hi = float(m.min()), float(m.max())
    if hi - lo < 1e-12:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def cmd_predict(args):
    from .autodiff import value_of
    from .checkpoint import load_checkpoint
    from .data import read_image, save_gray_png
    from .model import net_forward
    ck = load_checkpoint(args.checkpoint)
    img_dir = Path(args.images)
    if not img_dir.is_dir():
        raise DataError(f"image directory not found: {img_dir}")
    files = sorted(p for p in img_dir.iterdir() if p.is_file())
    if not files:
        raise DataError(f"no images under {img_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in files:
        image = read_image(path, 3)
        out = net_forward(image, ck.network, ck.params)
        save_gray_png(out_dir / f"{path.stem}.png", value_of(out.fused))
        if args.dump_intermediate:
            for i, side in enumerate(out.sides, start=1):
                save_gray_png(out_dir / f"{path.stem}_side{i}.png", value_of(side))
            save_gray_png(out_dir / f"{path.stem}_residual.png",
                          _normalized_mean(value_of(out.residual)))
        print(f"{path.name} -> {out_dir / (path.stem + '.png')}")
    return 0


def cmd_eval(args):
    from .data import read_image
    from .evaluation import evaluate
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise DataError(f"directory not found: {d}")
    preds = {p.stem: p for p in sorted(pred_dir.iterdir()) if p.is_file()}
    gts = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.is_file()}
    unpaired = sorted(set(preds) ^ set(gts))
    if unpaired:
        raise DataError(f"unpaired files between {pred_dir} and {gt_dir}: {unpaired[:5]}")
    if not preds:
        raise DataError("nothing to evaluate")
    stems = sorted(preds)
    pmaps = [read_image(preds[s], 1)[:, :, 0] for s in stems]
    gmaps = [read_image(gts[s], 1)[:, :, 0] for s in stems]
    report = evaluate(pmaps, gmaps, setting=args.setting, tolerance=args.tolerance,
                      positive_threshold=args.gt_threshold)
    print(report.summary_tsv())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
        print(f"report: {args.report}")
    else:
        print(report.to_json())
    return 0


def cmd_gradcheck(args):
    from .gradcheck import format_results, run_suite
    results = run_suite(args.scale)
    print(format_results(results))
    bad = [r for r in results if not r.ok]
    if bad:
        print(f"{len(bad)} of {len(results)} checks failed", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def _fmt_count(n):
    if n >= 1e6:
        return f"{n / 1e6:.3f}M"
    if n >= 1e3:
        return f"{n / 1e3:.3f}K"
    return str(n)


def cmd_params(args):
    from .model import count_flops, count_params
    cfg = load_config(args.config)
    net = cfg.network
    total_p, psec = count_params(net)
    total_f, fsec = count_flops(net, args.height, args.width)
    print(f"network: blocks={net.blocks} channels={net.channels} "
          f"reduction={net.reduction} windows={list(net.windows)} terms={net.terms}")
    print(f"{'section':<20}{'params':>12}")
    for k in sorted(psec):
        print(f"{k:<20}{psec[k]:>12}")
    print(f"{'total':<20}{total_p:>12}  ({_fmt_count(total_p)})")
    print()
    print(f"{'section':<20}{'flops @ ' + str(args.height) + 'x' + str(args.width):>24}")
    for k in sorted(fsec):
        print(f"{k:<20}{fsec[k]:>24}")
    print(f"{'total':<20}{total_f:>24}  ({total_f / 1e9:.3f} GFLOPs)")
    if args.compare_reference:
        ref = cfg.reference or {}
        if not ref:
            print("no published reference figures in this config")
        else:
            print()
            print("published reference figures (not asserted):")
            print(json.dumps(ref, indent=2))
    return 0


def cmd_synth(args):
    from .data import synth_generate, write_dataset
    samples = synth_generate(args.count, args.size, args.size, args.seed)
    root = write_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples under {root}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="mtsedge",
        description="Tensor-summation edge detector: train, predict, evaluate.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=None,
                       help="kernel thread cap (default: MTSEDGE_THREADS or all)")

    p = sub.add_parser("train", help="optimize a model on a dataset")
    p.add_argument("--config", required=True,
                   help=f"preset name ({', '.join(PRESET_NAMES)}) or JSON path")
    p.add_argument("--data", help="dataset root with images/ and edges/")
    p.add_argument("--augment", choices=("none", "biped", "bsds"), default="none")
    p.add_argument("--synthetic", action="store_true",
                   help="train on generated scenes instead of --data")
    p.add_argument("--count", type=int, default=None, help="synthetic sample count")
    p.add_argument("--size", type=int, default=None, help="synthetic extent")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--epochs", type=int, default=None, help="override config epochs")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--max-steps", type=int, default=None,
                   help="stop after this many optimizer steps")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    add_threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write probability-map PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="directory of input images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-intermediate", action="store_true",
                   help="also write the 3 side maps and the gated residual")
    add_threads(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of prediction PNGs")
    p.add_argument("--gt", required=True, help="directory of ground-truth PNGs")
    p.add_argument("--setting", choices=("thin", "raw"), default="thin")
    p.add_argument("--tolerance", type=float, default=0.0075,
                   help="match radius as a fraction of the image diagonal")
    p.add_argument("--gt-threshold", type=float, default=0.3,
                   help="ground truth positive iff value >= this")
    p.add_argument("--report", default=None, help="write the JSON report here")
    add_threads(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("scale", nargs="?", choices=("micro", "small"), default="micro")
    add_threads(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter and FLOP accounting")
    p.add_argument("--config", required=True)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--compare-reference", action="store_true",
                   help="print published reference figures beside computed totals")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if hasattr(args, "threads"):
            _thread_cap(args)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except GeometryError as e:
        print(f"geometry error: {e}", file=sys.stderr)
        return 4
    except MtsEdgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
