"""Command-line entry point: ``glandseg <subcommand> [options]``.

Subcommands: synth, preprocess, train, evaluate, segment, gradcheck.
Options given on the command line override values from ``--config``.
Set ``GLANDSEG_THREADS`` to cap the number of BLAS threads.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .pipeline.config import ConfigError, load_config

# flag -> config key
CONFIG_FLAGS = {
    "data": "data_dir",
    "out": "out_dir",
    "seed": "seed",
    "loss": "loss",
    "input_mode": "input_mode",
    "preset": "preset",
    "lr": "lr",
    "epochs": "epochs",
    "max_steps": "max_steps",
    "batch_size": "batch_size",
    "resize": "resize",
    "transforms": "transforms",
    "crops": "crops",
    "min_area": "min_area",
    "workers": "workers",
}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=["L1", "L2", "L3"])
    p.add_argument("--input-mode", dest="input_mode", choices=["rgb", "hematoxylin", "hematoxylin+unsharp"])
    p.add_argument("--preset", choices=["tiny", "full"])
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--resize", help="working size WxH (default 832x576) or 'none'")
    p.add_argument("--transforms", help="rotflip, dihedral, none, or comma-separated names")
    p.add_argument("--crops", choices=["quadrants", "full"])
    p.add_argument("--min-area", dest="min_area", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glandseg", description="Gland segmentation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-train", type=int, default=32)
    p.add_argument("--n-test", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("preprocess", help="write hematoxylin / unsharp-mask images for one image")
    _add_config_args(p)
    p.add_argument("--image", required=True, type=Path)

    p = sub.add_parser("train", help="train a network")
    _add_config_args(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    _add_config_args(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--split", default="testA", choices=["train", "testA", "testB"])
    p.add_argument("--oracle", action="store_true",
                   help="use the ground truth as the probability map (checks post-processing + metrics)")

    p = sub.add_parser("segment", help="segment one image")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path, help="label PNG to write")
    p.add_argument("--prob-output", type=Path, help="optional probability map (.pmap)")

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config_from(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in CONFIG_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    return load_config(args.config, overrides, echo=print)


def _limit_threads():
    n = os.environ.get("GLANDSEG_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


SYNTHETIC_CONFIG = """\
# desk-scale run on generated glands
data_dir = {data}
resize = none
preset = tiny
transforms = dihedral
crops = full
max_steps = 1200
seed = {seed}
"""


def cmd_synth(args) -> int:
    from .pipeline.data import SyntheticSpec, generate_synthetic
    spec = SyntheticSpec(size=args.size, seed=args.seed)
    generate_synthetic(spec, args.n_train, args.out, "train")
    generate_synthetic(spec, args.n_test, args.out, "testA")
    cfg = args.out / "synthetic.cfg"
    cfg.write_text(SYNTHETIC_CONFIG.format(data=args.out.resolve(), seed=args.seed))
    print(f"wrote {args.n_train} train and {args.n_test} testA images ({args.size}x{args.size}) to {args.out}")
    print(f"suggested config: {cfg}")
    return 0


def cmd_preprocess(args) -> int:
    from .pipeline.io import read_rgb, write_gray
    from .pipeline.plotting import plot_preprocessing
    from .preprocess import hematoxylin_channel, rgb_to_od, stain_deconvolve, unsharp_mask

    config = _config_from(args)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rgb = read_rgb(args.image)
    hema = hematoxylin_channel(stain_deconvolve(rgb_to_od(rgb), config.stain_matrix()))
    sharp = unsharp_mask(hema, config.unsharp_sigma, config.unsharp_amount)
    stem = args.image.stem
    paths = [write_gray(out / f"{stem}_hematoxylin.png", hema),
             write_gray(out / f"{stem}_unsharp.png", sharp)]
    if config.figures:
        paths.append(plot_preprocessing(rgb, hema, sharp, out / f"{stem}_preprocessing.png"))
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_train(args) -> int:
    from .pipeline.train import train
    config = _config_from(args)
    start = time.perf_counter()

    def progress(row):
        if row["step"] == 1 or row["step"] % 50 == 0:
            print(f"step {row['step']:5d}  epoch {row['epoch']:3d}  l_final {row['l_final']:.4f}  "
                  f"dice {row['dice']:.3f}  bce {row['bce']:.4f}")

    result = train(config, progress)
    print(f"trained {len(result.history)} steps in {time.perf_counter() - start:.1f}s")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    for p in result.figure_paths:
        print(f"figure: {p}")
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline.evaluate import evaluate, oracle_predictor
    config = _config_from(args)
    if not args.oracle and args.checkpoint is None:
        raise ConfigError("evaluate needs --checkpoint (or --oracle)")
    res = evaluate(config, args.checkpoint, args.split, oracle_predictor if args.oracle else None)
    m = res.report.mean
    print("name,object_dice,f1,object_hausdorff")
    print(f"mean,{m.object_dice:.4f},{m.f1:.4f},{m.object_hausdorff:.4f}")
    print(res.report.summary())
    print(f"report: {res.csv_path} {res.json_path}")
    for p in res.figure_paths:
        print(f"figure: {p}")
    return 0


def cmd_segment(args) -> int:
    from .pipeline.evaluate import segment
    config = _config_from(args)
    labels = segment(config, args.checkpoint, args.image, args.output, args.prob_output)
    print(f"wrote {args.output}: {labels.shape[1]}x{labels.shape[0]}, {int(labels.max())} objects")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    def report(r):
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<26} worst rel err {r.worst:.2e} "
              f"over {r.instances} instances")

    results = run_suite(args.instances, args.seed, report=report)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} cases passed")
    return 1 if failed else 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "segment": cmd_segment,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"glandseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
