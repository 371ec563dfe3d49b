"""Command-line entry point: ``privnav {gen-data,train,eval,bench,attack}``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import BASELINES, resolve
from .errors import ConfigError, MissingArtifactError, PrivNavError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--parties", type=int)
    common.add_argument("--baseline", choices=BASELINES)
    common.add_argument("--desk-scale", action="store_true", help="small single-CPU profile")
    common.add_argument("--out-dir")
    common.add_argument("--all-baselines", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="privnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate train/test episode records")
    sub.add_parser("train", parents=[common], help="train the model behind a baseline")
    sub.add_parser("eval", parents=[common], help="closed-loop evaluation on the test worlds")
    sub.add_parser("bench", parents=[common], help="plaintext vs secret-shared forward timing")
    sub.add_parser("attack", parents=[common], help="linear probe on camera features vs single shares")
    return parser


def run(args) -> int:
    cfg = resolve(args.config, args.desk_scale, seed=args.seed, parties=args.parties, baseline=args.baseline,
                  out_dir=args.out_dir)
    if args.command == "gen-data":
        pipeline.gen_data(cfg)
        if args.all_baselines or cfg.baseline == "first_person_det":
            pipeline.gen_data(cfg, det=True)
    elif args.command == "train":
        names = pipeline.MODELS if args.all_baselines else (
            () if cfg.baseline == "random" else (pipeline.MODEL_OF[cfg.baseline],))
        for name in names:
            pipeline.train_model(cfg, name)
    elif args.command == "eval":
        if args.all_baselines:
            reports = pipeline.evaluate_all(cfg)
        else:
            reports = [pipeline.evaluate_baseline(cfg, cfg.baseline)[0]]
        from .evaluation import format_table

        print(format_table(reports))
    elif args.command == "bench":
        times = pipeline.run_bench(cfg)
        for k, v in times.items():
            print(f"{k}: {v:.6g} s" + ("" if k == "plain" else f" ({v / times['plain']:.0f}x)"))
    elif args.command == "attack":
        for k, v in pipeline.run_attack(cfg).items():
            print(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (PrivNavError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
