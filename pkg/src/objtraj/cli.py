"""Command-line surface: seven subcommands over the library workflows.

Exit codes: 0 success, 1 failed validation or runtime error (one machine
parsable line on stderr), 2 usage errors (argparse convention).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config, validate_config
from .errors import ObjtrajError
from .oos import parse_grid
from .workflows import (
    run_build_oos_maps,
    run_evaluate,
    run_infer,
    run_pd_curve,
    run_train_gen,
    run_train_predictor,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="objtraj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-config", help="check a config file and report all problems")
    p.add_argument("--config", required=True)

    p = sub.add_parser("train-gen", help="train the conditioned generator")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")

    p = sub.add_parser("build-oos-maps", help="grid-search optimal objective maps")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True, help="generator checkpoint")
    p.add_argument("--data", required=True, help="paired image directory")
    p.add_argument("--grid", default=None, help="t grid, e.g. 0:1:0.05")
    p.add_argument("--out", required=True, help="map output directory")

    p = sub.add_parser("train-predictor", help="train the objective-map predictor")
    p.add_argument("--config", required=True)
    p.add_argument("--gen-ckpt", required=True)
    p.add_argument("--oos-maps", required=True, help="directory from build-oos-maps")
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="super-resolve images under a map source")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True, help="generator checkpoint")
    p.add_argument("--lr", required=True, help="LR image or directory")
    p.add_argument("--map", default=None, help="const:<t>, map file, or map directory")
    p.add_argument("--predictor", default=None, help="predictor checkpoint")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="metric table over a paired dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--map", default=None)
    p.add_argument("--predictor", default=None)
    p.add_argument("--out", required=True, help="output table file")

    p = sub.add_parser("pd-curve", help="perception-distortion sweep over t")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", default=None)
    p.add_argument("--out", required=True, help="output table file")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        base_dir = Path(args.config).resolve().parent
        if args.command == "validate-config":
            problems = validate_config(config, base_dir=base_dir)
            if problems:
                for problem in problems:
                    print(f"invalid: {problem}")
                return 1
            print(f"ok: config digest {config.digest()}")
            return 0
        if args.command == "train-gen":
            ckpt = run_train_gen(config, args.out, base_dir=base_dir)
            print(f"wrote {ckpt}")
        elif args.command == "build-oos-maps":
            grid = parse_grid(args.grid) if args.grid else None
            paths = run_build_oos_maps(config, args.ckpt, args.data, args.out, grid=grid, base_dir=base_dir)
            print(f"wrote {len(paths)} maps to {args.out}")
        elif args.command == "train-predictor":
            ckpt = run_train_predictor(config, args.gen_ckpt, args.oos_maps, args.out, base_dir=base_dir)
            print(f"wrote {ckpt}")
        elif args.command == "infer":
            outputs = run_infer(config, args.ckpt, args.lr, args.out, map_arg=args.map, predictor_ckpt=args.predictor)
            print(f"wrote {len(outputs)} images to {args.out}")
        elif args.command == "evaluate":
            records = run_evaluate(
                config, args.ckpt, args.data, args.out,
                map_arg=args.map, predictor_ckpt=args.predictor, base_dir=base_dir,
            )
            print(f"wrote {args.out} ({len(records)} rows + summary)")
        elif args.command == "pd-curve":
            grid = parse_grid(args.grid) if args.grid else None
            curve = run_pd_curve(config, args.ckpt, args.data, args.out, grid=grid, base_dir=base_dir)
            print(f"wrote {args.out} ({len(curve.rows)} rows)")
        return 0
    except ObjtrajError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
