"""``app synth|preprocess|cluster|train|eval|ablate --config <path> [--set key=value ...]``"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .config import load_config
from .errors import AppformerError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app", description="Next-app prediction experiments on usage logs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*pipeline.STAGES, "ablate", "all"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML config file; defaults are used when omitted")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. model.d_model=64")
        p.add_argument("--quiet", action="store_true", help="do not print per-epoch training records")
        if name == "ablate":
            p.add_argument("--axis", required=True, choices=pipeline.ABLATION_AXES)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = None if args.quiet else (lambda rec: print(json.dumps(rec, sort_keys=True), flush=True))
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "ablate":
            manifest = pipeline.cmd_ablate(cfg, args.axis, log=log)
        elif args.command == "all":
            manifest = list(pipeline.run_all(cfg, log=log).values())[-1]
        elif args.command == "train":
            manifest = pipeline.cmd_train(cfg, log=log)
        else:
            manifest = pipeline.STAGES[args.command](cfg)
    except (AppformerError, OSError) as exc:
        print(f"app {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for path in sorted(manifest.outputs):
        print(f"wrote {cfg.out_dir / path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
