"""``ctdf`` command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Errors are reported on stderr as a single ``error: ...`` line.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as cfgmod
from . import trainer
from .errors import ConfigError, CtdfError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", help="base directory for data/checkpoint/report paths")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    p = _Parser(prog="ctdf", description="Low-dose CT denoising: simulate, train, evaluate.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="simulate LDCT/NDCT training pairs")
    t = sub.add_parser("train", parents=[common], help="train the configured model")
    t.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    d = sub.add_parser("denoise", parents=[common], help="denoise slice files")
    d.add_argument("--checkpoint", help="checkpoint file (default: last checkpoint)")
    d.add_argument("--dest", help="directory for .denoised files (default: next to each input)")
    d.add_argument("inputs", nargs="+", help="slice files to denoise")
    e = sub.add_parser("eval", parents=[common], help="metrics over the validation split")
    e.add_argument("--checkpoint", help="checkpoint file (default: last checkpoint)")
    n = sub.add_parser("noise-analyze", parents=[common], help="high-frequency noise decomposition")
    n.add_argument("--checkpoint", help="checkpoint file (default: last checkpoint)")
    n.add_argument("--oracle", action="store_true", help="use output := NDCT instead of a model")
    n.add_argument("--previews", type=int, default=4, help="number of pairs with PGM previews")
    return p


def _run(args) -> None:
    cfg = cfgmod.load(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.seed = args.seed
    base = args.out if args.out is not None else os.path.dirname(os.path.abspath(args.config))
    if args.command == "gen-data":
        m = trainer.cmd_gen_data(cfg, base)
        print(f"{len(m.train)} train / {len(m.val)} val pairs in {m.root}")
    elif args.command == "train":
        res = trainer.cmd_train(cfg, base, resume=args.resume)
        print(f"checkpoint {res.checkpoint}")
    elif args.command == "denoise":
        ck = args.checkpoint or os.path.join(cfgmod.resolve(cfg, base).checkpoint_dir, trainer.LAST)
        for path in trainer.cmd_denoise(ck, args.inputs, args.dest):
            print(path)
    elif args.command == "eval":
        rep = trainer.cmd_eval(cfg, base, args.checkpoint)
        m = rep.mean()
        print(f"val RMSE ldct {m.rmse_ldct:.3f} out {m.rmse_out:.3f} HU; "
              f"SSIM ldct {m.ssim_paper_ldct:.4f} out {m.ssim_paper_out:.4f}")
    elif args.command == "noise-analyze":
        _, mean = trainer.cmd_noise_analyze(cfg, base, args.checkpoint, oracle=args.oracle,
                                            n_previews=args.previews)
        print(f"cos(removed,added) {mean.cos_ra:.4f} cos(removed,target) {mean.cos_rt:.4f} "
              f"cos(target,added) {mean.cos_ta:.4f}")


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _run(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CtdfError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
