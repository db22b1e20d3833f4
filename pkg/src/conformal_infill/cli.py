"""Command-line entry point: ``conformal-infill <subcommand> --config FILE``."""

from __future__ import annotations

import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, parse_config
from .pipeline import STAGE_CODES, STAGES, Context, StageError


def _resolution(text: str) -> tuple[int, int]:
    try:
        n1, n2 = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N1xN2, got {text!r}") from None
    if n1 < 1 or n2 < 1:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return n1, n2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="conformal-infill",
        description="Design, de-homogenize and verify conformally graded infill structures.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", help="output directory (default: config 'output' or ./out/<name>)")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS/solver threads")
    common.add_argument("--fine-res", type=_resolution, default=None, metavar="N1xN2",
                        help="validation mesh resolution (the raster has 'supersample' "
                             "pixels per element and axis)")
    common.add_argument("--max-iters", type=int, default=None, help="optimizer iteration cap")
    common.add_argument("--seed", type=int, default=0, help="seed for the initial perturbation")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    helps = {
        "homogenize": "homogenize the matrix cell, write C_hat.csv",
        "fields": "solve ln(lambda) and theta for the current design",
        "optimize": "run the compliance minimization",
        "dehom": "build the fine-scale structure from the design",
        "validate": "fine-scale FE analysis of the structure",
        "all": "optimize, dehom and validate in sequence",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text)
        if name in ("optimize", "all"):
            sp.add_argument("--resume", action="store_true", help="continue from state.json")
    return p


def run_command(command: str, ctx: Context, resume: bool = False) -> None:
    names = ["optimize", "dehom", "validate"] if command == "all" else [command]
    for name in names:
        if name == "optimize":
            STAGES[name](ctx, resume=resume)
        else:
            STAGES[name](ctx)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config).with_overrides(max_iters=args.max_iters,
                                                        fine_res=args.fine_res)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return STAGE_CODES["config"]
    out = args.out or cfg.raw.get("output") or f"out/{cfg.name}"
    try:
        with threadpool_limits(limits=args.threads):
            ctx = Context(cfg, out, seed=args.seed)
            run_command(args.command, ctx, resume=getattr(args, "resume", False))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    print(f"{args.command}: artifacts in {ctx.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
