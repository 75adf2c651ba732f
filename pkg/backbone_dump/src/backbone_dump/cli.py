"""Command-line front end: ``backbone-dump dump ...``.

Exit codes follow the consumer tool's convention: 0 on success, 1 for
runtime failures (bad values, nothing could be dumped), 2 for missing or
mistyped paths; argparse itself exits 2 for malformed flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .dump import DumpSpec, dump_features
from .models import supported_models


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="backbone-dump",
        description="Export residual-network stage feature maps as .fms stacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    dump = sub.add_parser("dump", help="dump feature stacks for a directory of images")
    dump.add_argument(
        "--model",
        required=True,
        help=f"backbone identifier ({', '.join(supported_models())})",
    )
    dump.add_argument(
        "--levels",
        default="1,2,3,4",
        help="comma-separated residual-stage indices in 1..4 (default: 1,2,3,4)",
    )
    dump.add_argument("--images", required=True, help="directory of images to dump")
    dump.add_argument("--out", required=True, help="output directory for .fms files and manifest.json")
    dump.add_argument(
        "--size",
        type=int,
        default=224,
        help="input resolution: shorter-side resize then center crop (default: 224)",
    )
    dump.add_argument(
        "--seed",
        type=int,
        default=0,
        help="weight-init seed used when no checkpoint is given (default: 0)",
    )
    dump.add_argument("--checkpoint", default=None, help="path to a backbone state dict")
    return parser


def _cmd_dump(args: argparse.Namespace) -> int:
    images = Path(args.images)
    if not images.exists():
        raise FileNotFoundError(f"image directory does not exist: {images}")
    if not images.is_dir():
        raise NotADirectoryError(f"not a directory: {images}")
    levels = tuple(int(token) for token in str(args.levels).split(",") if token.strip())
    spec = DumpSpec(
        model=args.model,
        images=images,
        out=args.out,
        levels=levels,
        size=args.size,
        seed=args.seed,
        checkpoint=args.checkpoint,
    )
    count = dump_features(spec)
    if count == 0:
        print("error: every image failed to dump", file=sys.stderr)
        return 1
    print(f"wrote {count} feature stacks to {args.out}", file=sys.stderr)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _cmd_dump(args)
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
