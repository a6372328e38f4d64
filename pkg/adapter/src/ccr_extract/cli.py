"""Command line for the extractor: ``ccr-extract --out DIR IMAGES...``.

Exit codes: 0 success, 1 usage error, 2 extraction/data error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .extract import ExtractConfig, ExtractError, run_extract


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ccr-extract", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"ccr-extract {__version__}")
    parser.add_argument("images", nargs="+", help="input image files")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--nr", type=int, default=100,
                        help="superpixel region count (default 100)")
    parser.add_argument("--nc", type=float, default=50.0,
                        help="superpixel compactness (default 50)")
    parser.add_argument("--global-source", dest="global_source",
                        default="histogram", choices=["histogram"],
                        help="global descriptor source")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = ExtractConfig(
            images=tuple(args.images),
            out_dir=args.out,
            nr=args.nr,
            nc=args.nc,
            global_source=args.global_source,
        )
        written = run_extract(cfg)
        for path in written:
            print(path)
        return 0
    except _UsageError as e:
        print(f"ccr-extract: usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except ExtractError as e:
        print(f"ccr-extract: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
