"""Command line entry point: render one figure from one CSV table.

Exit codes: 0 success, 2 usage error (argparse), 3 rejected input or
output format, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from cascade_plots.csvio import FigureError
from cascade_plots.figures import KINDS, FigureSpec, render

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascade-plot",
        description="Render a figure from a cascade CSV table.",
    )
    parser.add_argument("kind", choices=KINDS, help="figure kind to render")
    parser.add_argument(
        "--in",
        dest="input_path",
        required=True,
        type=Path,
        metavar="CSV",
        help="input CSV table",
    )
    parser.add_argument(
        "--out",
        dest="output_path",
        required=True,
        type=Path,
        metavar="IMG",
        help="output image path (.svg)",
    )
    parser.add_argument(
        "--c",
        type=float,
        default=1.0,
        help="coupling exponent for the spectrum guide line (default 1)",
    )
    parser.add_argument(
        "--sigma",
        type=float,
        default=1.0,
        help="forcing amplitude for the sigma^2/2 guide line (default 1)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind,
            input_path=args.input_path,
            output_path=args.output_path,
            c=args.c,
            sigma=args.sigma,
        )
        out = render(spec)
    except FigureError as exc:
        print(f"cascade-plot: error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
