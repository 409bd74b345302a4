"""rcshp-plot <figure-kind> <csv...> -o <img> [--metric ...] [--scheme ...]"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureSpec, PlotDataError, render_figure


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcshp-plot",
                                 description="render figures from rcshp CSV outputs")
    ap.add_argument("kind", choices=FIGURE_KINDS)
    ap.add_argument("csv", nargs="+", help="input CSV file(s): results.csv for the "
                    "sweep/bar kinds, trace CSV for convergence")
    ap.add_argument("-o", "--output", required=True, help="output image (.png or .svg)")
    ap.add_argument("--metric", default="utility",
                    help="y column for the sweep kinds (default: utility)")
    ap.add_argument("--scheme", action="append", default=None,
                    help="restrict to given scheme(s); repeatable")
    ap.add_argument("--title", default="")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(kind=args.kind, csv_paths=list(args.csv), out_path=args.output,
                      metric=args.metric, schemes=args.scheme or [], title=args.title)
    try:
        path = render_figure(spec)
    except (PlotDataError, OSError) as exc:
        print(f"rcshp-plot: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
