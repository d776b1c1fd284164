"""Script entry point: render one figure from benchmark CSVs."""

from __future__ import annotations

import argparse

from .figures import FigureSpec, plot_gap_curves, plot_speedup


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asyncsgd-plot",
                                 description="Render figures from sweep CSVs")
    ap.add_argument("--kind", choices=["gap-curves", "speedup"], required=True)
    ap.add_argument("--in", dest="inputs", nargs="+", required=True,
                    help="input CSV path(s)")
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--title", default="")
    ap.add_argument("--linear-gap-axis", action="store_true",
                    help="disable the default logarithmic gap axis")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(inputs=args.inputs,
                      kind=args.kind.replace("-", "_"),
                      output=args.out,
                      log_gap_axis=not args.linear_gap_axis,
                      title=args.title)
    if spec.kind == "gap_curves":
        plot_gap_curves(spec)
    else:
        plot_speedup(spec)
    print(args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
