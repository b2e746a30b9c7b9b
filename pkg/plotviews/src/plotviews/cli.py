"""Command line entry point: ``plotviews --csv run.csv --kind sweep --out fig.svg``."""

from __future__ import annotations

import argparse

from plotviews.render import PlotSchemaError, PlotSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plotviews", description="Render an edgecache harness CSV to an SVG figure."
    )
    parser.add_argument("--csv", required=True, help="input CSV (first line: # <schema>)")
    parser.add_argument("--kind", required=True, choices=("loss", "sweep"))
    parser.add_argument("--out", required=True, help="output SVG path")
    parser.add_argument(
        "--series", default="policy", help="grouping column for sweep figures (default: policy)"
    )
    args = parser.parse_args(argv)
    spec = PlotSpec(csv_path=args.csv, kind=args.kind, out_path=args.out, series=args.series)
    try:
        out = render(spec)
    except (PlotSchemaError, OSError) as exc:
        parser.exit(2, f"plotviews: {exc}\n")
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
