"""Batch figure rendering: rpmag-plot --in FILE [FILE ...] --kind KIND --out IMG."""

import argparse
import sys

from .figures import SchemaError, plot_comparison, plot_heatmap, plot_trace, plot_yield_profile

KINDS = {
    "heatmap": lambda paths, out: plot_heatmap(paths[0], out),
    "yield-profile": lambda paths, out: plot_yield_profile(paths[0], out),
    "comparison": plot_comparison,
    "trace": lambda paths, out: plot_trace(paths[0], out),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rpmag-plot", description=__doc__)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input table(s); comparison takes one file per series")
    parser.add_argument("--kind", choices=sorted(KINDS), required=True)
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)

    try:
        info = KINDS[args.kind](args.inputs, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out} ({info})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
