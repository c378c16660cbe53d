"""ld-figs: batch figures from the lab's CSV/JSON outputs.

Examples:
  ld-figs --kind convergence --in sweep_report.json --out fig.svg
  ld-figs --kind decay --in series.csv --ledger ledger.json --out decay.svg
  ld-figs --kind nusselt --in nusselt_report.json --out nu.png
  ld-figs --kind spectrum --in eigs.csv --out spec.pdf
"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ld-figs", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", required=True, action="append",
                        help="input report/series path (repeatable)")
    parser.add_argument("--ledger", default=None, help="constants ledger JSON (decay kind)")
    parser.add_argument("--out", required=True)
    parser.add_argument("--title", default=None)
    parser.add_argument("--linear-y", action="store_true", help="linear y axis")
    args = parser.parse_args(argv)
    spec = FigureSpec(kind=args.kind, inputs=args.inputs, out=args.out,
                      ledger=args.ledger, logy=not args.linear_y, title=args.title)
    path = render(spec)
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
