"""plots <figure-kind> --in <dir> --out <file.png>

Input directory layout per figure kind:

* benchmark_layers: contains benchmark_gf.csv
* moments_error:    contains benchmark_moments.csv
* gf_evolution:     a DMFT run directory with it_*/gf_{matsubara,real}.csv
* dos_compare:      two run directories ``--solid``/``--dashed`` (or
                    subdirectories kvqa/ and oracle/ of --in), each holding
                    gf_real.csv
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FIGURE_KINDS, FigureError, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plots")
    p.add_argument("kind", choices=FIGURE_KINDS)
    p.add_argument("--in", dest="in_dir", required=True,
                   help="input directory (see --help for layout)")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--solid", help="dos_compare: run dir drawn solid")
    p.add_argument("--dashed", help="dos_compare: run dir drawn dashed")
    return p


def spec_from_args(args) -> FigureSpec:
    in_dir = Path(args.in_dir)
    if args.kind == "benchmark_layers":
        inputs = {"csv": in_dir / "benchmark_gf.csv"}
    elif args.kind == "moments_error":
        inputs = {"csv": in_dir / "benchmark_moments.csv"}
    elif args.kind == "gf_evolution":
        inputs = {"run_dir": in_dir}
    else:
        solid = Path(args.solid) if args.solid else in_dir / "kvqa"
        dashed = Path(args.dashed) if args.dashed else in_dir / "oracle"
        inputs = {"solid": solid / "gf_real.csv",
                  "dashed": dashed / "gf_real.csv"}
    return FigureSpec(kind=args.kind, inputs=inputs, out_path=args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = render(spec_from_args(args))
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
