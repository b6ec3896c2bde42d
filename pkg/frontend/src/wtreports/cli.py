"""Standalone renderer: `render --input DIR --format png`.

Reads a run directory, writes figures and summary.md to a separate
output directory (default: a sibling of the input named
`<input>-report`), and never modifies the input.  Exits 0 on success,
2 on anything that prevents rendering, with the offending file named
on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .reading import ReportError, load_manifest
from .render import PLOT_KINDS, ReportSpec, infer_kinds, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render",
        description="render figures and a summary table from a run directory",
    )
    parser.add_argument("--input", required=True, help="a run output directory")
    parser.add_argument("--format", default="png", choices=("png", "svg"))
    parser.add_argument(
        "--kinds",
        help=f"comma-separated plot kinds (default: from the run kind); "
        f"available: {', '.join(PLOT_KINDS)}",
    )
    parser.add_argument(
        "--output",
        help="where to write figures and summary.md (default: <input>-report)",
    )
    args = parser.parse_args(argv)

    in_dir = Path(args.input)
    try:
        manifest = load_manifest(in_dir)
        if args.kinds:
            kinds = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
        else:
            kinds = infer_kinds(manifest)
        spec = ReportSpec(input_dir=in_dir, kinds=kinds, fmt=args.format)
        if args.output:
            out = Path(args.output)
        else:
            base = in_dir.resolve()
            out = base.parent / (base.name + "-report")
        written = render(spec, out)
    except ReportError as e:
        print(f"render error: {e}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
