"""Command-line entry point: ``crossscale rasterize|compare|synth``.

Exit status is 0 on success, 1 on I/O failure and 2 on invalid arguments or
input. Diagnostics go to stderr; stdout stays empty on success.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from crossscale.agreement import DEFAULT_LEVELS, ProbabilityMapping
from crossscale.asciigrid import write_ascii_grid
from crossscale.grid import AlignmentError, GridHeader
from crossscale.pipeline import compare_files
from crossscale.rasterize import load_points_csv, points_to_counts
from crossscale.synth import SceneSpec, expected_surface, generate_scene

EXIT_IO = 1
EXIT_INVALID = 2


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _unit_float(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def parse_prob_map(text: str) -> ProbabilityMapping:
    """``linear``, ``rank`` or ``table:<json>`` where ``<json>`` is inline or a file path."""
    if text in ("linear", "rank"):
        return ProbabilityMapping(text)
    if not text.startswith("table:"):
        raise ValueError(f"--prob-map must be linear, rank or table:<json>, got {text!r}")
    payload = text[len("table:"):]
    try:
        table = json.loads(payload)
    except json.JSONDecodeError:
        table = json.loads(Path(payload).read_text())
    if not isinstance(table, dict):
        raise ValueError("--prob-map table must be a JSON object")
    return ProbabilityMapping("table", table)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossscale", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rasterize", help="count points per cell of a lattice")
    p.add_argument("--points", required=True, help="CSV with header x,y[,weight]")
    p.add_argument("--ncols", required=True, type=_positive_int)
    p.add_argument("--nrows", required=True, type=_positive_int)
    p.add_argument("--xll", required=True, type=float)
    p.add_argument("--yll", required=True, type=float)
    p.add_argument("--cellsize", required=True, type=_positive_float)
    p.add_argument("--nodata", type=float, default=-9999.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="cross-scale comparison of two grids")
    p.add_argument("--test", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--levels", type=_positive_int, default=DEFAULT_LEVELS)
    p.add_argument("--threshold", type=_positive_float, default=1.0)
    p.add_argument("--prob-map", default="linear", help="linear | rank | table:<json>")
    p.add_argument("--theta", type=_unit_float, default=0.5)
    p.add_argument("--threads", type=int, default=0, help="worker threads; 0 uses every core")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene and its expected switch levels")
    p.add_argument("--spec", required=True, help="scene JSON")
    p.add_argument("--levels", type=_positive_int, default=DEFAULT_LEVELS)
    p.add_argument("--out-dir", required=True)
    return parser


def cmd_rasterize(args) -> int:
    lattice = GridHeader(args.ncols, args.nrows, args.xll, args.yll, args.cellsize, args.nodata)
    points = load_points_csv(args.points)
    grid, dropped = points_to_counts(points, lattice)
    write_ascii_grid(grid, args.out)
    print(f"dropped {dropped.count} points outside the lattice (weight {dropped.weight:g})", file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    mapping = parse_prob_map(args.prob_map)
    compare_files(
        args.test,
        args.ref,
        args.out_dir,
        levels=args.levels,
        threshold=args.threshold,
        mapping=mapping,
        theta=args.theta,
        workers=args.threads,
    )
    return 0


def cmd_synth(args) -> int:
    spec = SceneSpec.from_json(Path(args.spec).read_text(), levels=args.levels)
    expected = expected_surface(spec, args.levels)
    test, ref = generate_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ascii_grid(test, out / "test.asc")
    write_ascii_grid(ref, out / "ref.asc")
    write_ascii_grid(expected.to_grid(), out / "expected.asc")
    return 0


COMMANDS = {"rasterize": cmd_rasterize, "compare": cmd_compare, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"crossscale {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except AlignmentError as exc:
        fields = ", ".join(m.field for m in exc.mismatches)
        print(f"crossscale {args.command}: inputs differ in {fields}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError, TypeError) as exc:
        print(f"crossscale {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
