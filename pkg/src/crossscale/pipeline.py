"""End-to-end comparison of two count grids, in memory or file to file."""

from __future__ import annotations

import hashlib
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

from crossscale import __version__
from crossscale.agreement import (
    DEFAULT_LEVELS,
    CompositeSurface,
    ProbabilityMapping,
    Pyramid,
    TrajectoryCube,
    build_cube,
    build_pyramid,
    composite_surface,
)
from crossscale.asciigrid import read_ascii_grid, write_ascii_grid, write_coded_values
from crossscale.grid import BinaryGrid, CountGrid, binarize, require_aligned
from crossscale.metrics import ComparisonReport, build_report


@dataclass
class Comparison:
    pyramid: Pyramid
    cube: TrajectoryCube
    surface: CompositeSurface
    report: ComparisonReport


def legend(nodata_value: float) -> dict:
    return {
        "class": {"TP": 1, "TN": 2, "FP": 3, "FN": 4, "NODATA": nodata_value},
        "family": {"NONE": 0, "FP": 3, "FN": 4, "NODATA": nodata_value},
        "probability": "offset-induced misclassification probability; 0 for TP/TN",
    }


def compare_binaries(
    test: BinaryGrid,
    ref: BinaryGrid,
    levels: int = DEFAULT_LEVELS,
    mapping: ProbabilityMapping = ProbabilityMapping(),
    theta: float = 0.5,
    config: dict | None = None,
    workers: int = 1,
) -> Comparison:
    pyramid = build_pyramid(test, ref, levels, workers)
    cube = build_cube(pyramid)
    surface = composite_surface(cube, levels, mapping, workers)
    report = build_report(
        pyramid, cube, mapping, theta, config, switch=(surface.family.cells, surface.switch)
    )
    return Comparison(pyramid, cube, surface, report)


def compare_grids(
    test: CountGrid,
    ref: CountGrid,
    levels: int = DEFAULT_LEVELS,
    threshold: float = 1,
    mapping: ProbabilityMapping = ProbabilityMapping(),
    theta: float = 0.5,
    workers: int = 1,
) -> Comparison:
    """Binarize both count grids at ``threshold`` and run the cross-scale comparison."""
    require_aligned(test.header, ref.header)
    config = run_config(levels, threshold, mapping, theta, test.header.nodata_value)
    return compare_binaries(
        binarize(test, threshold), binarize(ref, threshold), levels, mapping, theta, config, workers
    )


def run_config(levels, threshold, mapping, theta, nodata_value, inputs=None) -> dict:
    config = {
        "levels": levels,
        "threshold": threshold,
        "prob_map": mapping.describe(),
        "theta": theta,
        "aggregation": "OR, factor 2, anchored at the lower-left corner",
        "legend": legend(nodata_value),
        "version": __version__,
    }
    if inputs is not None:
        config["inputs"] = inputs
    return config


def _load_binary(path, threshold, workers):
    data = Path(path).read_bytes()
    digest = hashlib.sha256(data).hexdigest()
    grid = read_ascii_grid(data, workers)
    del data
    return binarize(grid, threshold), digest


def compare_files(
    test_path: str | os.PathLike,
    ref_path: str | os.PathLike,
    out_dir: str | os.PathLike,
    levels: int = DEFAULT_LEVELS,
    threshold: float = 1,
    mapping: ProbabilityMapping = ProbabilityMapping(),
    theta: float = 0.5,
    workers: int = 1,
) -> ComparisonReport:
    """Compare two ASCII grids and write every artifact to ``out_dir``.

    Writes ``class.asc``, ``family.asc``, ``probability.asc``,
    ``level<s>.asc`` (coarse classes per level), ``report.json`` and
    ``report.csv``. Artifacts depend only on input content and parameters,
    not on paths or ``workers``.
    """
    if not (0.0 <= theta <= 1.0):
        raise ValueError(f"theta must lie in [0, 1], got {theta!r}")
    test, test_digest = _load_binary(test_path, threshold, workers)
    ref, ref_digest = _load_binary(ref_path, threshold, workers)
    require_aligned(test.header, ref.header)
    # validate the mapping against the depth before any heavy work
    mapping.values(levels)
    inputs = {"test": {"sha256": test_digest}, "ref": {"sha256": ref_digest}}
    config = run_config(levels, threshold, mapping, theta, test.header.nodata_value, inputs)
    result = compare_binaries(test, ref, levels, mapping, theta, config, workers)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    surface = result.surface
    write_ascii_grid(surface.classes, out / "class.asc", workers)
    write_ascii_grid(surface.family, out / "family.asc", workers)
    write_coded_values(surface.classes.header, surface.switch, surface.lookup, out / "probability.asc", workers)
    # level 0 coarse classes are the native classes
    shutil.copyfile(out / "class.asc", out / "level0.asc")
    for lvl in result.pyramid.levels[1:]:
        write_ascii_grid(lvl.coarse, out / f"level{lvl.index}.asc", workers)
    (out / "report.json").write_bytes(result.report.to_json().encode())
    (out / "report.csv").write_bytes(result.report.to_csv().encode())
    return result.report
