"""Per-level confusion tallies, switch-level histograms and adjusted disagreement.

Per-level counts are taken on each level's coarse grid (one decision per
coarse cell), not on the replicated native copies, which would count every
coarse decision ``4**s`` times.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from crossscale.agreement import (
    FN,
    FP,
    TN,
    TP,
    AgreementGrid,
    ProbabilityMapping,
    Pyramid,
    TrajectoryCube,
    probability_lookup,
    switch_surface,
)
from crossscale.grid import NODATA

UNDEFINED = None  # ratio with a zero denominator


@dataclass(frozen=True)
class ConfusionCounts:
    level_index: int
    cellsize: float
    tp: int
    tn: int
    fp: int
    fn: int
    nodata: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn + self.nodata

    @property
    def valid(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion_matrix(grid: AgreementGrid, level_index: int = 0) -> ConfusionCounts:
    tally = np.bincount(grid.cells.ravel(), minlength=256)
    return ConfusionCounts(
        level_index,
        grid.header.cellsize,
        tp=int(tally[TP]),
        tn=int(tally[TN]),
        fp=int(tally[FP]),
        fn=int(tally[FN]),
        nodata=int(tally[NODATA]),
    )


def _ratio(num, den):
    return num / den if den else UNDEFINED


@dataclass(frozen=True)
class Measures:
    percent_correct: float | None
    omission: float | None
    commission: float | None
    f_measure: float | None


def derived_measures(counts: ConfusionCounts) -> Measures:
    """Standard accuracy ratios; ``None`` where the denominator is zero.

    ``percent_correct`` is a fraction in [0, 1].
    """
    c = counts
    return Measures(
        percent_correct=_ratio(c.tp + c.tn, c.valid),
        omission=_ratio(c.fn, c.fn + c.tp),
        commission=_ratio(c.fp, c.fp + c.tp),
        f_measure=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    )


def switch_tally(family: np.ndarray, switch: np.ndarray) -> np.ndarray:
    """Joint pixel counts, indexed ``[family_code, switch_code]``."""
    key = family.astype(np.uint16) << np.uint16(8)
    key |= switch
    return np.bincount(key.ravel(), minlength=1 << 16).reshape(256, 256)


def switch_histogram(family: np.ndarray, switch: np.ndarray, levels: int, tally=None) -> dict:
    """Counts per switch level (``1..L`` and ``"never"``) for each family."""
    if tally is None:
        tally = switch_tally(family, switch)
    out = {}
    for name, code in (("fp", FP), ("fn", FN)):
        hist = {str(s): int(tally[code, s]) for s in range(1, levels + 1)}
        hist["never"] = int(tally[code, levels + 1])
        out[name] = hist
    return out


@dataclass(frozen=True)
class AdjustedDisagreement:
    theta: float
    offset_fp: int
    offset_fn: int
    true_fp: int
    true_fn: int
    percent_correct: float | None
    adjusted_percent_correct: float | None

    @property
    def offset_induced(self) -> int:
        return self.offset_fp + self.offset_fn

    @property
    def true_disagreement(self) -> int:
        return self.true_fp + self.true_fn

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "offset_induced": {"fp": self.offset_fp, "fn": self.offset_fn, "total": self.offset_induced},
            "true_disagreement": {
                "fp": self.true_fp,
                "fn": self.true_fn,
                "total": self.true_disagreement,
            },
            "percent_correct": self.percent_correct,
            "adjusted_percent_correct": self.adjusted_percent_correct,
            "note": "derived: offset-induced pixels (probability >= theta) counted as agreement",
        }


def adjusted_disagreement(
    cube: TrajectoryCube,
    levels: int | None = None,
    mapping: ProbabilityMapping = ProbabilityMapping(),
    theta: float = 0.5,
    switch: tuple[np.ndarray, np.ndarray] | None = None,
    tally: np.ndarray | None = None,
) -> AdjustedDisagreement:
    """Split native FP/FN pixels into offset-induced (p >= theta) and true disagreement.

    ``switch`` may carry a precomputed ``(family, level)`` pair from
    :func:`~crossscale.agreement.switch_surface`.
    """
    if not (0.0 <= theta <= 1.0):
        raise ValueError(f"theta must lie in [0, 1], got {theta!r}")
    if levels is None:
        levels = cube.depth
    if tally is None:
        family, level = switch if switch is not None else switch_surface(cube)
        tally = switch_tally(family, level)
    prob = probability_lookup(levels, mapping)
    offset_codes = np.flatnonzero(prob[: levels + 2] >= theta)
    offset_codes = offset_codes[offset_codes >= 1]
    counts = {}
    for name, code in (("fp", FP), ("fn", FN)):
        offset = int(tally[code, offset_codes].sum())
        counts[name] = (offset, int(tally[code, 1 : levels + 2].sum()) - offset)
    base = np.bincount(cube.classes[0].ravel(), minlength=256)
    agree = int(base[TP] + base[TN])
    valid = agree + int(base[FP] + base[FN])
    offset_total = counts["fp"][0] + counts["fn"][0]
    return AdjustedDisagreement(
        theta=float(theta),
        offset_fp=counts["fp"][0],
        offset_fn=counts["fn"][0],
        true_fp=counts["fp"][1],
        true_fn=counts["fn"][1],
        percent_correct=_ratio(agree, valid),
        adjusted_percent_correct=_ratio(agree + offset_total, valid),
    )


CSV_FIELDS = (
    "level",
    "cellsize",
    "tp",
    "tn",
    "fp",
    "fn",
    "nodata",
    "total",
    "percent_correct",
    "omission",
    "commission",
    "f_measure",
)


@dataclass
class ComparisonReport:
    levels: list[tuple[ConfusionCounts, Measures]]
    histogram: dict
    adjusted: AdjustedDisagreement
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        levels = []
        for counts, measures in self.levels:
            row = {"level": counts.level_index, "cellsize": counts.cellsize}
            row.update({k: getattr(counts, k) for k in ("tp", "tn", "fp", "fn", "nodata")})
            row["total"] = counts.total
            row["measures"] = asdict(measures)
            levels.append(row)
        return {
            "granularity": "coarse-grid cells per level",
            "levels": levels,
            "histogram": self.histogram,
            "adjusted": self.adjusted.to_dict(),
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for counts, measures in self.levels:
            ratios = [
                "undefined" if v is UNDEFINED else repr(v)
                for v in (
                    measures.percent_correct,
                    measures.omission,
                    measures.commission,
                    measures.f_measure,
                )
            ]
            writer.writerow(
                [counts.level_index, repr(counts.cellsize), counts.tp, counts.tn, counts.fp,
                 counts.fn, counts.nodata, counts.total, *ratios]
            )
        return buf.getvalue()


def build_report(
    pyramid: Pyramid,
    cube: TrajectoryCube,
    mapping: ProbabilityMapping = ProbabilityMapping(),
    theta: float = 0.5,
    config: dict | None = None,
    switch: tuple[np.ndarray, np.ndarray] | None = None,
) -> ComparisonReport:
    if switch is None:
        switch = switch_surface(cube)
    tally = switch_tally(*switch)
    levels = pyramid.depth
    per_level = []
    for lvl in pyramid.levels:
        counts = confusion_matrix(lvl.coarse, lvl.index)
        per_level.append((counts, derived_measures(counts)))
    return ComparisonReport(
        levels=per_level,
        histogram=switch_histogram(*switch, levels, tally=tally),
        adjusted=adjusted_disagreement(cube, levels, mapping, theta, tally=tally),
        config=dict(config or {}),
    )
