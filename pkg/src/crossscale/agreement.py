"""Cross-scale agreement: the confusion pyramid and switch-level ranking.

Test and reference presence grids are compared cell by cell at the native
resolution, then both are OR-aggregated by 2 and compared again, level after
level. Each level's classes are replicated back onto the native lattice and
stacked, giving every native pixel a trajectory of classes. A pixel that is
FP or FN natively is ranked by the first level at which its block becomes
TP: the earlier the switch, the more likely the disagreement is a small
positional offset rather than a real difference.

Array encoding of switch levels: 0 means not ranked (TP, TN), ``s`` in
``1..L`` is the switch level, ``L + 1`` means the pixel never switches, and
``NODATA`` (255) marks missing pixels.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from crossscale._tiles import band_slices, run_bands
from crossscale.grid import (
    NODATA,
    BinaryGrid,
    CodedGrid,
    CountGrid,
    GridHeader,
    or_downsample,
    require_aligned,
    upsample_nn,
)

DEFAULT_LEVELS = 3


class AgreementClass(IntEnum):
    TP = 1
    TN = 2
    FP = 3
    FN = 4
    NODATA = NODATA


TP, TN, FP, FN = AgreementClass.TP, AgreementClass.TN, AgreementClass.FP, AgreementClass.FN

NONE = 0  # family code of pixels that are not misclassified


@dataclass(frozen=True, eq=False)
class AgreementGrid(CodedGrid):
    allowed: tuple[int, ...] = dataclasses.field(default=(1, 2, 3, 4), init=False, repr=False)


@dataclass(frozen=True, eq=False)
class FamilyGrid(CodedGrid):
    """FP (3) / FN (4) family of natively misclassified pixels, NONE (0) elsewhere."""

    allowed: tuple[int, ...] = dataclasses.field(default=(NONE, 3, 4), init=False, repr=False)


class TrajectoryError(RuntimeError):
    """A trajectory that OR aggregation cannot produce; indicates a pyramid bug."""


# index: (test & 3) << 2 | (ref & 3); NODATA & 3 == 3
_CLASS_LUT = np.full(16, NODATA, dtype=np.uint8)
_CLASS_LUT[0b0101] = TP
_CLASS_LUT[0b0000] = TN
_CLASS_LUT[0b0100] = FP
_CLASS_LUT[0b0001] = FN


def _classify_cells(test: np.ndarray, ref: np.ndarray) -> np.ndarray:
    key = (test & np.uint8(3)) << np.uint8(2)
    key |= ref & np.uint8(3)
    return _CLASS_LUT[key]


def classify_agreement(test: BinaryGrid, ref: BinaryGrid, workers: int = 1) -> AgreementGrid:
    """Per-cell confusion class of ``test`` against ``ref``."""
    require_aligned(test.header, ref.header)
    bands = band_slices(test.header.nrows, test.header.ncols)
    parts = run_bands(lambda rows: _classify_cells(test.cells[rows], ref.cells[rows]), bands, workers)
    return AgreementGrid._wrap(test.header, np.concatenate(parts))


class PyramidLevel(NamedTuple):
    index: int
    test: BinaryGrid
    ref: BinaryGrid
    coarse: AgreementGrid
    native: AgreementGrid

    @property
    def factor(self) -> int:
        return 2**self.index


@dataclass(frozen=True)
class Pyramid:
    levels: tuple[PyramidLevel, ...]

    @property
    def depth(self) -> int:
        """Number of downsampling steps (``L``)."""
        return len(self.levels) - 1

    @property
    def header(self) -> GridHeader:
        return self.levels[0].native.header


def build_pyramid(
    test: BinaryGrid, ref: BinaryGrid, levels: int = DEFAULT_LEVELS, workers: int = 1
) -> Pyramid:
    """Confusion grids at ``levels + 1`` resolutions, each also on the native lattice.

    Agreement at every level is recomputed from the OR-aggregated binaries,
    never aggregated from finer classes. Native copies of coarse levels keep
    the native NoData pixels as NODATA, so missing input stays missing in
    every trajectory.
    """
    if int(levels) != levels or levels < 1:
        raise ValueError(f"levels must be an integer >= 1, got {levels!r}")
    require_aligned(test.header, ref.header)
    native_header = test.header
    nrows, ncols = native_header.shape

    stack = np.empty((levels + 1, nrows, ncols), dtype=np.uint8)
    base = classify_agreement(test, ref, workers)
    stack[0] = base.cells
    missing = base.cells == NODATA
    binaries = [(test, ref, base)]
    t, r = test, ref
    for s in range(1, levels + 1):
        t = or_downsample(t, 2, workers)
        r = or_downsample(r, 2, workers)
        coarse = classify_agreement(t, r, workers)
        stack[s] = upsample_nn(coarse, 2**s, native_header).cells
        stack[s][missing] = NODATA
        binaries.append((t, r, coarse))
    stack.flags.writeable = False
    out = [
        PyramidLevel(s, t, r, coarse if s else AgreementGrid._wrap(native_header, stack[0]),
                     AgreementGrid._wrap(native_header, stack[s]))
        for s, (t, r, coarse) in enumerate(binaries)
    ]
    return Pyramid(tuple(out))


@dataclass(frozen=True, eq=False)
class TrajectoryCube:
    """Per-pixel class sequences; ``classes[s]`` is level ``s`` on the native lattice."""

    header: GridHeader
    classes: np.ndarray

    @property
    def depth(self) -> int:
        return self.classes.shape[0] - 1

    def trajectory(self, row: int, col: int) -> list[AgreementClass]:
        return [AgreementClass(int(c)) for c in self.classes[:, row, col]]


def build_cube(pyramid: Pyramid) -> TrajectoryCube:
    natives = [lvl.native.cells for lvl in pyramid.levels]
    base = natives[0].base
    shared = (
        base is not None
        and base.ndim == 3
        and base.shape[0] == len(natives)
        and all(n.base is base for n in natives)
        and all(np.shares_memory(base[i], n) for i, n in enumerate(natives))
    )
    classes = base if shared else np.stack(natives)
    return TrajectoryCube(pyramid.header, classes)


class SwitchResult(NamedTuple):
    family: AgreementClass
    level: int | None  # None: never switches to TP

    @property
    def never(self) -> bool:
        return self.level is None


def switch_level(trajectory: Sequence[int]) -> SwitchResult | None:
    """Rank one pixel's trajectory.

    Returns None for pixels that are TP, TN or NODATA natively. Raises
    :class:`TrajectoryError` for sequences OR aggregation cannot produce.
    """
    classes = [AgreementClass(int(c)) for c in trajectory]
    if len(classes) < 2:
        raise TrajectoryError(f"trajectory needs at least two levels, got {len(classes)}")
    first = classes[0]
    if first in (TP, AgreementClass.NODATA):
        if any(c != first for c in classes):
            raise TrajectoryError(f"{first.name} pixel changed class: {_fmt(classes)}")
        return None
    if first == TN:
        tail = classes[1:]
        for s in range(1, len(tail)):
            if tail[s - 1] == TP and tail[s] != TP:
                raise TrajectoryError(f"TP reverted at level {s + 1}: {_fmt(classes)}")
        return None
    switched = None
    for s, c in enumerate(classes[1:], start=1):
        if switched is None:
            if c == TP:
                switched = s
            elif c != first:
                raise TrajectoryError(f"{first.name} pixel became {c.name} at level {s}: {_fmt(classes)}")
        elif c != TP:
            raise TrajectoryError(f"TP at level {switched} reverted to {c.name} at level {s}: {_fmt(classes)}")
    return SwitchResult(first, switched)


def _fmt(classes) -> str:
    return " ".join(c.name for c in classes)


def _switch_band(classes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    depth = classes.shape[0] - 1
    first = classes[0]
    family = np.where((first == FP) | (first == FN), first, np.uint8(NONE)).astype(np.uint8)
    family[first == NODATA] = NODATA
    ranked = family != NONE
    ranked &= family != NODATA
    level = np.where(ranked, np.uint8(depth + 1), np.uint8(0)).astype(np.uint8)
    for s in range(depth, 0, -1):
        level[ranked & (classes[s] == TP)] = s
    level[first == NODATA] = NODATA

    for s in range(1, depth + 1):
        cur, prev = classes[s], classes[s - 1]
        bad = (prev == TP) & (cur != TP)
        bad |= ranked & (cur != TP) & (cur != first)
        bad |= (first == NODATA) != (cur == NODATA)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            seq = [AgreementClass(int(x)) for x in classes[:, r, c]]
            raise TrajectoryError(f"malformed trajectory at band pixel ({r}, {c}): {_fmt(seq)}")
    return family, level


def switch_surface(cube: TrajectoryCube, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`switch_level` over the whole cube.

    Returns ``(family, level)`` uint8 arrays using the module's encodings.
    """
    bands = band_slices(cube.header.nrows, cube.header.ncols * cube.classes.shape[0])
    parts = run_bands(lambda rows: _switch_band(cube.classes[:, rows]), bands, workers)
    family = np.concatenate([p[0] for p in parts])
    level = np.concatenate([p[1] for p in parts])
    return family, level


@dataclass(frozen=True)
class ProbabilityMapping:
    """Monotone map from switch level to offset-induced misclassification probability.

    ``linear``: ``(L + 1 - s) / (L + 1)``, never -> 0.
    ``rank``: integer rank ``L + 1 - s``, never -> 0.
    ``table``: explicit values for levels ``1..L`` plus ``"never"``.
    """

    kind: str = "linear"
    table: Mapping | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rank", "table"):
            raise ValueError(f"unknown probability mapping {self.kind!r}")
        if self.kind != "table":
            if self.table is not None:
                raise ValueError("only the 'table' mapping takes a table")
            return
        if not self.table:
            raise ValueError("table mapping needs entries")
        levels, never = {}, None
        for key, value in self.table.items():
            p = float(value)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability for {key!r} must lie in [0, 1], got {value!r}")
            if str(key).lower() == "never":
                never = p
                continue
            try:
                s = int(key)
            except (TypeError, ValueError):
                raise ValueError(f"table key {key!r} is neither a level nor 'never'") from None
            if s < 1 or str(s) != str(key).strip():
                raise ValueError(f"table key {key!r} is not a level >= 1")
            levels[s] = p
        if never is None:
            raise ValueError("table mapping needs a 'never' entry")
        ordered = [levels[s] for s in sorted(levels)] + [never]
        if any(a <= b for a, b in zip(ordered, ordered[1:])):
            raise ValueError(
                "table probabilities must strictly decrease with switch level, "
                f"with 'never' lowest: {ordered}"
            )
        object.__setattr__(self, "table", {**{s: levels[s] for s in sorted(levels)}, "never": never})

    @classmethod
    def parse(cls, text: str) -> ProbabilityMapping:
        """``linear``, ``rank`` or a table given as a dict."""
        return cls(text) if text in ("linear", "rank") else cls("table", text)

    def values(self, levels: int) -> np.ndarray:
        """Lookup indexed by switch code: 0 -> 0, ``s`` -> p(s), ``L + 1`` -> p(never)."""
        n = levels + 1
        if self.kind == "linear":
            out = [(n - s) / n for s in range(1, n)] + [0.0]
        elif self.kind == "rank":
            out = [float(n - s) for s in range(1, n)] + [0.0]
        else:
            missing = [s for s in range(1, n) if s not in self.table]
            extra = [s for s in self.table if s != "never" and s > levels]
            if missing or extra:
                raise ValueError(
                    f"table must cover exactly levels 1..{levels}; "
                    f"missing {missing}, unexpected {extra}"
                )
            out = [self.table[s] for s in range(1, n)] + [self.table["never"]]
        return np.array([0.0] + out)

    def describe(self):
        if self.kind == "table":
            return {"kind": "table", "table": {str(k): v for k, v in self.table.items()}}
        return {"kind": self.kind}


def offset_probability(
    result: SwitchResult, levels: int, mapping: ProbabilityMapping = ProbabilityMapping()
) -> float:
    s = result.level
    if s is not None and not (1 <= s <= levels):
        raise ValueError(f"switch level {s} outside 1..{levels}")
    code = levels + 1 if s is None else s
    return float(mapping.values(levels)[code])


def probability_lookup(levels: int, mapping: ProbabilityMapping) -> np.ndarray:
    """Probability per switch code (256 entries, NaN for NODATA)."""
    lut = np.zeros(256)
    lut[: levels + 2] = mapping.values(levels)
    lut[NODATA] = np.nan
    return lut


class CompositeSurface:
    """Native-resolution outputs of the cross-scale comparison.

    ``classes`` are the level-0 classes, ``family`` the FP/FN family of
    misclassified pixels and ``switch`` the switch-level codes. The
    ``probability`` grid is built from ``switch`` on first access.
    """

    def __init__(self, classes: AgreementGrid, family: FamilyGrid, switch: np.ndarray, lookup: np.ndarray):
        self.classes = classes
        self.family = family
        self.switch = switch
        self.lookup = lookup
        self._probability = None

    @property
    def probability(self) -> CountGrid:
        if self._probability is None:
            self._probability = CountGrid._wrap(self.classes.header, self.lookup[self.switch])
        return self._probability


def composite_surface(
    cube: TrajectoryCube,
    levels: int | None = None,
    mapping: ProbabilityMapping = ProbabilityMapping(),
    workers: int = 1,
) -> CompositeSurface:
    """Native-resolution class, offset-probability and family surfaces.

    Probability is 0 for TP and TN pixels and NoData for missing pixels.
    """
    if levels is None:
        levels = cube.depth
    elif levels != cube.depth:
        raise ValueError(f"cube has {cube.depth} levels, got levels={levels}")
    family, switch = switch_surface(cube, workers)
    return CompositeSurface(
        AgreementGrid._wrap(cube.header, cube.classes[0]),
        FamilyGrid._wrap(cube.header, family),
        switch,
        probability_lookup(levels, mapping),
    )


def table_rows(levels: int = DEFAULT_LEVELS) -> list[list[AgreementClass]]:
    """The canonical trajectories: each family held for ``k`` levels then TP."""
    rows = []
    for fam in (FP, FN):
        for held in range(levels + 1, 0, -1):
            rows.append([fam] * held + [TP] * (levels + 1 - held))
    return rows
