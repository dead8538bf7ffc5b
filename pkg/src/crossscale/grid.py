"""Raster data model and the resampling primitives of the agreement pyramid.

Grids are stored top row first as 2-D numpy arrays. Real-valued grids
(:class:`CountGrid`) mark missing cells with NaN; coded grids
(:class:`BinaryGrid`, :class:`AgreementGrid`, :class:`FamilyGrid`) are uint8
arrays where ``NODATA`` (255) marks missing cells. The header's
``nodata_value`` is only the sentinel used on disk.

Aggregation pyramids are anchored at the lower-left corner: blocks are
counted from the bottom row and the left column, so partial blocks sit at
the top and right edges.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple, TypeVar

import numpy as np

from crossscale._tiles import band_slices, run_bands

NODATA = 255

ALIGN_RTOL = 1e-6


class AlignmentError(ValueError):
    """Raised when two grids that must share a lattice do not."""

    def __init__(self, mismatches):
        self.mismatches = tuple(mismatches)
        detail = ", ".join(f"{m.field} ({m.a!r} vs {m.b!r})" for m in self.mismatches)
        super().__init__(f"grid headers are not aligned: {detail}")


@dataclass(frozen=True)
class GridHeader:
    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata_value: float = -9999.0

    def __post_init__(self):
        if int(self.ncols) != self.ncols or self.ncols < 1:
            raise ValueError(f"ncols must be a positive integer, got {self.ncols!r}")
        if int(self.nrows) != self.nrows or self.nrows < 1:
            raise ValueError(f"nrows must be a positive integer, got {self.nrows!r}")
        if not (math.isfinite(self.cellsize) and self.cellsize > 0):
            raise ValueError(f"cellsize must be positive, got {self.cellsize!r}")
        if not (math.isfinite(self.xll) and math.isfinite(self.yll)):
            raise ValueError("xll and yll must be finite")
        object.__setattr__(self, "ncols", int(self.ncols))
        object.__setattr__(self, "nrows", int(self.nrows))
        for name in ("xll", "yll", "cellsize", "nodata_value"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.nrows, self.ncols

    @property
    def size(self) -> int:
        return self.nrows * self.ncols

    def coarsened(self, factor: int) -> GridHeader:
        """Header of the lower-left anchored aggregate by ``factor``."""
        return dataclasses.replace(
            self,
            ncols=-(-self.ncols // factor),
            nrows=-(-self.nrows // factor),
            cellsize=self.cellsize * factor,
        )


class Mismatch(NamedTuple):
    field: str
    a: float
    b: float


def align_check(a: GridHeader, b: GridHeader) -> tuple[Mismatch, ...]:
    """Compare two lattices.

    Returns an empty tuple when the headers are aligned, otherwise one
    :class:`Mismatch` per differing field. Origins may differ by less than
    ``cellsize * 1e-6``; the nodata sentinel is not part of the lattice.
    """
    out = []
    for name in ("ncols", "nrows", "cellsize"):
        va, vb = getattr(a, name), getattr(b, name)
        if va != vb:
            out.append(Mismatch(name, va, vb))
    tol = a.cellsize * ALIGN_RTOL
    for name in ("xll", "yll"):
        va, vb = getattr(a, name), getattr(b, name)
        if not abs(va - vb) < tol:
            out.append(Mismatch(name, va, vb))
    return tuple(out)


def require_aligned(a: GridHeader, b: GridHeader) -> None:
    mismatches = align_check(a, b)
    if mismatches:
        raise AlignmentError(mismatches)


class _Raster:
    """Shared plumbing: shape checks, read-only storage, cell-wise equality."""

    header: GridHeader

    def _freeze(self, name, array, dtype, owned=False):
        array = np.asarray(array, dtype=dtype)
        if array.shape != self.header.shape:
            if array.ndim == 1 and array.size == self.header.size:
                array = array.reshape(self.header.shape)
            else:
                raise ValueError(
                    f"{name} has shape {array.shape}, header expects {self.header.shape}"
                )
        if array.flags.writeable:
            if not owned and (array.base is not None or not array.flags.c_contiguous):
                array = np.ascontiguousarray(array).copy()
            array.flags.writeable = False
        object.__setattr__(self, name, array)

    @classmethod
    def _wrap(cls, header: GridHeader, array: np.ndarray):
        """Construct from an array known to satisfy the grid's invariants."""
        grid = object.__new__(cls)
        object.__setattr__(grid, "header", header)
        name = "values" if issubclass(cls, CountGrid) else "cells"
        grid._freeze(name, array, np.float64 if name == "values" else np.uint8, owned=True)
        return grid

    def _data(self) -> np.ndarray:
        raise NotImplementedError

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        if self.header != other.header:
            return False
        return bool(np.array_equal(self._data(), other._data(), equal_nan=True))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CountGrid(_Raster):
    """Real-valued raster (counts, probabilities); NaN marks NoData."""

    header: GridHeader
    values: np.ndarray

    def __post_init__(self):
        self._freeze("values", self.values, np.float64)
        if np.any(self.values < 0):
            raise ValueError("counts must be nonnegative")

    def _data(self):
        return self.values

    @property
    def nodata_mask(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass(frozen=True, eq=False)
class CodedGrid(_Raster):
    """uint8 category raster with ``NODATA`` (255) for missing cells."""

    header: GridHeader
    cells: np.ndarray

    allowed: tuple[int, ...] = dataclasses.field(default=(), init=False, repr=False)

    def __post_init__(self):
        self._freeze("cells", self.cells, np.uint8)
        if self.allowed:
            ok = np.zeros(256, dtype=bool)
            ok[list(self.allowed)] = True
            ok[NODATA] = True
            if not ok[self.cells].all():
                bad = np.unique(self.cells[~ok[self.cells]])
                raise ValueError(f"{type(self).__name__} has invalid codes {bad.tolist()}")

    def _data(self):
        return self.cells

    @property
    def nodata_mask(self) -> np.ndarray:
        return self.cells == NODATA


@dataclass(frozen=True, eq=False)
class BinaryGrid(CodedGrid):
    allowed: tuple[int, ...] = dataclasses.field(default=(0, 1), init=False, repr=False)


G = TypeVar("G", bound=_Raster)


def binarize(grid: CountGrid, threshold: float = 1) -> BinaryGrid:
    """Presence where ``count >= threshold``, absence below, NoData kept."""
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold!r}")
    values = grid.values
    cells = (values >= threshold).astype(np.uint8)
    cells[np.isnan(values)] = NODATA
    return BinaryGrid._wrap(grid.header, cells)


def _or_band(cells, factor, pad_top, rows):
    # rows: slice of coarse rows; fine rows are offset by the top padding
    r0 = rows.start * factor - pad_top
    r1 = rows.stop * factor - pad_top
    fine = cells[max(r0, 0):r1]
    ncols = cells.shape[1]
    nc = -(-ncols // factor)
    # rank encoding: NODATA -> 0, 0 -> 1, 1 -> 2 (uint8 wrap-around)
    ranked = fine + np.uint8(1)
    missing_rows = max(0, -r0)
    missing_cols = nc * factor - ncols
    if missing_rows or missing_cols:
        ranked = np.pad(ranked, ((missing_rows, 0), (0, missing_cols)))
    nr = rows.stop - rows.start
    coarse = ranked.reshape(nr, factor, nc, factor).max(axis=(1, 3))
    return coarse - np.uint8(1)


def or_downsample(grid: BinaryGrid, factor: int = 2, workers: int = 1) -> BinaryGrid:
    """Presence-preserving aggregation by ``factor``.

    A coarse cell is 1 if any covered cell is 1, else 0 if any covered cell
    is 0, else NODATA. Partial blocks at the top and right edges are
    evaluated over the cells that exist.
    """
    if int(factor) != factor or factor < 2:
        raise ValueError(f"factor must be an integer >= 2, got {factor!r}")
    factor = int(factor)
    header = grid.header.coarsened(factor)
    pad_top = header.nrows * factor - grid.header.nrows
    bands = band_slices(header.nrows, header.ncols * factor * factor)
    parts = run_bands(lambda rows: _or_band(grid.cells, factor, pad_top, rows), bands, workers)
    return BinaryGrid._wrap(header, np.concatenate(parts) if len(parts) > 1 else parts[0])


def upsample_nn(grid: G, factor: int, target: GridHeader) -> G:
    """Block replication of ``grid`` onto the finer lattice ``target``.

    ``target`` must be the lattice ``grid`` was aggregated from, i.e. share
    the lower-left anchor and satisfy ``ceil(target.nrows / factor) ==
    grid.nrows`` (likewise for columns).
    """
    h = grid.header
    if (
        -(-target.nrows // factor) != h.nrows
        or -(-target.ncols // factor) != h.ncols
        or not math.isclose(target.cellsize * factor, h.cellsize, rel_tol=1e-9)
    ):
        raise ValueError(
            f"cannot replicate a {h.nrows}x{h.ncols} grid by {factor} onto "
            f"{target.nrows}x{target.ncols}"
        )
    data = grid._data()
    skip = h.nrows * factor - target.nrows
    # crop the partial block at the top and at the right
    wide = np.broadcast_to(data[:, :, None], (h.nrows, h.ncols, factor))
    wide = wide.reshape(h.nrows, h.ncols * factor)[:, : target.ncols]
    tall = np.broadcast_to(wide[:, None, :], (h.nrows, factor, target.ncols))
    fine = tall.reshape(h.nrows * factor, target.ncols)[skip:]
    return type(grid)._wrap(target, np.ascontiguousarray(fine))
