"""Point records to per-cell count surfaces.

Cells are half-open: a point on a cell's left or bottom edge belongs to that
cell, a point on its right or top edge to the next one. Points outside the
lattice are dropped and tallied, not rejected.
"""

from __future__ import annotations

import csv
import math
import os
from typing import Iterable, NamedTuple

import numpy as np

from crossscale.grid import CountGrid, GridHeader


class PointRecord(NamedTuple):
    x: float
    y: float
    weight: float = 1.0


class Dropped(NamedTuple):
    count: int
    weight: float


class PointsFormatError(ValueError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


def _as_arrays(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] not in (2, 3):
            raise ValueError("point array must have shape (n, 2) or (n, 3)")
        w = arr[:, 2] if arr.shape[1] == 3 else np.ones(arr.shape[0])
        return arr[:, 0], arr[:, 1], w
    recs = [PointRecord(*p) for p in points]
    if not recs:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    x, y, w = (np.array(col, dtype=np.float64) for col in zip(*recs))
    return x, y, w


def points_to_counts(points: Iterable | np.ndarray, lattice: GridHeader) -> tuple[CountGrid, Dropped]:
    """Sum point weights per cell of ``lattice``.

    ``points`` is a sequence of :class:`PointRecord` (or ``(x, y[, weight])``
    tuples) or an ``(n, 2|3)`` array. Weights are accumulated in input order,
    so results are reproducible for real-valued weights too.
    """
    x, y, w = _as_arrays(points)
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        bad = int(np.flatnonzero(~(np.isfinite(x) & np.isfinite(y)))[0])
        raise ValueError(f"point {bad} has a non-finite coordinate")
    if not np.isfinite(w).all() or np.any(w < 0):
        bad = int(np.flatnonzero(~(w >= 0) | ~np.isfinite(w))[0])
        raise ValueError(f"point {bad} has an invalid weight {w[bad]!r}")
    col = np.floor((x - lattice.xll) / lattice.cellsize)
    row_up = np.floor((y - lattice.yll) / lattice.cellsize)
    inside = (col >= 0) & (col < lattice.ncols) & (row_up >= 0) & (row_up < lattice.nrows)
    row = lattice.nrows - 1 - row_up[inside].astype(np.int64)
    flat = row * lattice.ncols + col[inside].astype(np.int64)
    counts = np.bincount(flat, weights=w[inside], minlength=lattice.size)
    dropped = Dropped(int((~inside).sum()), float(w[~inside].sum()))
    return CountGrid(lattice, counts.reshape(lattice.shape)), dropped


def load_points_csv(source) -> list[PointRecord]:
    """Read ``x,y[,weight]`` rows; a missing weight column means weight 1.

    Row numbers in errors count the header as row 1.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as f:
            return load_points_csv(f)
    reader = csv.reader(source)
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise PointsFormatError(1, "empty file, expected header 'x,y[,weight]'") from None
    for name in ("x", "y"):
        if name not in header:
            raise PointsFormatError(1, f"missing required column {name!r}")
    ix, iy = header.index("x"), header.index("y")
    iw = header.index("weight") if "weight" in header else None
    out = []
    for rownum, row in enumerate(reader, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        fields = [("x", ix), ("y", iy)] + ([("weight", iw)] if iw is not None else [])
        vals = []
        for name, i in fields:
            if i >= len(row):
                raise PointsFormatError(rownum, f"missing {name} field")
            try:
                v = float(row[i])
            except ValueError:
                raise PointsFormatError(rownum, f"{name} value {row[i]!r} is not a number") from None
            if not math.isfinite(v):
                raise PointsFormatError(rownum, f"{name} value {row[i]!r} is not finite")
            vals.append(v)
        if iw is not None and vals[2] < 0:
            raise PointsFormatError(rownum, f"negative weight {row[iw]!r}")
        out.append(PointRecord(*vals))
    return out
