"""Small constructors shared by the test modules."""

import numpy as np

from crossscale.grid import NODATA, BinaryGrid, CountGrid, GridHeader


def header(nrows, ncols, cellsize=250.0, nodata=-9999.0):
    return GridHeader(ncols, nrows, 0.0, 0.0, cellsize, nodata)


def binary(rows, cellsize=250.0):
    """BinaryGrid from nested lists; ``None`` marks NoData."""
    arr = np.array([[NODATA if v is None else v for v in row] for row in rows], dtype=np.uint8)
    return BinaryGrid(header(*arr.shape, cellsize), arr)


def counts(rows, cellsize=250.0):
    arr = np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=float)
    return CountGrid(header(*arr.shape, cellsize), arr)
