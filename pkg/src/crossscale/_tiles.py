"""Row-band partitioning and an order-preserving thread pool.

Every tiled routine splits its output into row bands, computes each band
independently and concatenates the bands in order, so results do not depend
on band size or on the number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

# cells (or bytes) per band; bounds temporary memory per worker
BAND_CELLS = 1 << 22


def band_slices(nrows: int, cells_per_row: int, band_cells: int = BAND_CELLS) -> list[slice]:
    step = max(1, band_cells // max(1, cells_per_row))
    return [slice(r, min(r + step, nrows)) for r in range(0, nrows, step)]


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return workers


def run_bands(fn, items, workers=1):
    """``[fn(item) for item in items]``, possibly on a thread pool."""
    items = list(items)
    workers = min(resolve_workers(workers), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
