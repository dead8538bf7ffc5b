"""ESRI ASCII grid reading and writing.

The format is six ``KEY value`` header lines (NCOLS, NROWS, XLLCORNER,
YLLCORNER, CELLSIZE, NODATA_VALUE, in that order, keys case-insensitive)
followed by ``nrows * ncols`` whitespace-separated numbers, top row first.

Both directions work on row bands of the body so that 10^8-cell grids fit
in memory and can be processed on a thread pool; the output is identical
for any number of workers.
"""

from __future__ import annotations

import io
import math
import os
import re

import numpy as np

from crossscale._tiles import BAND_CELLS, band_slices, run_bands
from crossscale.grid import NODATA, CodedGrid, CountGrid, GridHeader

HEADER_KEYS = ("NCOLS", "NROWS", "XLLCORNER", "YLLCORNER", "CELLSIZE", "NODATA_VALUE")

# integer tokens longer than this go through float parsing to stay exact
_MAX_FAST_DIGITS = 15

_WS = np.zeros(256, dtype=bool)
_WS[[9, 10, 11, 12, 13, 32]] = True
_FAST_OK = _WS.copy()
_FAST_OK[48:58] = True
_FAST_OK[45] = True  # '-'
_DIGIT = np.zeros(256, dtype=np.int64)
_DIGIT[48:58] = np.arange(10)

_DECIMAL = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


class GridFormatError(ValueError):
    """Malformed ASCII grid. ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class HeaderError(GridFormatError):
    pass


class CellValueError(GridFormatError):
    pass


class CellCountError(GridFormatError):
    pass


class NegativeCountError(GridFormatError):
    pass


def format_number(value: float) -> str:
    """Integers without a decimal point, other reals as shortest round-trip."""
    value = float(value)
    if value.is_integer() and abs(value) <= 2**53:
        return str(int(value))
    return repr(value)


# -- reading ----------------------------------------------------------------


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return source
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            return f.read()
    data = source.read()
    if isinstance(data, str):
        data = data.encode("ascii")
    return data


def _parse_header(data: bytes) -> tuple[GridHeader, int]:
    pos = 0
    values = []
    for lineno, key in enumerate(HEADER_KEYS, start=1):
        end = data.find(b"\n", pos)
        if end < 0:
            end = len(data)
        line = data[pos:end].decode("ascii", errors="replace")
        pos = end + 1
        parts = line.split()
        if len(parts) != 2 or parts[0].upper() != key:
            raise HeaderError(lineno, f"expected '{key} <value>', got {line.strip()!r}")
        text = parts[1]
        try:
            if key in ("NCOLS", "NROWS"):
                values.append(int(text))
            else:
                if not _DECIMAL.fullmatch(text):
                    raise ValueError(text)
                values.append(float(text))
        except ValueError:
            raise HeaderError(lineno, f"{key} value {text!r} is not a number") from None
    try:
        header = GridHeader(*values)
    except ValueError as exc:
        raise HeaderError(1, str(exc)) from None
    return header, min(pos, len(data))


class _Band:
    __slots__ = ("values", "nodata", "first_line", "buf")

    def __init__(self, values, nodata, first_line, buf):
        self.values = values
        self.nodata = nodata
        self.first_line = first_line
        self.buf = buf


def _token_bounds(b: np.ndarray):
    solid = (~_WS[b]).view(np.int8)
    edge = np.diff(solid, prepend=np.int8(0), append=np.int8(0))
    return np.flatnonzero(edge == 1), np.flatnonzero(edge == -1)


def _token_line(buf, first_line: int, index: int) -> int:
    """Line number of the ``index``-th token of a band."""
    b = np.frombuffer(buf, dtype=np.uint8)
    starts, _ = _token_bounds(b)
    index = min(index, starts.size - 1)
    if index < 0:
        return first_line
    return first_line + int(np.count_nonzero(b[: starts[index]] == 10))


def _smallest_uint(values: np.ndarray) -> np.ndarray:
    top = int(values.max()) if values.size else 0
    for dtype in (np.uint8, np.uint16, np.uint32):
        if top <= np.iinfo(dtype).max:
            return values.astype(dtype)
    return values


def _parse_band_single(b: np.ndarray, nodata):
    """Bands made of one-digit tokens each followed by one space or newline."""
    if b.size % 2 or b.size == 0:
        return None
    digits, seps = b[0::2], b[1::2]
    if not (np.all((seps == 32) | (seps == 10)) and np.all(digits - np.uint8(48) < 10)):
        return None
    values = digits - np.uint8(48)
    mask = None
    if float(nodata).is_integer() and 0 <= nodata <= 9:
        mask = values == int(nodata)
        if mask.any():
            values[mask] = 0
        else:
            mask = None
    return values, mask


_LONG_INT = re.compile(rb"-?\d{2,15}")


def _parse_band_mostly_single(b: np.ndarray, nodata):
    """One-digit tokens with a few longer integers (e.g. a NoData sentinel).

    Needs single-byte separators; returns None for anything else, including
    negative counts, so the general parser can report them.
    """
    if b.size < 2 or _WS[b[0]] or not _WS[b[-1]]:
        return None
    ws = _WS[b]
    if np.any(ws[1:] & ws[:-1]):
        return None
    # bytes continuing a token; rare by assumption
    cont = np.flatnonzero(~ws[1:] & ~ws[:-1]) + 1
    if cont.size * 20 > b.size:
        return None
    first = cont[np.r_[True, np.diff(cont) > 1]] - 1 if cont.size else cont
    compact = np.delete(b, cont) if cont.size else b
    digits = compact[0::2] - np.uint8(48)
    # token index of each long token: its first byte after removing continuations
    index = (first - np.searchsorted(cont, first)) // 2
    longs = []
    for start in first.tolist():
        end = start + 1
        while end < b.size and not ws[end]:
            end += 1
        text = b[start:end].tobytes()
        if not _LONG_INT.fullmatch(text):
            return None
        longs.append(int(text))
    long_values = np.array(longs, dtype=np.int64)
    is_nodata = np.zeros(long_values.size, dtype=bool)
    if float(nodata).is_integer():
        is_nodata = long_values == int(nodata)
    if np.any(long_values[~is_nodata] < 0):
        return None
    ok = np.ones(digits.size, dtype=bool)
    ok[index] = False
    if np.any(digits[ok] >= 10):
        return None
    top = int(long_values[~is_nodata].max()) if (~is_nodata).any() else 0
    values = digits if top < 256 else digits.astype(np.int64)
    values[index] = np.where(is_nodata, 0, long_values)
    mask = None
    if is_nodata.any():
        mask = np.zeros(digits.size, dtype=bool)
        mask[index[is_nodata]] = True
    if float(nodata).is_integer() and 0 <= nodata <= 9:
        small = ok & (digits == int(nodata))
        if small.any():
            mask = small if mask is None else mask | small
            values[small] = 0
    return values, mask


def _parse_band_fast(buf, first_line, nodata):
    b = np.frombuffer(buf, dtype=np.uint8)
    single = _parse_band_single(b, nodata)
    if single is None:
        single = _parse_band_mostly_single(b, nodata)
    if single is not None:
        return _Band(single[0], single[1], first_line, buf)
    if not _FAST_OK[b].all():
        return None
    starts, ends = _token_bounds(b)
    lens = ends - starts
    if lens.size and lens.max() > _MAX_FAST_DIGITS:
        return None
    negative = b[starts] == 45
    minus = np.flatnonzero(b == 45)
    if minus.size:
        # '-' is only legal as the first byte of a token with digits after it
        at_start = np.zeros(b.size, dtype=bool)
        at_start[starts[negative]] = True
        if not at_start[minus].all() or np.any(lens[negative] < 2):
            return None
    values = np.zeros(starts.size, dtype=np.int64)
    sel = np.arange(starts.size)
    scale = 1
    for depth in range(int(lens.max()) if lens.size else 0):
        if depth:
            sel = sel[lens[sel] > depth]
        values[sel] += _DIGIT[b[ends[sel] - 1 - depth]] * scale
        scale *= 10
    if negative.any():
        values[negative] *= -1
    nodata_mask = None
    if float(nodata).is_integer():
        mask = values == int(nodata)
        if mask.any():
            nodata_mask = mask
    bad = negative if nodata_mask is None else negative & ~nodata_mask
    if bad.any():
        k = int(np.argmax(bad))
        raise NegativeCountError(
            _token_line(buf, first_line, k), f"negative count {int(values[k])}"
        )
    if nodata_mask is not None:
        values[nodata_mask] = 0
    return _Band(_smallest_uint(values), nodata_mask, first_line, buf)


def _parse_band_slow(buf, first_line, nodata):
    text = bytes(buf).decode("ascii", errors="replace")
    rows = []
    for offset, line in enumerate(text.split("\n")):
        tokens = line.split()
        if not tokens:
            continue
        lineno = first_line + offset
        for tok in tokens:
            if not _DECIMAL.fullmatch(tok):
                raise CellValueError(lineno, f"cell value {tok!r} is not a number")
        row = np.array(tokens, dtype=np.float64)
        is_nodata = row == nodata
        if np.any(row[~is_nodata] < 0):
            tok = tokens[int(np.argmax((row < 0) & ~is_nodata))]
            raise NegativeCountError(lineno, f"negative count {tok}")
        rows.append(row)
    values = np.concatenate(rows) if rows else np.zeros(0)
    mask = values == nodata
    values[mask] = 0
    return _Band(values, mask if mask.any() else None, first_line, buf)


def _parse_band(args):
    buf, first_line, nodata = args
    band = _parse_band_fast(buf, first_line, nodata)
    if band is None:
        band = _parse_band_slow(buf, first_line, nodata)
    return band


def _body_bands(body: memoryview, first_line: int, band_bytes: int):
    b = np.frombuffer(body, dtype=np.uint8)
    newlines = np.flatnonzero(b == 10)
    # band boundaries fall just after a newline
    cuts = [0]
    line_at = [first_line]
    target = band_bytes
    while target < b.size:
        k = int(np.searchsorted(newlines, target))
        if k >= newlines.size:
            break
        cut = int(newlines[k]) + 1
        if cut >= b.size:
            break
        cuts.append(cut)
        line_at.append(first_line + k + 1)
        target = cut + band_bytes
    cuts.append(b.size)
    return [(body[cuts[i] : cuts[i + 1]], line_at[i]) for i in range(len(cuts) - 1)]


def read_ascii_grid(source, workers: int = 1) -> CountGrid:
    """Read an ESRI ASCII grid from a path, a (text or binary) stream or bytes.

    Cells equal to NODATA_VALUE become NaN. Raises a
    :class:`GridFormatError` subclass naming the offending line for a
    malformed header, a non-numeric cell, a wrong cell count or a negative
    count.
    """
    data = _read_bytes(source)
    header, offset = _parse_header(data)
    body = memoryview(data)[offset:]
    nodata = header.nodata_value
    bands = _body_bands(body, len(HEADER_KEYS) + 1, band_bytes=4 * BAND_CELLS)
    parsed = run_bands(_parse_band, [(buf, line, nodata) for buf, line in bands], workers)

    expected = header.size
    total = sum(p.values.size for p in parsed)
    if total != expected:
        if total > expected:
            seen = 0
            for p in parsed:
                if seen + p.values.size > expected:
                    lineno = _token_line(p.buf, p.first_line, expected - seen)
                    break
                seen += p.values.size
        else:
            lineno = len(HEADER_KEYS) + int(np.count_nonzero(np.frombuffer(body, np.uint8) == 10))
            if body.nbytes and body[-1] != 10:
                lineno += 1
        raise CellCountError(lineno, f"expected {expected} cells (ncols*nrows), found {total}")

    values = np.empty(header.shape, dtype=np.float64)
    flat = values.reshape(-1)
    pos = 0
    for p in parsed:
        n = p.values.size
        flat[pos : pos + n] = p.values
        if p.nodata is not None:
            flat[pos : pos + n][p.nodata] = np.nan
        pos += n
    return CountGrid(header, values)


# -- writing ----------------------------------------------------------------


def _header_text(header: GridHeader) -> str:
    fields = (
        header.ncols,
        header.nrows,
        header.xll,
        header.yll,
        header.cellsize,
        header.nodata_value,
    )
    return "".join(f"{k} {format_number(v)}\n" for k, v in zip(HEADER_KEYS, fields))


def _render(codes: np.ndarray, tokens: list[bytes]) -> bytes:
    """Lay out a 2-D block of token codes as space-separated text lines."""
    if codes.size == 0:
        return b""
    rows, ncols = codes.shape
    tally = np.bincount(codes.ravel(), minlength=len(tokens))
    present = np.flatnonzero(tally)
    lengths = np.zeros(len(tokens), dtype=np.int64)
    lengths[present] = [len(tokens[k]) for k in present]
    width = int(lengths.max())
    short = int(lengths[present].min())
    table = np.zeros((width, len(tokens)), dtype=np.uint8)
    for k in present:
        table[: lengths[k], k] = np.frombuffer(tokens[k], dtype=np.uint8)
    longer = present[lengths[present] > short]
    if tally[longer].sum() * 10 > codes.size:
        return _render_scatter(codes, lengths, table, present)

    # every token cut to the shortest width, laid out on a fixed stride
    out = np.empty((rows, ncols, short + 1), dtype=np.uint8)
    for j in range(short):
        out[:, :, j] = table[j][codes]
    out[:, :, short] = 32
    out[:, -1, short] = 10
    if not longer.size:
        return out.tobytes()

    # few longer tokens: splice their remaining bytes in front of the separators
    flat = codes.ravel()
    at, tail = [], []
    for k in longer:
        cells = np.flatnonzero(flat == k)
        extra = table[short : lengths[k], k]
        at.append(np.repeat(cells * (short + 1) + short, extra.size))
        tail.append(np.tile(extra, cells.size))
    return np.insert(out.reshape(-1), np.concatenate(at), np.concatenate(tail)).tobytes()


def _render_scatter(codes, lengths, table, present) -> bytes:
    """Variable widths: scatter each distinct token at its running offsets."""
    ncols = codes.shape[1]
    flat = codes.ravel()
    span = lengths[flat] + 1
    ends = np.cumsum(span)
    out = np.empty(int(ends[-1]), dtype=np.uint8)
    starts = ends - span
    for k in present:
        at = starts[flat == k]
        n = int(lengths[k])
        if n == 1:
            out[at] = table[0, k]
        else:
            out[at[:, None] + np.arange(n)] = table[:n, k]
    out[ends - 1] = 32
    out[ends[ncols - 1 :: ncols] - 1] = 10
    return out.tobytes()


def _value_codes(values: np.ndarray, nodata_token: bytes):
    """Map a block of reals to (codes, tokens) for :func:`_render`."""
    missing = np.isnan(values)
    finite = values[~missing]
    if finite.size:
        lo, hi = float(finite.min()), float(finite.max())
    else:
        lo = hi = 0.0
    if (
        finite.size
        and lo.is_integer()
        and hi - lo < 4096
        and abs(hi) <= 2**53
        and np.array_equal(finite, np.floor(finite))
    ):
        span = int(hi - lo) + 1
        codes = np.zeros(values.shape, dtype=np.intp)
        codes[~missing] = (finite - lo).astype(np.intp)
        tokens = [format_number(lo + i).encode() for i in range(span)]
    else:
        uniq, inverse = np.unique(finite, return_inverse=True)
        codes = np.zeros(values.shape, dtype=np.intp)
        codes[~missing] = inverse.ravel()
        tokens = [format_number(v).encode() for v in uniq]
    codes[missing] = len(tokens)
    tokens.append(nodata_token)
    return codes, tokens


def _open_sink(dest):
    if isinstance(dest, (str, os.PathLike)):
        f = open(dest, "wb")
        return f, f.write, True
    if isinstance(dest, io.TextIOBase):
        return dest, lambda chunk: dest.write(chunk.decode("ascii")), False
    return dest, dest.write, False


def _write(header: GridHeader, render_band, dest, workers: int):
    bands = band_slices(header.nrows, header.ncols)
    if dest is None:
        parts = [_header_text(header).encode()]
        parts.extend(run_bands(render_band, bands, workers))
        return b"".join(parts).decode("ascii")
    f, write, owned = _open_sink(dest)
    try:
        write(_header_text(header).encode())
        # bounded look-ahead keeps memory flat while bands render in parallel
        step = max(1, 4 * min(workers if workers > 0 else (os.cpu_count() or 1), 32))
        for i in range(0, len(bands), step):
            for chunk in run_bands(render_band, bands[i : i + step], workers):
                write(chunk)
    finally:
        if owned:
            f.close()
    return None


def write_ascii_grid(grid, dest=None, workers: int = 1):
    """Write ``grid`` as an ESRI ASCII grid.

    ``grid`` is a :class:`CountGrid` or any coded grid; NoData cells are
    written as the header's ``nodata_value``. ``dest`` is a path or stream;
    when omitted the text is returned as a string. Lines end with ``\\n``.
    """
    header = grid.header
    nodata_token = format_number(header.nodata_value).encode()
    if isinstance(grid, CodedGrid):
        tokens = [str(k).encode() for k in range(256)]
        tokens[NODATA] = nodata_token
        cells = grid.cells

        def render_band(rows):
            return _render(cells[rows], tokens)

    else:
        values = grid.values

        def render_band(rows):
            codes, tokens = _value_codes(values[rows], nodata_token)
            return _render(codes, tokens)

    return _write(header, render_band, dest, workers)


def write_coded_values(header: GridHeader, codes: np.ndarray, lookup, dest, workers: int = 1):
    """Write the real grid ``lookup[codes]`` without materializing it.

    ``lookup`` maps each code to a real (NaN for NoData). The bytes match
    ``write_ascii_grid`` of the materialized grid exactly.
    """
    nodata_token = format_number(header.nodata_value).encode()
    tokens = [
        nodata_token if math.isnan(v) else format_number(v).encode() for v in lookup
    ]

    def render_band(rows):
        return _render(codes[rows], tokens)

    return _write(header, render_band, dest, workers)
