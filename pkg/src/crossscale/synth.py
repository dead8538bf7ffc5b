"""Synthetic scenes with known positional offsets and their expected switch levels.

A scene places test/reference presence on cell indices. Each *pair* is one
object seen at ``test_cell`` by the test map and at ``ref_cell`` by the
reference map; unpaired cells are presence on one side only. When items are
isolated (no two share a block at the deepest level), the level at which a
pair's two cells first fall into one aggregation block is the level at which
the pipeline must turn both disagreement pixels into TP. That level is
computed here directly from cell indices, independently of any raster code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from crossscale.agreement import FN, FP
from crossscale.grid import CountGrid, GridHeader

Cell = tuple[int, int]


class IsolationError(ValueError):
    """Scene items share a deepest-level block, so single-pair expectations do not hold."""

    def __init__(self, conflicts):
        self.conflicts = list(conflicts)
        detail = "; ".join(f"{a} and {b}" for a, b in self.conflicts[:10])
        more = f" (+{len(self.conflicts) - 10} more)" if len(self.conflicts) > 10 else ""
        super().__init__(f"scene items are not isolated: {detail}{more}")


@dataclass(frozen=True)
class SceneSpec:
    lattice: GridHeader
    pairs: list[tuple[Cell, Cell]] = field(default_factory=list)
    unpaired_test: list[Cell] = field(default_factory=list)
    unpaired_ref: list[Cell] = field(default_factory=list)
    seed: int | None = None

    def __post_init__(self):
        norm = lambda cell: (int(cell[0]), int(cell[1]))  # noqa: E731
        object.__setattr__(self, "pairs", [(norm(a), norm(b)) for a, b in self.pairs])
        object.__setattr__(self, "unpaired_test", [norm(c) for c in self.unpaired_test])
        object.__setattr__(self, "unpaired_ref", [norm(c) for c in self.unpaired_ref])
        nrows, ncols = self.lattice.shape
        for role, cell in self._cells():
            r, c = cell
            if not (0 <= r < nrows and 0 <= c < ncols):
                raise ValueError(f"{role} cell {cell} is outside the {nrows}x{ncols} lattice")

    def _cells(self):
        for i, (a, b) in enumerate(self.pairs):
            yield f"pairs[{i}].test", a
            yield f"pairs[{i}].ref", b
        for i, cell in enumerate(self.unpaired_test):
            yield f"unpaired_test[{i}]", cell
        for i, cell in enumerate(self.unpaired_ref):
            yield f"unpaired_ref[{i}]", cell

    def to_dict(self) -> dict:
        h = self.lattice
        return {
            "lattice": {
                "ncols": h.ncols,
                "nrows": h.nrows,
                "xll": h.xll,
                "yll": h.yll,
                "cellsize": h.cellsize,
                "nodata_value": h.nodata_value,
            },
            "pairs": [[list(a), list(b)] for a, b in self.pairs],
            "unpaired_test": [list(c) for c in self.unpaired_test],
            "unpaired_ref": [list(c) for c in self.unpaired_ref],
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict, levels: int | None = None) -> SceneSpec:
        """Build a spec; a ``random`` section is expanded with ``seed`` and ``levels``.

        ``random`` takes ``pairs``, ``unpaired_test`` and ``unpaired_ref``
        counts; the generated items are appended to any explicit ones.
        """
        lattice = GridHeader(**data["lattice"])
        spec = cls(
            lattice,
            pairs=[(tuple(a), tuple(b)) for a, b in data.get("pairs", [])],
            unpaired_test=[tuple(c) for c in data.get("unpaired_test", [])],
            unpaired_ref=[tuple(c) for c in data.get("unpaired_ref", [])],
            seed=data.get("seed"),
        )
        rand = data.get("random")
        if rand:
            if levels is None:
                raise ValueError("a 'random' scene section needs the pyramid depth")
            extra = random_scene(
                lattice,
                levels,
                n_pairs=int(rand.get("pairs", 0)),
                n_unpaired_test=int(rand.get("unpaired_test", 0)),
                n_unpaired_ref=int(rand.get("unpaired_ref", 0)),
                seed=spec.seed,
            )
            spec = cls(
                lattice,
                spec.pairs + extra.pairs,
                spec.unpaired_test + extra.unpaired_test,
                spec.unpaired_ref + extra.unpaired_ref,
                spec.seed,
            )
        return spec

    @classmethod
    def from_json(cls, text: str, levels: int | None = None) -> SceneSpec:
        return cls.from_dict(json.loads(text), levels)


def generate_scene(spec: SceneSpec) -> tuple[CountGrid, CountGrid]:
    """Count grids with one unit per test (resp. reference) placement."""
    shape = spec.lattice.shape
    test = np.zeros(shape)
    ref = np.zeros(shape)
    for a, b in spec.pairs:
        test[a] += 1
        ref[b] += 1
    for cell in spec.unpaired_test:
        test[cell] += 1
    for cell in spec.unpaired_ref:
        ref[cell] += 1
    return CountGrid(spec.lattice, test), CountGrid(spec.lattice, ref)


def block_of(cell: Cell, level: int, nrows: int | None = None) -> Cell:
    """Index of the level-``level`` block holding ``cell``.

    With ``nrows`` rows are counted from the bottom, matching the
    lower-left anchored pyramid; without it, from the top.
    """
    r, c = cell
    if nrows is not None:
        r = nrows - 1 - r
    return r >> level, c >> level


def shared_block_level(a: Cell, b: Cell, levels: int, nrows: int | None = None) -> int | None:
    """Smallest level ``s`` in ``1..levels`` at which ``a`` and ``b`` share a block.

    Returns None when they stay apart through ``levels``. Identical cells
    give 1. Pass ``nrows`` for lattices whose height is not a multiple of
    ``2**levels``; see :func:`block_of`.
    """
    for s in range(1, levels + 1):
        if block_of(a, s, nrows) == block_of(b, s, nrows):
            return s
    return None


def check_isolation(spec: SceneSpec, levels: int) -> None:
    """Raise :class:`IsolationError` if items interact within ``levels`` aggregations.

    Items conflict when they touch a common level-``levels`` block, except
    for unpaired cells of the same side, which cannot change each other's
    class.
    """
    nrows = spec.lattice.nrows
    owners: dict[Cell, list[tuple[str, str]]] = {}
    items = [(f"pairs[{i}]", "pair", (a, b)) for i, (a, b) in enumerate(spec.pairs)]
    items += [(f"unpaired_test[{i}]", "test", (c,)) for i, c in enumerate(spec.unpaired_test)]
    items += [(f"unpaired_ref[{i}]", "ref", (c,)) for i, c in enumerate(spec.unpaired_ref)]
    conflicts = []
    for name, side, cells in items:
        blocks = {block_of(c, levels, nrows) for c in cells}
        seen = set()
        for block in sorted(blocks):
            for other, other_side in owners.get(block, ()):
                if other in seen or (side == other_side and side != "pair"):
                    continue
                seen.add(other)
                conflicts.append((other, name))
            owners.setdefault(block, []).append((name, side))
    if conflicts:
        raise IsolationError(conflicts)


@dataclass(frozen=True)
class ExpectedSurface:
    """Expected family and switch-level codes per native pixel.

    Codes follow :func:`crossscale.agreement.switch_surface`: family FP/FN
    or NONE; switch 0 for unranked pixels, ``1..L``, ``L + 1`` for never.
    """

    header: GridHeader
    levels: int
    family: np.ndarray
    switch: np.ndarray

    def to_grid(self) -> CountGrid:
        return CountGrid(self.header, self.switch.astype(np.float64))


def expected_surface(spec: SceneSpec, levels: int) -> ExpectedSurface:
    check_isolation(spec, levels)
    nrows = spec.lattice.nrows
    family = np.zeros(spec.lattice.shape, dtype=np.uint8)
    switch = np.zeros(spec.lattice.shape, dtype=np.uint8)
    never = levels + 1
    for a, b in spec.pairs:
        if a == b:
            continue
        s = shared_block_level(a, b, levels, nrows)
        family[a], family[b] = FP, FN
        switch[a] = switch[b] = never if s is None else s
    for cell in spec.unpaired_test:
        family[cell], switch[cell] = FP, never
    for cell in spec.unpaired_ref:
        family[cell], switch[cell] = FN, never
    return ExpectedSurface(spec.lattice, levels, family, switch)


def random_scene(
    lattice: GridHeader,
    levels: int,
    n_pairs: int,
    n_unpaired_test: int = 0,
    n_unpaired_ref: int = 0,
    seed: int | None = None,
) -> SceneSpec:
    """Isolated items at random positions.

    The lattice is cut into slots of 2x2 deepest-level blocks separated by
    one empty block; each item gets its own slot, so at most as many items
    as slots are placed. A pair's reference cell is offset from its test
    cell by up to ``2**levels`` cells per axis within the slot, which covers
    every switch level as well as never.
    """
    rng = np.random.default_rng(seed)
    nrows, ncols = lattice.shape
    size = 2**levels
    brows, bcols = -(-nrows // size), -(-ncols // size)
    slots = [(i, j) for i in range(0, brows, 3) for j in range(0, bcols, 3)]
    order = rng.permutation(len(slots))
    kinds = ["pair"] * n_pairs + ["test"] * n_unpaired_test + ["ref"] * n_unpaired_ref
    kinds = [kinds[k] for k in rng.permutation(len(kinds))][: len(slots)]

    def slot_cells(i, j):
        # bottom-based rows [i*size, (i+2)*size), cols [j*size, (j+2)*size), clipped
        rb0, rb1 = i * size, min((i + 2) * size, nrows)
        c0, c1 = j * size, min((j + 2) * size, ncols)
        return rb0, rb1, c0, c1

    pairs, utest, uref = [], [], []
    for kind, k in zip(kinds, order):
        rb0, rb1, c0, c1 = slot_cells(*slots[k])
        rb, c = int(rng.integers(rb0, rb1)), int(rng.integers(c0, c1))
        a = (nrows - 1 - rb, c)
        if kind == "test":
            utest.append(a)
            continue
        if kind == "ref":
            uref.append(a)
            continue
        while True:
            drb, dc = (int(v) for v in rng.integers(-size, size + 1, size=2))
            if rb0 <= rb + drb < rb1 and c0 <= c + dc < c1:
                break
        pairs.append((a, (nrows - 1 - (rb + drb), c + dc)))
    return SceneSpec(lattice, pairs, utest, uref, seed)
