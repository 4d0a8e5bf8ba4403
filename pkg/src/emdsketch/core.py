"""Dyadic grid geometry and the shared container types.

A Delta x Delta image (Delta a power of two) carries a 4-ary hierarchy of
square cells: level 0 cells are single pixels, level i cells have side 2**i,
and the single level-l cell (l = log2 Delta) is the root.  Coefficient
vectors over all cells use a fixed level-major enumeration, root first, so
that every parent precedes its children.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

# Dyadic side lengths only; the cap keeps brute-force oracles affordable.
MAX_DELTA = 4096


class CellId(NamedTuple):
    """Cell of the grid hierarchy. level 0 = pixels, level log2(delta) = root."""

    level: int
    row: int
    col: int


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def num_levels(delta: int) -> int:
    """l = log2(delta); levels run 0..l inclusive."""
    _check_delta(delta)
    return delta.bit_length() - 1


def _check_delta(delta: int) -> None:
    if not isinstance(delta, (int, np.integer)) or not is_power_of_two(int(delta)):
        raise ValueError(f"delta must be a power of two, got {delta!r}")
    if delta > MAX_DELTA:
        raise ValueError(f"delta {delta} exceeds supported maximum {MAX_DELTA}")


def grid_side(delta: int, level: int) -> int:
    """Number of cells per axis at a level."""
    return delta >> level


def cells_at_level(delta: int, level: int) -> int:
    side = grid_side(delta, level)
    return side * side


def t_length(delta: int) -> int:
    """Total cell count over all levels: (4n-1)/3 == floor(4n/3) for n = delta**2."""
    n = delta * delta
    return (4 * n - 1) // 3


def level_offset(delta: int, level: int) -> int:
    """Index of the first cell of `level` in the level-major enumeration."""
    l = num_levels(delta)
    # Cells at coarser levels l, l-1, ..., level+1 come first.
    return (4 ** (l - level) - 1) // 3


def level_slice(delta: int, level: int) -> slice:
    off = level_offset(delta, level)
    return slice(off, off + cells_at_level(delta, level))


def validate_cell(cell: CellId, delta: int) -> None:
    l = num_levels(delta)
    if not 0 <= cell.level <= l:
        raise ValueError(f"cell level {cell.level} out of range [0, {l}]")
    side = grid_side(delta, cell.level)
    if not (0 <= cell.row < side and 0 <= cell.col < side):
        raise ValueError(f"cell {cell} out of range for delta={delta}")


def cell_index(cell: CellId, delta: int) -> int:
    """Level-major, root-first, row-major position of a cell in [0, t)."""
    validate_cell(cell, delta)
    side = grid_side(delta, cell.level)
    return level_offset(delta, cell.level) + cell.row * side + cell.col


def cell_from_index(index: int, delta: int) -> CellId:
    """Inverse of cell_index."""
    if not 0 <= index < t_length(delta):
        raise ValueError(f"cell index {index} out of range for delta={delta}")
    l = num_levels(delta)
    for level in range(l, -1, -1):
        off = level_offset(delta, level)
        count = cells_at_level(delta, level)
        if index < off + count:
            rel = index - off
            side = grid_side(delta, level)
            return CellId(level, rel // side, rel % side)
    raise AssertionError("unreachable")


def children(cell: CellId) -> list[CellId]:
    """The 4 sub-cells one level down, in NW, NE, SW, SE order; [] at level 0."""
    if cell.level == 0:
        return []
    i, r, c = cell.level - 1, cell.row * 2, cell.col * 2
    return [
        CellId(i, r, c),
        CellId(i, r, c + 1),
        CellId(i, r + 1, c),
        CellId(i, r + 1, c + 1),
    ]


def parent(cell: CellId, delta: int) -> Optional[CellId]:
    """Containing cell one level up; None for the root."""
    if cell.level >= num_levels(delta):
        return None
    return CellId(cell.level + 1, cell.row // 2, cell.col // 2)


def root_cell(delta: int) -> CellId:
    return CellId(num_levels(delta), 0, 0)


def cell_pixel_box(cell: CellId) -> tuple[int, int, int, int]:
    """Covered pixel block as (row_lo, row_hi, col_lo, col_hi), half-open."""
    s = 1 << cell.level
    return (cell.row * s, (cell.row + 1) * s, cell.col * s, (cell.col + 1) * s)


def center_pixel(cell: CellId) -> tuple[int, int]:
    """Deterministic representative pixel: offset floor((2**i - 1)/2) into the cell."""
    s = 1 << cell.level
    off = (s - 1) // 2
    return (cell.row * s + off, cell.col * s + off)


def cell_of_pixel(row: int, col: int, level: int) -> CellId:
    """The level-`level` cell containing pixel (row, col)."""
    return CellId(level, row >> level, col >> level)


@dataclass
class GridImage:
    """Delta x Delta real-valued signal, stored flat row-major (mass per pixel)."""

    delta: int
    values: np.ndarray

    def __post_init__(self):
        _check_delta(self.delta)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != self.delta * self.delta:
            raise ValueError(
                f"expected {self.delta * self.delta} values, got {self.values.size}"
            )

    @classmethod
    def zeros(cls, delta: int) -> "GridImage":
        return cls(delta, np.zeros(delta * delta))

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "GridImage":
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
            raise ValueError(f"expected a square 2-D array, got shape {grid.shape}")
        return cls(grid.shape[0], grid.reshape(-1))

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.delta, self.delta)

    def l1(self) -> float:
        return float(np.abs(self.values).sum())

    def total_mass(self) -> float:
        return float(self.values.sum())

    def is_nonneg(self, tol: float = 0.0) -> bool:
        return bool((self.values >= -tol).all())

    def copy(self) -> "GridImage":
        return GridImage(self.delta, self.values.copy())


@dataclass
class PyramidCoeffs:
    """Length-t coefficient vector over all cells, level-major root-first order."""

    delta: int
    values: np.ndarray

    def __post_init__(self):
        _check_delta(self.delta)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != t_length(self.delta):
            raise ValueError(
                f"expected {t_length(self.delta)} coefficients, got {self.values.size}"
            )

    @classmethod
    def zeros(cls, delta: int) -> "PyramidCoeffs":
        return cls(delta, np.zeros(t_length(delta)))

    def level_values(self, level: int) -> np.ndarray:
        """Coefficients of one level as a (side, side) array view."""
        side = grid_side(self.delta, level)
        return self.values[level_slice(self.delta, level)].reshape(side, side)

    def l1(self) -> float:
        return float(np.abs(self.values).sum())

    def copy(self) -> "PyramidCoeffs":
        return PyramidCoeffs(self.delta, self.values.copy())


@dataclass(frozen=True)
class TreeSupport:
    """Rooted, parent-closed set of cells, optionally width-bounded per level."""

    delta: int
    cells: frozenset
    width_bound: Optional[int] = None

    def __post_init__(self):
        _check_delta(self.delta)
        object.__setattr__(self, "cells", frozenset(self.cells))

    def validate(self) -> None:
        if not self.cells:
            return
        for cell in self.cells:
            validate_cell(cell, self.delta)
        if root_cell(self.delta) not in self.cells:
            raise ValueError("nonempty TreeSupport must contain the root cell")
        for cell in self.cells:
            p = parent(cell, self.delta)
            if p is not None and p not in self.cells:
                raise ValueError(f"cell {cell} lacks its parent {p}: not parent-closed")
        if self.width_bound is not None:
            for level, count in self.level_counts().items():
                if count > self.width_bound:
                    raise ValueError(
                        f"level {level} holds {count} cells, width bound {self.width_bound}"
                    )

    def level_counts(self) -> dict:
        counts: dict = {}
        for cell in self.cells:
            counts[cell.level] = counts.get(cell.level, 0) + 1
        return counts

    def width(self) -> int:
        counts = self.level_counts()
        return max(counts.values()) if counts else 0

    def indices(self) -> np.ndarray:
        """Sorted coefficient indices of the member cells."""
        return np.array(sorted(cell_index(c, self.delta) for c in self.cells), dtype=np.intp)

    def __len__(self) -> int:
        return len(self.cells)


def parent_closure(cells, delta: int) -> frozenset:
    """Smallest parent-closed superset (adds the root for nonempty input)."""
    closed = set()
    stack = list(cells)
    while stack:
        cell = stack.pop()
        while cell is not None and cell not in closed:
            closed.add(cell)
            cell = parent(cell, delta)
    return frozenset(closed)


# ---------------------------------------------------------------------------
# EMDIMG v1 file format: "EMDIMG <delta>" header, then delta**2 decimal
# values row-major.  Integer-valued images round-trip bit exactly.


def _format_value(v: float) -> str:
    if v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def write_image(img: GridImage, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"EMDIMG {img.delta}\n")
        grid = img.grid()
        for row in grid:
            fh.write(" ".join(_format_value(v) for v in row) + "\n")


def read_image(path) -> GridImage:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "EMDIMG":
            raise ValueError(f"{path}: not an EMDIMG v1 file")
        delta = int(header[1])
        body = fh.read().split()
    values = np.array([float(tok) for tok in body], dtype=np.float64)
    if values.size != delta * delta:
        raise ValueError(f"{path}: expected {delta * delta} values, got {values.size}")
    return GridImage(delta, values)
