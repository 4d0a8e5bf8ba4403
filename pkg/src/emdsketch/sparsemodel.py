"""Signal models over the cell hierarchy and the exact tree projection.

Supports the plain K-sparse model, rooted-tree sparsity, width-bounded
trees, and the value-constrained tree model (nonnegative, every node at
least twice its children's mass) that pyramid coefficients of nonnegative
images inhabit.  Tree projection is an exact dynamic program: knapsack
over the 4 children of every node, budgets capped by subtree size.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import ceil, log2
from typing import Optional

import numpy as np

from .core import (
    CellId,
    PyramidCoeffs,
    TreeSupport,
    cell_from_index,
    cell_index,
    cell_of_pixel,
    cells_at_level,
    grid_side,
    level_offset,
    level_slice,
    num_levels,
    parent_closure,
    t_length,
)

MAX_TREE_BUDGET = 4096


@dataclass(frozen=True)
class ModelSpec:
    """Which family of supports (and value constraints) a vector must obey."""

    kind: str  # general_sparse | tree | tree_width | value_tree
    K: int
    s: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("general_sparse", "tree", "tree_width", "value_tree"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in ("tree_width", "value_tree") and self.s is None:
            raise ValueError(f"model kind {self.kind!r} requires a width s")


def support_cells(y: PyramidCoeffs, tol: float = 0.0):
    idx = np.flatnonzero(np.abs(y.values) > tol)
    return [cell_from_index(int(i), y.delta) for i in idx]


def model_contains(spec: ModelSpec, y: PyramidCoeffs, tol: float = 1e-12) -> bool:
    """True when some admissible support covers supp(y) and, for the
    value-constrained model, every node dominates twice its children's mass."""
    cells = support_cells(y)
    if spec.kind == "general_sparse":
        return len(cells) <= spec.K

    closure = parent_closure(cells, y.delta)
    if len(closure) > spec.K:
        return False
    if spec.kind == "tree":
        return True

    counts: dict = {}
    for c in closure:
        counts[c.level] = counts.get(c.level, 0) + 1
    if counts and max(counts.values()) > spec.s:
        return False
    if spec.kind == "tree_width":
        return True

    # value_tree: nonnegative, and y_q >= 2 * |y over children of q|_1.
    scale = float(np.abs(y.values).max(initial=0.0))
    slack = tol * max(1.0, scale)
    if (y.values < -slack).any():
        return False
    for cell in closure:
        if cell.level == 0:
            continue
        v = float(y.values[cell_index(cell, y.delta)])
        child_mass = sum(
            abs(float(y.values[cell_index(ch, y.delta)]))
            for ch in _cell_children(cell)
        )
        if v < 2.0 * child_mass - slack:
            return False
    return True


def _cell_children(cell: CellId):
    i, r, c = cell.level - 1, cell.row * 2, cell.col * 2
    return (CellId(i, r, c), CellId(i, r, c + 1), CellId(i, r + 1, c), CellId(i, r + 1, c + 1))


# ---------------------------------------------------------------------------
# Generic 4-ary tree structure over coefficient indices.


@lru_cache(maxsize=32)
def cell_tree_children(delta: int) -> np.ndarray:
    """(t, 4) child coefficient indices in NW, NE, SW, SE order; -1 at leaves."""
    t = t_length(delta)
    out = np.full((t, 4), -1, dtype=np.intp)
    for level in range(num_levels(delta), 0, -1):
        side = grid_side(delta, level)
        off = level_offset(delta, level)
        child_off = level_offset(delta, level - 1)
        child_side = side * 2
        for r in range(side):
            base = off + r * side + np.arange(side)
            cr = 2 * r
            cc = 2 * np.arange(side)
            out[base, 0] = child_off + cr * child_side + cc
            out[base, 1] = child_off + cr * child_side + cc + 1
            out[base, 2] = child_off + (cr + 1) * child_side + cc
            out[base, 3] = child_off + (cr + 1) * child_side + cc + 1
    return out


def _maxplus_conv(h: np.ndarray, c: np.ndarray, cap: int):
    """out[j] = max_b h[j-b] + c[b], j <= cap; pick[j] = smallest maximizing b."""
    m, p = len(h), len(c)
    length = min(cap, m + p - 2) + 1
    out = np.full(length, -np.inf)
    pick = np.zeros(length, dtype=np.int32)
    for b in range(min(p, length)):
        seg = h[: min(length - b, m)] + c[b]
        window = out[b : b + len(seg)]
        better = seg > window
        window[better] = seg[better]
        pick[b : b + len(seg)][better] = b
    return out, pick


def tree_dp(weights: np.ndarray, children: np.ndarray, budget: int):
    """Best rooted connected subset of at most `budget` nodes maximizing the
    retained (nonnegative) node weights.  Node 0 must be the root and parents
    must precede children in index order.

    Returns (value, mask) with mask the chosen support.
    """
    if budget < 1:
        raise ValueError("tree budget must be >= 1")
    if budget > MAX_TREE_BUDGET:
        raise ValueError(f"tree budget {budget} exceeds cap {MAX_TREE_BUDGET}")
    n = len(weights)
    if (weights < 0).any():
        raise ValueError("tree_dp expects nonnegative node weights")

    sizes = np.ones(n, dtype=np.intp)
    for idx in range(n - 1, -1, -1):
        for ch in children[idx]:
            if ch >= 0:
                sizes[idx] += sizes[ch]

    # tables[v]: contribution array c_v (c_v[0] = 0, c_v[b] = best with v
    # included and <= b nodes in v's subtree); picks[v]: per-child argmax.
    tables: list = [None] * n
    picks: list = [None] * n
    for v in range(n - 1, -1, -1):
        cap = min(budget, int(sizes[v]))
        kids = [int(ch) for ch in children[v] if ch >= 0]
        if not kids:
            arr = np.zeros(cap + 1)
            arr[1:] = weights[v]
            tables[v] = arr
            picks[v] = None
            continue
        inner_cap = cap - 1
        h = np.zeros(1)
        vpicks = []
        for ch in kids:
            h, pick = _maxplus_conv(h, tables[ch], inner_cap)
            vpicks.append(pick)
        # len(h) == cap always: children supply at least inner_cap nodes.
        arr = np.zeros(cap + 1)
        arr[1:] = weights[v] + h
        tables[v] = arr
        picks[v] = (kids, vpicks)

    root_arr = tables[0]
    best_val = float(root_arr[-1])
    # Smallest budget achieving the optimum keeps the support minimal.
    j = int(np.argmax(root_arr >= best_val))

    mask = np.zeros(n, dtype=bool)

    def reconstruct(v: int, b: int) -> None:
        if b < 1:
            return
        mask[v] = True
        if picks[v] is None:
            return
        kids, vpicks = picks[v]
        inner = min(b - 1, len(vpicks[-1]) - 1)
        allocs = []
        for pick in reversed(vpicks):
            bb = int(pick[inner]) if inner < len(pick) else 0
            allocs.append(bb)
            inner -= bb
        for ch, bb in zip(kids, reversed(allocs)):
            reconstruct(ch, bb)

    reconstruct(0, j)
    return best_val, mask


def tree_project(y: PyramidCoeffs, K: int, score: str = "l2") -> PyramidCoeffs:
    """Exact projection onto rooted trees of at most K cells.

    score "l2" minimizes |y - y*|_2 (maximizes retained energy); "l1"
    maximizes retained absolute mass, used as an evaluation benchmark.
    """
    weights = y.values**2 if score == "l2" else np.abs(y.values)
    _, mask = tree_dp(weights, cell_tree_children(y.delta), K)
    out = np.where(mask, y.values, 0.0)
    return PyramidCoeffs(y.delta, out)


def tree_project_values(
    values: np.ndarray, delta: int, K: int, score: str = "l2"
) -> np.ndarray:
    """Support mask of the exact tree projection, on a raw coefficient array."""
    weights = values**2 if score == "l2" else np.abs(values)
    _, mask = tree_dp(weights, cell_tree_children(delta), K)
    return mask


def embed_sparse_in_tree(pixels, delta: int) -> TreeSupport:
    """Smallest-recipe tree containing given pixels: their root paths plus
    every cell in the top ceil(log4 k) + 1 tiers."""
    pixels = list(pixels)
    k = max(len(pixels), 1)
    n = delta * delta
    if len(pixels) > n // 2:
        raise ValueError("pixel set larger than n/2")
    l = num_levels(delta)
    top = min(ceil(log2(k) / 2), l)  # log4(k) tiers below the root
    cells = set()
    for level in range(l - top, l + 1):
        side = grid_side(delta, level)
        for r in range(side):
            for c in range(side):
                cells.add(CellId(level, r, c))
    for (r, c) in pixels:
        for level in range(l + 1):
            cells.add(cell_of_pixel(r, c, level))
    return TreeSupport(delta, frozenset(cells))


def embed_tree_size_bound(delta: int, k: int) -> int:
    """Worst-case size of embed_sparse_in_tree for k pixels."""
    l = num_levels(delta)
    top = min(ceil(log2(max(k, 1)) / 2), l)
    top_cells = sum(cells_at_level(delta, i) for i in range(l - top, l + 1))
    return top_cells + k * (l - top)
