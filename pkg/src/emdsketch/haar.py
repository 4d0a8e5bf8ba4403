"""Reweighted non-standard 2-D Haar embedding with exact, lossless inversion.

Rows are the quadtree Haar difference patterns (horizontal, vertical,
diagonal per cell of side >= 2) rescaled so every column of the inverse
basis has unit EMD norm: level-i horizontal/vertical rows carry entries
+-2**(i-2), diagonal rows the extra factor (2 + 4**(1-i))/3 (the exact
EMD of the quadrant checkerboard, which near-center matchings make
cheaper than a half-cell shift), and the all-constant row carries
2*delta per pixel.  With that scaling |x|_EMD <= |W x|_1, and each
difference row is at most 1/4 of the matching pyramid row in sup norm.

Coefficient enumeration: index 0 is the constant coefficient; cell
number j of the level-major pyramid order (levels l..1) owns coefficients
3j+1, 3j+2, 3j+3 in horizontal, vertical, diagonal order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    GridImage,
    TreeSupport,
    cell_index,
    grid_side,
    num_levels,
)
from .pyramid import AlignmentCertificate, alignment_certificate
from .sparsemodel import cell_tree_children, tree_dp


def constant_row_scale(delta: int) -> float:
    """Entry of the all-constant row; makes its inverse column unit-EMD."""
    return 2.0 * delta


def difference_row_scale(level: int) -> float:
    """Entry magnitude of a level-`level` horizontal or vertical row."""
    return 2.0 ** (level - 2)


def diagonal_row_scale(level: int) -> float:
    """Diagonal rows need (2 + 4**(1-level))/3 on top of the h/v scale to
    push their inverse column's EMD up to exactly 1."""
    return difference_row_scale(level) * (2.0 + 4.0 ** (1 - level)) / 3.0


@dataclass
class HaarCoeffs:
    """Length-n reweighted Haar coefficient vector."""

    delta: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != self.delta * self.delta:
            raise ValueError(
                f"expected {self.delta * self.delta} coefficients, got {self.values.size}"
            )

    def l1(self) -> float:
        return float(np.abs(self.values).sum())

    def copy(self) -> "HaarCoeffs":
        return HaarCoeffs(self.delta, self.values.copy())


def supernode_count(delta: int) -> int:
    return (delta * delta - 1) // 3


def supernode_coeff_indices(j: int) -> tuple[int, int, int]:
    """Coefficients owned by supernode j (the constant coefficient is extra)."""
    return (3 * j + 1, 3 * j + 2, 3 * j + 3)


def haar_transform(x: GridImage) -> HaarCoeffs:
    """W x via one bottom-up pass over cell sums."""
    delta = x.delta
    l = num_levels(delta)
    out = np.empty(delta * delta)
    sums = x.grid().astype(np.float64)
    for i in range(1, l + 1):
        m = sums.shape[0] // 2
        blocks = sums.reshape(m, 2, m, 2)
        a = blocks[:, 0, :, 0]  # NW
        b = blocks[:, 0, :, 1]  # NE
        c = blocks[:, 1, :, 0]  # SW
        d = blocks[:, 1, :, 1]  # SE
        scale = difference_row_scale(i)
        horiz = scale * ((a + c) - (b + d))
        vert = scale * ((a + b) - (c + d))
        diag = diagonal_row_scale(i) * ((a + d) - (b + c))
        base = 4 ** (l - i)  # level block starts right after coarser blocks
        tri = np.stack([horiz.ravel(), vert.ravel(), diag.ravel()], axis=1)
        out[base : base + 3 * m * m] = tri.ravel()
        sums = a + b + c + d
    out[0] = constant_row_scale(delta) * float(sums[0, 0])
    return HaarCoeffs(delta, out)


def haar_inverse(y: HaarCoeffs) -> GridImage:
    """Exact inverse: rebuild cell sums top-down from the difference triples."""
    delta = y.delta
    l = num_levels(delta)
    sums = np.array([[y.values[0] / constant_row_scale(delta)]])
    for i in range(l, 0, -1):
        side = grid_side(delta, i)
        m = side  # cells at level i per axis; children grid is 2m x 2m
        base = 4 ** (l - i)
        tri = y.values[base : base + 3 * m * m].reshape(m * m, 3)
        scale = difference_row_scale(i)
        h = tri[:, 0].reshape(m, m) / scale
        v = tri[:, 1].reshape(m, m) / scale
        g = tri[:, 2].reshape(m, m) / scale
        s = sums
        out = np.empty((2 * m, 2 * m))
        blocks = out.reshape(m, 2, m, 2)
        blocks[:, 0, :, 0] = (s + h + v + g) / 4.0  # NW
        blocks[:, 0, :, 1] = (s - h + v - g) / 4.0  # NE
        blocks[:, 1, :, 0] = (s + h - v - g) / 4.0  # SW
        blocks[:, 1, :, 1] = (s - h - v + g) / 4.0  # SE
        sums = out
    return GridImage.from_grid(sums)


def haar_matrix(delta: int) -> np.ndarray:
    """Dense W, built row by row from the pattern definitions.

    Independent of the fast transform; intended as a small-delta oracle.
    """
    n = delta * delta
    l = num_levels(delta)
    w = np.zeros((n, n))
    w[0, :] = constant_row_scale(delta)
    grid_idx = np.arange(n).reshape(delta, delta)
    for i in range(l, 0, -1):
        side = grid_side(delta, i)
        step = 1 << i
        half = step // 2
        base = 4 ** (l - i)
        scale = difference_row_scale(i)
        for r in range(side):
            for c in range(side):
                rows = slice(r * step, (r + 1) * step)
                cols = slice(c * step, (c + 1) * step)
                cell = grid_idx[rows, cols]
                left, right = cell[:, :half], cell[:, half:]
                top, bottom = cell[:half, :], cell[half:, :]
                tl, tr = cell[:half, :half], cell[:half, half:]
                bl, br = cell[half:, :half], cell[half:, half:]
                j = base + 3 * (r * side + c)
                w[j, left.ravel()] = scale
                w[j, right.ravel()] = -scale
                w[j + 1, top.ravel()] = scale
                w[j + 1, bottom.ravel()] = -scale
                w[j + 2, tl.ravel()] = scale
                w[j + 2, br.ravel()] = scale
                w[j + 2, tr.ravel()] = -scale
                w[j + 2, bl.ravel()] = -scale
    return w


# ---------------------------------------------------------------------------
# Supernode tree: the coefficient tree is the cell tree over levels >= 1,
# with each cell owning its 3 difference coefficients atomically (plus the
# constant coefficient attached to the root supernode).


def supernode_children(delta: int) -> np.ndarray:
    """(M, 4) supernode child indices; children at level 0 drop out."""
    m = supernode_count(delta)
    kids = cell_tree_children(delta)[:m].copy()
    kids[kids >= m] = -1
    return kids


def haar_tree_mask(
    values: np.ndarray, delta: int, budget_supernodes: int, score: str = "l2"
) -> np.ndarray:
    """Exact projection mask onto supernode trees of bounded size.

    A kept supernode keeps its 3 coefficients; the constant coefficient
    follows the root supernode.
    """
    m = supernode_count(delta)
    if m == 0:
        return np.ones(1, dtype=bool)
    per_coeff = values**2 if score == "l2" else np.abs(values)
    weights = per_coeff[1:].reshape(m, 3).sum(axis=1)
    weights[0] += per_coeff[0]
    _, node_mask = tree_dp(weights, supernode_children(delta), budget_supernodes)
    mask = np.zeros(values.size, dtype=bool)
    mask[0] = node_mask[0]
    mask[1:] = np.repeat(node_mask, 3)
    return mask


def lift_tree_support(support: TreeSupport) -> np.ndarray:
    """Map a cell tree to the coefficient indices it owns (constant included)."""
    delta = support.delta
    idx = [0]
    for cell in support.cells:
        if cell.level == 0:
            continue
        j = cell_index(cell, delta)
        idx.extend(supernode_coeff_indices(j))
    return np.array(sorted(set(idx)), dtype=np.intp)


@dataclass
class HaarAlignmentCertificate:
    pyramid: AlignmentCertificate
    coeff_indices: np.ndarray
    residual: float  # |(W x) outside the lifted support|_1

    def holds(self, eps: float, slack: float = 1e-9) -> bool:
        return self.residual <= eps * self.pyramid.cluster_cost + slack


def haar_alignment_certificate(
    x: GridImage, k: int, eps: float, seed: int = 0
) -> HaarAlignmentCertificate:
    """Lift the pyramid alignment tree to Haar coefficients.

    Each difference row is at most 1/4 of its pyramid row on nonnegative
    input, so the lifted residual is at most 3/4 of the pyramid residual.
    """
    cert = alignment_certificate(x, k, eps, seed=seed)
    idx = lift_tree_support(cert.support)
    coeffs = haar_transform(x)
    total = float(np.abs(coeffs.values).sum())
    inside = float(np.abs(coeffs.values[idx]).sum())
    return HaarAlignmentCertificate(cert, idx, total - inside)
