"""Pyramid embedding of images into cell-sum space, and its approximate inverse.

The forward map stacks, for every level-i cell, the cell's pixel sum scaled
by 2**i.  Inversion works on estimated per-cell masses p_q = b_q / 2**i and
their surpluses s_q = p_q - sum of children's p; repairing negative
surpluses top-down costs at most 3x the optimal l1 error, and placing the
repaired surpluses at cell centers is an exact l1 minimizer, for a
composed guarantee of 8x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CellId,
    GridImage,
    PyramidCoeffs,
    TreeSupport,
    cell_from_index,
    cell_index,
    cells_at_level,
    center_pixel,
    grid_side,
    level_slice,
    num_levels,
    t_length,
)
from .kmedian import KMedianResult, kmedian


def _block_sum(grid: np.ndarray) -> np.ndarray:
    """Sum 2x2 blocks: (2m, 2m) -> (m, m)."""
    m = grid.shape[0] // 2
    return grid.reshape(m, 2, m, 2).sum(axis=(1, 3))


def pyramid_transform(x: GridImage) -> PyramidCoeffs:
    """Coefficient of a level-i cell q is 2**i times the pixel sum over q."""
    l = num_levels(x.delta)
    sums = x.grid().astype(np.float64)
    parts = [sums.ravel().copy()]  # level 0, weight 2**0
    for i in range(1, l + 1):
        sums = _block_sum(sums)
        parts.append((2.0**i) * sums.ravel())
    return PyramidCoeffs(x.delta, np.concatenate(parts[::-1]))


def cell_masses(b: PyramidCoeffs) -> list:
    """Per-level estimated masses p_q = b_q / 2**i, as (side, side) arrays.

    Indexed by level: entry i holds level i.
    """
    out = []
    for i in range(num_levels(b.delta) + 1):
        out.append(b.level_values(i) / (2.0**i))
    return out


def surpluses(b: PyramidCoeffs) -> np.ndarray:
    """s_q = p_q - sum of children's p (p_q itself at leaves), coefficient order."""
    masses = cell_masses(b)
    l = num_levels(b.delta)
    out = np.empty(t_length(b.delta))
    for i in range(l + 1):
        s = masses[i].copy()
        if i >= 1:
            s -= _block_sum(masses[i - 1])
        out[level_slice(b.delta, i)] = s.ravel()
    return out


def invert_nonneg_surpluses(b: PyramidCoeffs) -> GridImage:
    """Place every surplus at its cell's center pixel.

    Exact l1 minimizer of |b - P y| over images y when all surpluses are
    nonnegative.  Raises ValueError on a genuinely negative surplus; float
    dust below tolerance is clamped to zero.
    """
    if (b.values < 0).any():
        raise ValueError("invert_nonneg_surpluses requires b >= 0")
    s = surpluses(b)
    tol = 1e-9 * (1.0 + float(np.abs(b.values).max(initial=0.0)))
    if s.min(initial=0.0) < -tol:
        raise ValueError(f"negative surplus {s.min():g} (tolerance {tol:g})")
    np.clip(s, 0.0, None, out=s)

    delta = b.delta
    y = np.zeros((delta, delta))
    for i in range(num_levels(delta) + 1):
        side = grid_side(delta, i)
        level_s = s[level_slice(delta, i)].reshape(side, side)
        step = 1 << i
        off = (step - 1) // 2
        idx = np.arange(side) * step + off
        y[np.ix_(idx, idx)] += level_s
    return GridImage.from_grid(y)


def make_nonneg_surpluses(b: PyramidCoeffs) -> PyramidCoeffs:
    """Top-down repair: wherever a cell's children claim more mass than the
    cell, decrease the children (NW, NE, SW, SE order, zeroing each before
    touching the next) until surpluses are nonnegative.

    The modification satisfies |b - b'| <= 3 * min_y |P y - b|.
    """
    if (b.values < 0).any():
        raise ValueError("make_nonneg_surpluses requires b >= 0")
    delta = b.delta
    l = num_levels(delta)
    masses = cell_masses(b)
    for i in range(l, 0, -1):
        kids = masses[i - 1]
        m = kids.shape[0] // 2
        blocks = kids.reshape(m, 2, m, 2)
        child_sum = blocks.sum(axis=(1, 3))
        need = np.maximum(child_sum - masses[i], 0.0)
        # Sequential decrease in NW, NE, SW, SE order.
        for (br, bc) in ((0, 0), (0, 1), (1, 0), (1, 1)):
            take = np.minimum(blocks[:, br, :, bc], need)
            blocks[:, br, :, bc] -= take
            need -= take
    out = np.empty(t_length(delta))
    for i in range(l + 1):
        out[level_slice(delta, i)] = (masses[i] * (2.0**i)).ravel()
    return PyramidCoeffs(delta, out)


@dataclass
class InversionStats:
    node_visits: int
    support_size: int


def pyramid_invert(b: PyramidCoeffs, with_stats: bool = False):
    """Repair surpluses, then place them at cell centers.

    Guarantees |P y - P x| <= 8 |b - P x| for every nonnegative x.  Works
    sparsely: only cells carrying mass (and their parents) are visited, so
    the traversal is linear in the support of b.
    """
    if (b.values < 0).any():
        raise ValueError("pyramid_invert requires b >= 0")
    delta = b.delta
    l = num_levels(delta)
    visits = 0

    # Per-level sparse mass maps {(row, col): p_q}.
    level_mass: list[dict] = [dict() for _ in range(l + 1)]
    for idx in np.flatnonzero(b.values):
        cell = cell_from_index(int(idx), delta)
        level_mass[cell.level][(cell.row, cell.col)] = float(b.values[idx]) / (
            2.0**cell.level
        )
    support_size = int(np.count_nonzero(b.values))

    child_offsets = ((0, 0), (0, 1), (1, 0), (1, 1))  # NW, NE, SW, SE
    for i in range(l, 0, -1):
        kids = level_mass[i - 1]
        process = set(level_mass[i])
        process.update((r // 2, c // 2) for (r, c) in kids)
        for rc in sorted(process):
            visits += 1
            p_q = level_mass[i].get(rc, 0.0)
            need = -p_q
            for dr, dc in child_offsets:
                need += kids.get((rc[0] * 2 + dr, rc[1] * 2 + dc), 0.0)
            if need <= 0:
                continue
            for dr, dc in child_offsets:
                key = (rc[0] * 2 + dr, rc[1] * 2 + dc)
                mass = kids.get(key, 0.0)
                if mass <= 0.0:
                    continue
                take = min(mass, need)
                rem = mass - take
                need -= take
                if rem > 0.0:
                    kids[key] = rem
                else:
                    del kids[key]
                if need <= 0:
                    break

    y = np.zeros((delta, delta))
    for i in range(l, 0, -1):
        kids = level_mass[i - 1]
        for rc, p_q in sorted(level_mass[i].items()):
            visits += 1
            child_sum = 0.0
            for dr, dc in child_offsets:
                child_sum += kids.get((rc[0] * 2 + dr, rc[1] * 2 + dc), 0.0)
            s = p_q - child_sum
            if s > 0.0:
                pr, pc = center_pixel(CellId(i, rc[0], rc[1]))
                y[pr, pc] += s
    for rc, p_q in sorted(level_mass[0].items()):
        visits += 1
        if p_q > 0.0:
            y[rc[0], rc[1]] += p_q

    img = GridImage.from_grid(y)
    if with_stats:
        return img, InversionStats(visits, support_size)
    return img


# ---------------------------------------------------------------------------
# Model alignment: a small tree support S capturing all but an epsilon
# fraction (in the EMD sense) of the pyramid mass of a nonnegative image.


@dataclass
class AlignmentCertificate:
    support: TreeSupport
    clustering: KMedianResult
    cluster_cost: float  # EMD distance from x to the k-median image x'
    residual: float  # l1 mass of P x outside the support
    width: int
    width_bound: int
    size_bound: int

    def holds(self, eps: float, slack: float = 1e-9) -> bool:
        return self.residual <= eps * self.cluster_cost + slack


def alignment_ball_count(eps: float) -> int:
    """Cells per level per center included by the (2/eps)-radius rule."""
    f = int(2.0 / eps)
    count = 0
    for a in range(-(f + 1), f + 2):
        for bb in range(-(f + 1), f + 2):
            if max(abs(a) - 1, 0) + max(abs(bb) - 1, 0) <= f:
                count += 1
    return count


def alignment_width_bound(k: int, eps: float) -> int:
    return k * alignment_ball_count(eps)


def alignment_size_bound(delta: int, k: int, eps: float) -> int:
    wb = alignment_width_bound(k, eps)
    return sum(min(cells_at_level(delta, i), wb) for i in range(num_levels(delta) + 1))


def alignment_certificate(
    x: GridImage, k: int, eps: float, seed: int = 0
) -> AlignmentCertificate:
    """Build the tree support S of all cells near a k-median solution.

    At level i every cell within pixel distance (2/eps) * 2**i of a center's
    cell joins S; the closure under parents is automatic because distances
    shrink relative to the doubling radius.  The certificate guarantees
    |(Px) outside S|_1 <= eps * EMD(x, x') for the k-median image x'
    actually used.
    """
    n = x.delta * x.delta
    if not 1 <= k <= n // 2:
        raise ValueError(f"k must lie in [1, n/2] = [1, {n // 2}], got {k}")
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if not x.is_nonneg():
        raise ValueError("alignment certificate requires a nonnegative image")

    clustering = kmedian(x.delta, x.values, k, seed=seed)
    l = num_levels(x.delta)
    cells = set()
    for i in range(l + 1):
        side = grid_side(x.delta, i)
        step = 1 << i
        radius = (2.0 / eps) * step
        # f(d) = 0 for d == 0 else (d - 1) * step + 1 is the min pixel
        # distance between cells d apart along one axis.
        dmax = int((radius - 1.0) // step) + 1
        level_cells = set()
        for (pr, pc) in clustering.centers:
            cr, cc = pr >> i, pc >> i
            for dr in range(-dmax, dmax + 1):
                rr = cr + dr
                if not 0 <= rr < side:
                    continue
                fr = 0 if dr == 0 else (abs(dr) - 1) * step + 1
                for dc in range(-dmax, dmax + 1):
                    cc2 = cc + dc
                    if not 0 <= cc2 < side:
                        continue
                    fc = 0 if dc == 0 else (abs(dc) - 1) * step + 1
                    if fr + fc <= radius:
                        level_cells.add(CellId(i, rr, cc2))
        cells.update(level_cells)

    support = TreeSupport(x.delta, frozenset(cells), width_bound=None)
    coeffs = pyramid_transform(x)
    inside = sum(float(coeffs.values[cell_index(c, x.delta)]) for c in cells)
    residual = float(np.abs(coeffs.values).sum()) - inside

    width = max(
        sum(1 for c in cells if c.level == i) for i in range(l + 1)
    ) if cells else 0
    return AlignmentCertificate(
        support=support,
        clustering=clustering,
        cluster_cost=clustering.cost,
        residual=residual,
        width=width,
        width_bound=alignment_width_bound(k, eps),
        size_bound=alignment_size_bound(x.delta, k, eps),
    )


# ---------------------------------------------------------------------------
# EMDPYR v1 file format: "EMDPYR <delta>" header, then t coefficients in the
# level-major root-first enumeration.


def write_coeffs(b: PyramidCoeffs, path) -> None:
    from .core import _format_value

    with open(path, "w") as fh:
        fh.write(f"EMDPYR {b.delta}\n")
        fh.write(" ".join(_format_value(v) for v in b.values) + "\n")


def read_coeffs(path) -> PyramidCoeffs:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "EMDPYR":
            raise ValueError(f"{path}: not an EMDPYR v1 file")
        delta = int(header[1])
        body = fh.read().split()
    values = np.array([float(tok) for tok in body])
    return PyramidCoeffs(delta, values)
