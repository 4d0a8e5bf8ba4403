"""Weighted k-median clustering of pixel masses under the l1 ground metric.

The best k-sparse approximation of a nonnegative image under the EMD norm
is exactly a weighted k-median solution: place each cluster's total mass
at its median center.  Small instances are solved exactly; larger ones by
single-swap local search from a greedy-farthest start.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .core import GridImage

EXACT_COMBO_LIMIT = 100_000


@dataclass
class KMedianResult:
    delta: int
    centers: list  # pixel (row, col) tuples
    cost: float  # sum over pixels of weight * l1-distance to nearest center
    labels: np.ndarray  # per-support-point index into centers
    support: np.ndarray  # (s, 2) pixel coordinates carrying weight
    weights: np.ndarray  # (s,)
    method: str

    def sparse_image(self) -> GridImage:
        """k-sparse image holding each cluster's total weight at its center."""
        out = GridImage.zeros(self.delta)
        grid = out.values
        for idx, (r, c) in enumerate(self.centers):
            grid[r * self.delta + c] += float(self.weights[self.labels == idx].sum())
        return out


def _weighted_lower_median(values: np.ndarray, weights: np.ndarray) -> int:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    half = cum[-1] / 2.0
    pos = int(np.searchsorted(cum, half))
    return int(values[order[min(pos, len(order) - 1)]])


def _assign(dist_cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """dist_cols: (k, s) distances; returns (labels, nearest distances)."""
    labels = np.argmin(dist_cols, axis=0)
    return labels, dist_cols[labels, np.arange(dist_cols.shape[1])]


def kmedian(delta: int, weights: np.ndarray, k: int, seed: int = 0) -> KMedianResult:
    """Cluster the weighted pixels of a delta x delta image into k medians.

    Exact for k = 1 (weighted coordinate medians over all pixels) and
    whenever C(support, k) stays under EXACT_COMBO_LIMIT (brute force over
    support-point centers); otherwise single-swap local search.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.size != delta * delta:
        raise ValueError("weights length must be delta**2")
    if (weights < 0).any():
        raise ValueError("k-median weights must be nonnegative")

    sup_idx = np.flatnonzero(weights > 0)
    s = sup_idx.size
    coords = np.stack([sup_idx // delta, sup_idx % delta], axis=1)
    w = weights[sup_idx]

    if s == 0:
        return KMedianResult(delta, [], 0.0, np.zeros(0, dtype=np.intp), coords, w, "empty")
    if s <= k:
        centers = [tuple(map(int, rc)) for rc in coords]
        return KMedianResult(
            delta, centers, 0.0, np.arange(s, dtype=np.intp), coords, w, "support"
        )

    if k == 1:
        r = _weighted_lower_median(coords[:, 0].astype(np.float64), w)
        c = _weighted_lower_median(coords[:, 1].astype(np.float64), w)
        d = np.abs(coords[:, 0] - r) + np.abs(coords[:, 1] - c)
        return KMedianResult(
            delta,
            [(r, c)],
            float((w * d).sum()),
            np.zeros(s, dtype=np.intp),
            coords,
            w,
            "median",
        )

    # Pairwise l1 distances between support points, candidates x points.
    dist = np.abs(coords[:, None, 0] - coords[None, :, 0]) + np.abs(
        coords[:, None, 1] - coords[None, :, 1]
    )
    dist = dist.astype(np.float64)

    if comb(s, k) <= EXACT_COMBO_LIMIT:
        best_cost, best_combo = np.inf, None
        for combo in combinations(range(s), k):
            cost = float((dist[list(combo), :].min(axis=0) * w).sum())
            if cost < best_cost - 1e-15:
                best_cost, best_combo = cost, combo
        chosen = np.array(best_combo, dtype=np.intp)
        method = "exact"
    else:
        chosen = _local_search(dist, w, k, seed)
        method = "local_search"

    labels, near = _assign(dist[chosen, :])
    centers = [tuple(map(int, coords[j])) for j in chosen]
    return KMedianResult(delta, centers, float((w * near).sum()), labels, coords, w, method)


def _local_search(dist: np.ndarray, w: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Greedy-farthest start, then best-improvement single swaps to a local optimum."""
    s = dist.shape[0]
    centers = [int(np.argmax(w))]
    while len(centers) < k:
        near = dist[centers, :].min(axis=0)
        centers.append(int(np.argmax(w * near)))
    centers = np.array(sorted(set(centers)), dtype=np.intp)
    while centers.size < k:  # duplicate farthest picks on tiny supports
        extra = next(i for i in range(s) if i not in set(centers.tolist()))
        centers = np.append(centers, extra)

    for _ in range(200):
        cols = dist[centers, :]
        labels, d1 = _assign(cols)
        cost = float((w * d1).sum())
        # Distance to the second-nearest current center, per point.
        if centers.size > 1:
            part = np.partition(cols, 1, axis=0)
            d2 = part[1, :]
        else:
            d2 = np.full(s, np.inf)
        base = np.where(labels[None, :] == np.arange(centers.size)[:, None], d2[None, :], d1[None, :])
        # swap_cost[i, j]: drop centers[i], add candidate j.
        swap_cost = (np.minimum(base[:, None, :], dist[None, :, :]) * w).sum(axis=2)
        i, j = np.unravel_index(int(np.argmin(swap_cost)), swap_cost.shape)
        if swap_cost[i, j] >= cost - 1e-12 * max(1.0, cost):
            break
        centers = centers.copy()
        centers[i] = j
    return centers
