"""Randomized support finding and set-query recovery.

Coarse levels with at most 2s cells are stored outright; every finer
level is hashed into a table of u = 32 * 8s buckets.  Support recovery
walks top-down keeping the 2s largest bucket estimates among the kept
cells' children (bucket sums overestimate nonnegative signals, which is
what makes the greedy selection safe).  Values on the found support come
from a separate sign-hash median sketch.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .core import (
    CellId,
    PyramidCoeffs,
    TreeSupport,
    cells_at_level,
    grid_side,
    level_slice,
    num_levels,
    t_length,
)

HASH_PRIME = np.uint64(2**31 - 1)


def _hash_pair(rng: np.random.Generator) -> tuple[int, int]:
    a = int(rng.integers(1, int(HASH_PRIME)))
    b = int(rng.integers(0, int(HASH_PRIME)))
    return a, b


def _hash_eval(a: int, b: int, idx: np.ndarray, u: int) -> np.ndarray:
    idx = idx.astype(np.uint64)
    return (((np.uint64(a) * idx + np.uint64(b)) % HASH_PRIME) % np.uint64(u)).astype(
        np.intp
    )


@dataclass
class LevelHashMeasurements:
    buckets: list  # per hashed level i in [0, i_top): float array of size u
    explicit: dict  # level -> raw coefficient array (coarse levels)


@dataclass
class LevelHashSketch:
    """Pairwise-independent hash per fine level plus raw coarse levels."""

    delta: int
    s: int
    seed: int

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("width s must be >= 1")
        l = num_levels(self.delta)
        self.u = 32 * 8 * self.s
        self.i_top = next(
            i for i in range(l + 1) if cells_at_level(self.delta, i) <= 2 * self.s
        )
        rng = np.random.default_rng(self.seed)
        self.hash_params = [_hash_pair(rng) for _ in range(self.i_top)]

    def rows(self) -> int:
        explicit = sum(
            cells_at_level(self.delta, i)
            for i in range(self.i_top, num_levels(self.delta) + 1)
        )
        return self.i_top * self.u + explicit

    def measure(self, y: PyramidCoeffs) -> LevelHashMeasurements:
        if y.delta != self.delta:
            raise ValueError("coefficient grid does not match the sketch")
        buckets = []
        for i in range(self.i_top):
            vals = y.values[level_slice(self.delta, i)]
            a, b = self.hash_params[i]
            h = _hash_eval(a, b, np.arange(vals.size), self.u)
            buckets.append(np.bincount(h, weights=vals, minlength=self.u))
        explicit = {
            i: y.values[level_slice(self.delta, i)].copy()
            for i in range(self.i_top, num_levels(self.delta) + 1)
        }
        return LevelHashMeasurements(buckets, explicit)


@dataclass
class LevelDiagnostics:
    """Per-level quantities of the skipped-maximum argument."""

    level: int
    skipped_max: float  # w_i: largest true value dropped at this level
    upstream_error: float  # f_i: true mass at level i+1 outside the kept tier
    kept_sth_value: float  # c_i: s-th largest true value among kept cells


def find_support(
    sketch: LevelHashSketch,
    meas: LevelHashMeasurements,
    y_true: PyramidCoeffs | None = None,
):
    """Top-down support recovery; the result is parent-closed with at most
    2s cells per hashed level.  With y_true given, per-level diagnostics of
    the selection argument are returned alongside.
    """
    delta = sketch.delta
    l = num_levels(delta)
    s = sketch.s
    cells = set()
    for i in range(sketch.i_top, l + 1):
        side = grid_side(delta, i)
        cells.update(CellId(i, r, c) for r in range(side) for c in range(side))

    diags = []
    side_top = grid_side(delta, sketch.i_top)
    tier = [(r, c) for r in range(side_top) for c in range(side_top)]
    prev_dropped_mass = 0.0  # f at the tier above is 0: that tier is complete
    for i in range(sketch.i_top - 1, -1, -1):
        side = grid_side(delta, i)
        cand_rc = []
        for (r, c) in tier:
            cand_rc.extend(
                ((2 * r, 2 * c), (2 * r, 2 * c + 1), (2 * r + 1, 2 * c), (2 * r + 1, 2 * c + 1))
            )
        pos = np.array([r * side + c for (r, c) in cand_rc], dtype=np.intp)
        a, b = sketch.hash_params[i]
        est = meas.buckets[i][_hash_eval(a, b, pos, sketch.u)]
        keep_n = min(2 * s, len(cand_rc))
        order = np.lexsort((pos, -est))
        kept_sel = order[:keep_n]
        kept = [cand_rc[j] for j in kept_sel]

        if y_true is not None:
            level_vals = y_true.values[level_slice(delta, i)]
            cand_true = level_vals[pos]
            kept_mask = np.zeros(len(cand_rc), dtype=bool)
            kept_mask[kept_sel] = True
            skipped = cand_true[~kept_mask]
            kept_vals = np.sort(cand_true[kept_mask])[::-1]
            sth = float(kept_vals[s - 1]) if kept_vals.size >= s else 0.0
            diags.append(
                LevelDiagnostics(
                    level=i,
                    skipped_max=float(skipped.max(initial=0.0)),
                    upstream_error=prev_dropped_mass,
                    kept_sth_value=sth,
                )
            )
            # f for the next processed level: mass at level i not kept.
            lvl_mask = np.zeros(level_vals.size, dtype=bool)
            lvl_mask[pos[kept_sel]] = True
            prev_dropped_mass = float(np.abs(level_vals[~lvl_mask]).sum())

        cells.update(CellId(i, r, c) for (r, c) in kept)
        tier = kept

    support = TreeSupport(delta, frozenset(cells), width_bound=2 * s)
    if y_true is not None:
        return support, diags
    return support


@dataclass
class SetQueryMeasurements:
    tables: np.ndarray  # (reps, buckets)


@dataclass
class SetQuerySketch:
    """Sign-hash median estimator for values on a known support."""

    delta: int
    s_max: int
    seed: int
    c_sq: int = 8
    reps: int = 3

    def __post_init__(self):
        if self.s_max < 1:
            raise ValueError("s_max must be >= 1")
        self.buckets = self.c_sq * self.s_max
        rng = np.random.default_rng(self.seed)
        self.bucket_params = [_hash_pair(rng) for _ in range(self.reps)]
        self.sign_params = [_hash_pair(rng) for _ in range(self.reps)]

    def rows(self) -> int:
        return self.reps * self.buckets

    def _signs(self, rep: int, idx: np.ndarray) -> np.ndarray:
        a, b = self.sign_params[rep]
        bit = _hash_eval(a, b, idx, 2)
        return 2.0 * bit - 1.0

    def measure(self, y: PyramidCoeffs) -> SetQueryMeasurements:
        if y.delta != self.delta:
            raise ValueError("coefficient grid does not match the sketch")
        t = t_length(self.delta)
        idx = np.arange(t)
        tables = np.zeros((self.reps, self.buckets))
        for rep in range(self.reps):
            a, b = self.bucket_params[rep]
            h = _hash_eval(a, b, idx, self.buckets)
            tables[rep] = np.bincount(
                h, weights=self._signs(rep, idx) * y.values, minlength=self.buckets
            )
        return SetQueryMeasurements(tables)


def set_query(
    sketch: SetQuerySketch, meas: SetQueryMeasurements, indices: np.ndarray
) -> np.ndarray:
    """Median-of-reps estimates of y on the given coefficient indices."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size > sketch.s_max:
        raise ValueError(
            f"support size {indices.size} exceeds sketch capacity {sketch.s_max}"
        )
    ests = np.empty((sketch.reps, indices.size))
    for rep in range(sketch.reps):
        a, b = sketch.bucket_params[rep]
        h = _hash_eval(a, b, indices, sketch.buckets)
        ests[rep] = sketch._signs(rep, indices) * meas.tables[rep][h]
    return np.median(ests, axis=0)


# ---------------------------------------------------------------------------
# Bundled scheme: find the support, then query its values.


@dataclass
class RandomizedSketch:
    """FindSupport sketch plus a set-query sketch sized for its worst case."""

    delta: int
    s: int
    seed: int
    c_sq: int = 8
    reps: int = 3

    def __post_init__(self):
        self.levels = LevelHashSketch(self.delta, self.s, self.seed)
        explicit = sum(
            cells_at_level(self.delta, i)
            for i in range(self.levels.i_top, num_levels(self.delta) + 1)
        )
        self.s_max = 2 * self.s * self.levels.i_top + explicit
        self.setquery = SetQuerySketch(
            self.delta, self.s_max, self.seed + 1, c_sq=self.c_sq, reps=self.reps
        )

    def rows(self) -> int:
        return self.levels.rows() + self.setquery.rows()

    def measure(self, y: PyramidCoeffs):
        return (self.levels.measure(y), self.setquery.measure(y))


def randomized_l1l1_recover(sketch: RandomizedSketch, meas):
    """Compose find_support and set_query into coefficient estimates."""
    level_meas, sq_meas = meas
    support = find_support(sketch.levels, level_meas)
    idx = support.indices()
    values = np.zeros(t_length(sketch.delta))
    values[idx] = set_query(sketch.setquery, sq_meas, idx)
    return PyramidCoeffs(sketch.delta, values), support


def width_from_sparsity(k: int, eps: float, c_width: float = 4.0) -> int:
    """Model width s = ceil(c_width * k / eps**2)."""
    return int(ceil(c_width * k / (eps * eps)))


def project_model_m(y: PyramidCoeffs, s: int) -> PyramidCoeffs:
    """Greedy feasible point of the value-constrained tree model.

    Keeps the top-s cells per level subject to parent closure, then scales
    children down wherever a node fails to dominate twice their mass.
    Used as the benchmark denominator; an upper bound on the true distance.
    """
    delta = y.delta
    l = num_levels(delta)
    vals = np.clip(y.values, 0.0, None)
    kept_per_level: list = [None] * (l + 1)
    kept_per_level[l] = [(0, 0)]
    for i in range(l - 1, -1, -1):
        side = grid_side(delta, i)
        cand = []
        for (r, c) in kept_per_level[i + 1]:
            cand.extend(((2 * r, 2 * c), (2 * r, 2 * c + 1), (2 * r + 1, 2 * c), (2 * r + 1, 2 * c + 1)))
        pos = np.array([r * side + c for (r, c) in cand], dtype=np.intp)
        level_vals = vals[level_slice(delta, i)][pos]
        order = np.lexsort((pos, -level_vals))
        kept_per_level[i] = [cand[j] for j in order[: min(s, len(cand))]]

    out = np.zeros_like(vals)
    for i in range(l, -1, -1):
        off = level_slice(delta, i).start
        side = grid_side(delta, i)
        for (r, c) in kept_per_level[i]:
            out[off + r * side + c] = vals[off + r * side + c]
    # Enforce the doubling constraint top-down by shrinking children.
    for i in range(l, 0, -1):
        off = level_slice(delta, i).start
        side = grid_side(delta, i)
        child_off = level_slice(delta, i - 1).start
        child_side = side * 2
        for (r, c) in kept_per_level[i]:
            v = out[off + r * side + c]
            kids_idx = [
                child_off + rr * child_side + cc
                for (rr, cc) in (
                    (2 * r, 2 * c),
                    (2 * r, 2 * c + 1),
                    (2 * r + 1, 2 * c),
                    (2 * r + 1, 2 * c + 1),
                )
            ]
            kid_sum = float(sum(out[j] for j in kids_idx))
            if kid_sum > 0 and v < 2.0 * kid_sum:
                factor = v / (2.0 * kid_sum)
                for j in kids_idx:
                    out[j] *= factor
    return PyramidCoeffs(delta, out)


def model_m_benchmark_error(y: PyramidCoeffs, s: int) -> float:
    """l1 distance from y to the greedy model-M projection."""
    proj = project_model_m(y, s)
    return float(np.abs(y.values - proj.values).sum())
