"""Model-based CoSaMP over dense Gaussian sketches.

The sketch is an i.i.d. N(0, 1/m) matrix regenerated deterministically
from its seed.  Recovery alternates residual proxies, candidate-support
merging, least squares on the candidate columns, and exact model
projection; with the tree model this follows the model-based compressive
sensing recipe, with both projections run at budget 2K.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log2, sqrt

import numpy as np
from scipy.linalg import solve_triangular

from .core import t_length
from .sparsemodel import embed_tree_size_bound, tree_project_values

MAX_ITERS = 30
STALL_REL = 1e-6


@dataclass
class DenseSketch:
    """m x cols Gaussian sketch; (m, cols, seed) regenerate the entries bit-identically."""

    m: int
    cols: int
    seed: int
    c_rows: float = 0.0  # bookkeeping only; entries depend on (m, cols, seed)

    def __post_init__(self):
        if self.m > self.cols:
            raise ValueError(f"m = {self.m} exceeds signal length {self.cols}")
        if self.m < 1:
            raise ValueError("sketch needs at least one row")
        self._matrix = None

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            rng = np.random.default_rng(self.seed)
            self._matrix = rng.standard_normal((self.m, self.cols)) / sqrt(self.m)
        return self._matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix() @ values


def build_dense_sketch(t: int, K: int, c_rows: float, seed: int) -> DenseSketch:
    """Sketch with m = ceil(c_rows * K) rows for signals of length t."""
    m = int(ceil(c_rows * K))
    return DenseSketch(m=m, cols=t, seed=seed, c_rows=c_rows)


@dataclass
class CosampReport:
    iterations: int
    residuals: list = field(default_factory=list)
    regularized: bool = False
    stop_reason: str = ""


def _delta_from_cols(cols: int) -> int:
    n = (3 * cols + 1) // 4
    delta = int(round(sqrt(n)))
    if t_length(delta) != cols:
        raise ValueError(f"column count {cols} is not a pyramid length")
    return delta


def _least_squares(a_sub: np.ndarray, b: np.ndarray, report: CosampReport) -> np.ndarray:
    """QR solve with a ridge fallback on rank deficiency."""
    m, p = a_sub.shape
    if p <= m:
        q, r = np.linalg.qr(a_sub)
        diag = np.abs(np.diag(r))
        if diag.size and diag.min() > 1e-10 * max(diag.max(), 1e-300):
            return solve_triangular(r, q.T @ b)
    gram = a_sub.T @ a_sub
    lam = 1e-10 * max(np.trace(gram), 1e-300)
    gram[np.diag_indices_from(gram)] += lam
    report.regularized = True
    return np.linalg.solve(gram, a_sub.T @ b)


def model_cosamp(sketch: DenseSketch, b: np.ndarray, K: int, projector=None):
    """Recover a tree-model vector from b = A y + e.

    projector(values, budget) must return the support mask of the exact
    model projection; the default projects onto rooted cell trees for
    pyramid-length signals.  Both the candidate and prune projections use
    budget 2K, so the output lies in the 2K-node model.

    Returns (y_star, CosampReport); y_star is the iterate with the
    smallest residual.
    """
    a = sketch.matrix()
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.size != sketch.m:
        raise ValueError(f"measurement length {b.size} != sketch rows {sketch.m}")
    if projector is None:
        delta = _delta_from_cols(sketch.cols)
        projector = lambda values, budget: tree_project_values(values, delta, budget)

    t = sketch.cols
    budget = 2 * K
    y = np.zeros(t)
    best_y, best_res = y, float(np.linalg.norm(b))
    report = CosampReport(iterations=0, residuals=[best_res])
    scale = max(best_res, 1e-300)
    prev_res = best_res

    r = b.copy()
    for it in range(1, MAX_ITERS + 1):
        report.iterations = it
        proxy = a.T @ r
        cand = projector(proxy, budget) | (y != 0)
        idx = np.flatnonzero(cand)
        z = np.zeros(t)
        if idx.size:
            z[idx] = _least_squares(a[:, idx], b, report)
        keep = projector(z, budget)
        y = np.where(keep, z, 0.0)
        r = b - a @ y
        res = float(np.linalg.norm(r))
        report.residuals.append(res)
        if res < best_res:
            best_res, best_y = res, y
        if res <= 1e-12 * scale:
            report.stop_reason = "residual_zero"
            break
        if res > prev_res * (1.0 - STALL_REL):
            report.stop_reason = "stalled"
            break
        prev_res = res
    else:
        report.stop_reason = "max_iters"
    return best_y, report


def l1l1_rows(delta: int, k: int, c_rows: float) -> int:
    """Row count the l1/l1 tree wrapper expects: c_rows * 2K."""
    return int(ceil(c_rows * 2 * embed_tree_size_bound(delta, k)))


def l1l1_tree_recover(sketch: DenseSketch, b: np.ndarray, k: int, y_true=None):
    """l1/l1 recovery over rooted trees sized for k-pixel-sparse signals.

    Uses K = embed_tree_size_bound (the Sigma_k-in-tree sizing) and runs
    model_cosamp at projection budget 2K, so the sketch should be built by
    build_dense_sketch(t, 2K, c_rows, seed).  When y_true is supplied the
    report carries the measured l1 ratio against the best K-node tree
    approximation (an l1-scored exact tree projection).
    """
    delta = _delta_from_cols(sketch.cols)
    K = embed_tree_size_bound(delta, k)
    y_star, cosamp_report = model_cosamp(sketch, b, K)
    report = {
        "K": K,
        "c_prime": K / (k * max(log2((delta * delta) / k), 1.0)),
        "rows": sketch.m,
        "iterations": cosamp_report.iterations,
        "regularized": cosamp_report.regularized,
    }
    if y_true is not None:
        y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
        mask = tree_project_values(y_true, delta, K, score="l1")
        denom = float(np.abs(y_true[~mask]).sum())
        num = float(np.abs(y_true - y_star).sum())
        report["l1_error"] = num
        report["best_tree_l1"] = denom
        report["l1_ratio"] = num / denom if denom > 0 else (0.0 if num <= 1e-9 else np.inf)
    return y_star, report


def rip_estimate(sketch: DenseSketch, s: int, trials: int = 1000, seed: int = 0) -> float:
    """Empirical RIP constant: worst squared-norm deviation of A v from 1
    over random unit-norm s-sparse v.  A lower bound on the true constant."""
    rng = np.random.default_rng(seed)
    a = sketch.matrix()
    worst = 0.0
    for _ in range(trials):
        idx = rng.choice(sketch.cols, size=min(s, sketch.cols), replace=False)
        v = np.zeros(sketch.cols)
        v[idx] = rng.standard_normal(idx.size)
        v /= np.linalg.norm(v)
        worst = max(worst, abs(float(np.linalg.norm(a @ v)) ** 2 - 1.0))
    return worst
