"""Histogram and Gaussian-kernel primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

DEFAULT_SMOOTHING = 0.5
MIN_BINS, MAX_BINS = 8, 64


@dataclass(frozen=True)
class HistogramPair:
    edges: np.ndarray
    p: np.ndarray
    q: np.ndarray
    smoothing: float = 0.0

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly ascending with at least two entries")
        if p.shape != (len(edges) - 1,) or q.shape != p.shape:
            raise ValueError("p and q need one entry per bin")
        for name, v in (("p", p), ("q", q)):
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has negative or non-finite entries")
            if abs(v.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} sums to {v.sum()!r}, not 1")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def bins(self) -> int:
        return len(self.p)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel exp(-||a - b||^2 / (2 sigma^2))."""

    bandwidth: float

    def __post_init__(self):
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"kernel bandwidth must be positive, got {self.bandwidth!r}")


def default_bins(n_pooled: int) -> int:
    return int(min(MAX_BINS, max(MIN_BINS, math.ceil(math.sqrt(n_pooled)))))


def _normalize(counts: np.ndarray, smoothing: float) -> np.ndarray:
    v = counts + smoothing
    v = v / v.sum()
    # renormalizing once more pins the sum to 1 within a few ulps
    return v / v.sum()


def shared_histogram(ref_col, cur_col, bins: int | None = None,
                     smoothing: float = DEFAULT_SMOOTHING) -> HistogramPair:
    """Bin two samples on common equal-width edges spanning the pooled range.

    Counts are Laplace-smoothed by adding ``smoothing`` to every bin before
    normalization. ``bins=None`` picks ceil(sqrt(n_pooled)) clamped to [8, 64].
    """
    ref = np.asarray(ref_col, dtype=float).reshape(-1)
    cur = np.asarray(cur_col, dtype=float).reshape(-1)
    if ref.size == 0 or cur.size == 0:
        raise ValueError("both samples must be nonempty")
    if bins is None:
        bins = default_bins(ref.size + cur.size)
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    lo = min(ref.min(), cur.min())
    hi = max(ref.max(), cur.max())
    if not hi > lo:
        raise ValueError("degenerate range: all pooled values are identical")
    edges = np.linspace(lo, hi, bins + 1)
    if np.any(np.diff(edges) <= 0):
        # e.g. a range of a few subnormals cannot hold distinct float edges
        raise ValueError(f"pooled range [{lo!r}, {hi!r}] is too narrow for {bins} bins")
    ref_counts, _ = np.histogram(ref, bins=edges)
    cur_counts, _ = np.histogram(cur, bins=edges)
    return HistogramPair(edges, _normalize(ref_counts, smoothing),
                         _normalize(cur_counts, smoothing), smoothing)


def gaussian_kernel_matrix(A, B, spec: KernelSpec) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    sq = cdist(A, B, "sqeuclidean")
    return np.exp(-sq / (2.0 * spec.bandwidth ** 2))


def median_heuristic_bandwidth(pooled) -> float:
    """Median pairwise Euclidean distance over distinct pairs.

    Falls back to the smallest nonzero distance when the median is 0.
    """
    X = np.asarray(pooled, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    dist = pdist(X)
    med = float(np.median(dist))
    if med > 0:
        return med
    nonzero = dist[dist > 0]
    if nonzero.size == 0:
        raise ValueError("all points identical; bandwidth undefined")
    return float(nonzero.min())
