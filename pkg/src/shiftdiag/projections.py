"""Plot data for eyeballing shift: pooled PCA coordinates and per-feature ECDFs.

Nothing is rendered here; the CSV writers emit tables for external plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CURRENT, REFERENCE, SplitPair


@dataclass(frozen=True)
class ProjectionResult:
    components: np.ndarray          # c x d, orthonormal rows
    explained_variance: np.ndarray  # c, nonincreasing
    coordinates: np.ndarray         # (n_ref + n_cur) x c
    sources: tuple[str, ...]
    total_variance: float


def pca_project(pair: SplitPair, c: int = 2) -> ProjectionResult:
    """Fit PCA on the pooled sample and project both datasets.

    Uses the eigendecomposition of the pooled covariance (n-1 denominator).
    Each component is signed so that its largest-magnitude entry is positive.
    """
    ref, cur = pair.reference.features, pair.current.features
    d = ref.shape[1]
    if c < 1 or c > d:
        raise ValueError(f"cannot extract {c} components from {d} features")
    pooled = np.vstack([ref, cur])
    if len(pooled) < 2:
        raise ValueError("PCA needs at least 2 pooled rows")
    centered = pooled - pooled.mean(axis=0)
    cov = centered.T @ centered / (len(pooled) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    for row in comps:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    comps = comps[:c]
    sources = (REFERENCE,) * len(ref) + (CURRENT,) * len(cur)
    return ProjectionResult(comps, evals[:c], centered @ comps.T, sources,
                            float(np.trace(cov)))


def ecdf(series) -> list[tuple[float, float]]:
    """Step points (t, F(t)) at the sorted unique values of ``series``."""
    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("ECDF of an empty series")
    values, counts = np.unique(x, return_counts=True)
    F = np.cumsum(counts) / x.size
    return [(float(t), float(f)) for t, f in zip(values, F)]


def write_pca_csv(result: ProjectionResult, path: str | Path) -> None:
    c = result.components.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"component_{j + 1}" for j in range(c)] + ["source"])
        for row, src in zip(result.coordinates, result.sources):
            w.writerow([repr(float(v)) for v in row] + [src])


def write_ecdf_csv(pair: SplitPair, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "F", "source", "feature"])
        for j, name in enumerate(pair.feature_names):
            for tag, ds in ((REFERENCE, pair.reference), (CURRENT, pair.current)):
                for t, f in ecdf(ds.features[:, j]):
                    w.writerow([repr(t), repr(f), tag, name])
