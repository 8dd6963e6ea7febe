"""Distances between a reference and a current sample: KL, MMD and LSDD."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .density import (DEFAULT_SMOOTHING, HistogramPair, KernelSpec, default_bins,
                      gaussian_kernel_matrix, shared_histogram)

MAX_LSDD_CENTERS = 100


def _kl_sum(p: np.ndarray, q: np.ndarray) -> float:
    # log difference rather than log ratio: p/q overflows for subnormal q
    return float(max(np.sum(p * (np.log(p) - np.log(q))), 0.0))


def kl_divergence(hist: HistogramPair) -> float:
    """KL(p || q) in nats.

    Bins with p = 0 contribute nothing. Returns ``math.inf`` when p puts mass
    on a bin where q has none, which only happens for unsmoothed histograms.
    """
    p, q = hist.p, hist.q
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return _kl_sum(p[mask], q[mask])


def joint_kl_divergence(ref, cur, bins: Optional[int] = None,
                        smoothing: float = DEFAULT_SMOOTHING) -> float:
    """KL on a shared 2-D histogram of at most two features."""
    ref = np.asarray(ref, dtype=float)
    cur = np.asarray(cur, dtype=float)
    if ref.ndim == 1:
        ref, cur = ref[:, None], cur[:, None]
    d = ref.shape[1]
    if d > 2 or cur.shape[1] != d:
        raise ValueError("joint KL is only estimated for one or two features")
    if d == 1:
        return kl_divergence(shared_histogram(ref[:, 0], cur[:, 0], bins, smoothing))
    if bins is None:
        bins = default_bins(ref.shape[0] + cur.shape[0])
    pooled = np.vstack([ref, cur])
    lo, hi = pooled.min(axis=0), pooled.max(axis=0)
    if np.any(hi <= lo):
        raise ValueError("degenerate range in a joint feature")
    edges = [np.linspace(lo[j], hi[j], bins + 1) for j in range(2)]
    p, _, _ = np.histogram2d(ref[:, 0], ref[:, 1], bins=edges)
    q, _, _ = np.histogram2d(cur[:, 0], cur[:, 1], bins=edges)
    p = (p.ravel() + smoothing) / (p.sum() + smoothing * p.size)
    q = (q.ravel() + smoothing) / (q.sum() + smoothing * q.size)
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return _kl_sum(p[mask], q[mask])


def _check_pair(ref, cur):
    X = np.atleast_2d(np.asarray(ref, dtype=float))
    Y = np.atleast_2d(np.asarray(cur, dtype=float))
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape} vs {Y.shape}")
    return X, Y


def mmd(ref, cur, spec: KernelSpec, estimator: str = "biased") -> float:
    """Maximum mean discrepancy under a Gaussian kernel.

    ``biased`` returns sqrt(max(MMD^2, 0)) with the V-statistic, so the value
    is a distance. ``unbiased`` returns the signed U-statistic MMD^2, which
    can be negative; permutation calibration wants the raw statistic.
    """
    X, Y = _check_pair(ref, cur)
    # fixed orientation makes mmd(X, Y) and mmd(Y, X) bit-identical
    if (len(X), X.tobytes()) > (len(Y), Y.tobytes()):
        X, Y = Y, X
    n, m = len(X), len(Y)
    Kxx = gaussian_kernel_matrix(X, X, spec)
    Kyy = gaussian_kernel_matrix(Y, Y, spec)
    Kxy = gaussian_kernel_matrix(X, Y, spec)
    if estimator == "biased":
        if n < 1 or m < 1:
            raise ValueError("biased MMD needs at least one point per sample")
        sq = Kxx.mean() + Kyy.mean() - 2.0 * Kxy.mean()
        return math.sqrt(max(sq, 0.0))
    if estimator == "unbiased":
        if n < 2 or m < 2:
            raise ValueError("unbiased MMD needs at least two points per sample")
        xx = (Kxx.sum() - np.trace(Kxx)) / (n * (n - 1))
        yy = (Kyy.sum() - np.trace(Kyy)) / (m * (m - 1))
        return float(xx + yy - 2.0 * Kxy.mean())
    raise ValueError(f"unknown MMD estimator {estimator!r}")


@dataclass(frozen=True)
class LsddModel:
    """Fitted density-difference function g(x) = sum_l theta_l phi_l(x).

    ``value`` estimates the integrated squared difference of the reference
    and current densities. It is reported as computed.
    """

    centers: np.ndarray
    sigma: float
    lam: float
    theta: np.ndarray
    value: float
    H: np.ndarray
    h: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.centers.shape[1] == 1 else x[None, :]
        return lsdd_basis(x, self.centers, self.sigma) @ self.theta

    @property
    def residual(self) -> float:
        """Max-norm residual of the normal equations (H + lam I) theta = h."""
        A = self.H + self.lam * np.eye(len(self.theta))
        return float(np.max(np.abs(A @ self.theta - self.h)))


def lsdd_basis(x, centers, sigma: float) -> np.ndarray:
    return gaussian_kernel_matrix(x, centers, KernelSpec(sigma))


def lsdd_gram(centers, sigma: float) -> np.ndarray:
    """Exact integral of phi_l * phi_l' over R^d for Gaussian basis functions."""
    centers = np.asarray(centers, dtype=float)
    d = centers.shape[1]
    sq = cdist(centers, centers, "sqeuclidean")
    return (math.pi * sigma ** 2) ** (d / 2.0) * np.exp(-sq / (4.0 * sigma ** 2))


def choose_centers(ref, cur, max_centers: int = MAX_LSDD_CENTERS, seed: int = 0) -> np.ndarray:
    """Pick basis centers from the pooled sample without replacement.

    Pooled rows are put into lexicographic order first, so the choice does
    not depend on which sample is called reference.
    """
    X, Y = _check_pair(ref, cur)
    pooled = np.vstack([X, Y])
    pooled = pooled[np.lexsort(pooled.T[::-1])]
    b = min(max_centers, len(pooled))
    if b == len(pooled):
        return pooled
    idx = np.sort(np.random.default_rng(seed).choice(len(pooled), size=b, replace=False))
    return pooled[idx]


def _solve(H: np.ndarray, h: np.ndarray, lam: float) -> np.ndarray:
    A = H + lam * np.eye(len(h))
    if lam == 0:
        # the Gram matrix of repeated or near-coincident centers is singular
        if np.linalg.cond(A) > 1e12:
            raise np.linalg.LinAlgError(
                "H is singular with lambda = 0; use a positive regularization lambda > 0")
    try:
        return np.linalg.solve(A, h)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "H + lambda*I is singular; use a positive regularization lambda > 0") from None


def lsdd(ref, cur, sigma: float, lam: float = 1e-2, centers=None,
         seed: int = 0) -> LsddModel:
    """Least-squares density difference with a Gaussian basis.

    Solves theta = (H + lam I)^-1 h where H is the exact integral of basis
    products and h is the difference of the basis means over ref and cur.

    ``centers`` is either an explicit b x d matrix, the string ``"pooled"``
    (every pooled row), or None for up to 100 seeded pooled rows.
    """
    X, Y = _check_pair(ref, cur)
    if len(X) < 1 or len(Y) < 1:
        raise ValueError("LSDD needs nonempty samples")
    KernelSpec(sigma)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if centers is None:
        C = choose_centers(X, Y, seed=seed)
    elif isinstance(centers, str):
        if centers != "pooled":
            raise ValueError(f"unknown center choice {centers!r}")
        C = np.vstack([X, Y])
    else:
        C = np.atleast_2d(np.asarray(centers, dtype=float))
        if C.shape[1] != X.shape[1]:
            raise ValueError("centers have the wrong dimension")
    H = lsdd_gram(C, sigma)
    h = lsdd_basis(X, C, sigma).mean(axis=0) - lsdd_basis(Y, C, sigma).mean(axis=0)
    theta = _solve(H, h, lam)
    value = float(2.0 * theta @ h - theta @ H @ theta)
    return LsddModel(C, float(sigma), float(lam), theta, value, H, h)


def _folds(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    return np.array_split(rng.permutation(n), k)


def lsdd_cv_scores(ref, cur, sigma_grid: Sequence[float], lambda_grid: Sequence[float],
                   folds: int = 5, seed: int = 0) -> np.ndarray:
    """Mean held-out objective 2 theta'h_holdout - theta'H theta per grid cell.

    Returns an array of shape (len(sigma_grid), len(lambda_grid)).
    """
    X, Y = _check_pair(ref, cur)
    if not sigma_grid or not lambda_grid:
        raise ValueError("hyperparameter grids must be nonempty")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if min(len(X), len(Y)) < folds:
        raise ValueError(f"fewer samples than folds ({min(len(X), len(Y))} < {folds})")
    rng = np.random.default_rng(seed)
    fx, fy = _folds(len(X), folds, rng), _folds(len(Y), folds, rng)
    C = choose_centers(X, Y, seed=seed)
    scores = np.zeros((len(sigma_grid), len(lambda_grid)))
    for a, sigma in enumerate(sigma_grid):
        H = lsdd_gram(C, sigma)
        phx, phy = lsdd_basis(X, C, sigma), lsdd_basis(Y, C, sigma)
        for f in range(folds):
            tx = np.setdiff1d(np.arange(len(X)), fx[f])
            ty = np.setdiff1d(np.arange(len(Y)), fy[f])
            h_train = phx[tx].mean(axis=0) - phy[ty].mean(axis=0)
            h_hold = phx[fx[f]].mean(axis=0) - phy[fy[f]].mean(axis=0)
            for b, lam in enumerate(lambda_grid):
                theta = _solve(H, h_train, lam)
                scores[a, b] += 2.0 * theta @ h_hold - theta @ H @ theta
    return scores / folds


def select_lsdd_hyperparams(ref, cur, sigma_grid: Sequence[float],
                            lambda_grid: Sequence[float], folds: int = 5,
                            seed: int = 0) -> tuple[float, float]:
    """k-fold choice of (sigma, lambda); larger held-out objective wins.

    Ties go to the larger lambda, then the larger sigma.
    """
    scores = lsdd_cv_scores(ref, cur, sigma_grid, lambda_grid, folds, seed)
    best = None
    for a, sigma in enumerate(sigma_grid):
        for b, lam in enumerate(lambda_grid):
            key = (scores[a, b], lam, sigma)
            if best is None or key > best:
                best = key
    return float(best[2]), float(best[1])
