"""Two-sample tests: Kolmogorov-Smirnov, classifier accuracy, permutation.

Also holds the per-feature KS battery used for covariate and label shift.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import binom

from .core import SplitPair

KS = "ks"
CLASSIFIER = "classifier"
PERMUTATION_MMD = "permutation-mmd"
PERMUTATION_LSDD = "permutation-lsdd"
PERMUTATION_KL = "permutation-kl"
METHODS = (KS, CLASSIFIER, PERMUTATION_MMD, PERMUTATION_LSDD, PERMUTATION_KL)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_ref: int
    n_cur: int
    method: str
    alpha: float = 0.05
    reject: bool = field(init=False)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value!r} outside [0, 1]")
        if self.method not in METHODS:
            raise ValueError(f"unknown test method {self.method!r}")
        object.__setattr__(self, "reject", bool(self.p_value < self.alpha))

    def at_level(self, alpha: float) -> "TestResult":
        return TestResult(self.statistic, self.p_value, self.n_ref, self.n_cur,
                          self.method, alpha)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Kolmogorov-Smirnov
# --------------------------------------------------------------------------

def ecdf_values(sample, t) -> np.ndarray:
    """F(t) = #{sample <= t} / n, evaluated at every entry of ``t``."""
    s = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    return np.searchsorted(s, np.asarray(t, dtype=float), side="right") / len(s)


def ks_statistic(x, y) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size == 0 or y.size == 0:
        raise ValueError("KS test needs nonempty samples")
    pooled = np.concatenate([x, y])
    return float(np.max(np.abs(ecdf_values(x, pooled) - ecdf_values(y, pooled))))


def kolmogorov_sf(lam: float, tol: float = 1e-12) -> float:
    """P(K > lam) for the limiting Kolmogorov distribution.

    Sums 2 * sum_k (-1)^(k-1) exp(-2 k^2 lam^2) until a term drops below
    ``tol``. The series is alternating with decreasing terms, so the
    truncation error is below ``tol``.
    """
    if lam <= 0:
        return 1.0
    if lam < 1e-3:
        # needs ~1e7 terms and the value is 1 to machine precision
        return 1.0
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        if term < tol:
            break
        total += term if k % 2 else -term
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(x, y, alpha: float = 0.05) -> TestResult:
    """Two-sample KS test with the asymptotic p-value at size nm/(n+m)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    D = ks_statistic(x, y)
    n, m = x.size, y.size
    ne = n * m / (n + m)
    return TestResult(D, kolmogorov_sf(math.sqrt(ne) * D), n, m, KS, alpha)


# --------------------------------------------------------------------------
# Classifier two-sample test
# --------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticSeparator:
    """L2-regularized logistic regression trained by full-batch gradient descent.

    Inputs are standardized with the training mean and sample std. The
    intercept is not penalized. Step size and iteration count are fixed, so
    fitting is deterministic.
    """

    def __init__(self, l2: float = 1e-2, lr: float = 0.5, n_iter: int = 1000):
        self.l2 = l2
        self.lr = lr
        self.n_iter = n_iter

    def fit(self, X, y) -> "LogisticSeparator":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0, ddof=1) if len(X) > 1 else np.ones(X.shape[1])
        self.scale_ = np.where(sd > 0, sd, 1.0)
        Z = (X - self.mean_) / self.scale_
        n = len(Z)
        w = np.zeros(Z.shape[1])
        b = 0.0
        for _ in range(self.n_iter):
            r = _sigmoid(Z @ w + b) - y
            w -= self.lr * (Z.T @ r / n + self.l2 * w)
            b -= self.lr * r.mean()
        self.coef_, self.intercept_ = w, b
        return self

    def decision_function(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.mean_) / self.scale_
        return Z @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)


@dataclass(frozen=True)
class ClassifierSplit:
    train_ref: np.ndarray
    train_cur: np.ndarray
    hold_ref: np.ndarray
    hold_cur: np.ndarray


def balanced_split(n_ref: int, n_cur: int, holdout_frac: float, seed: int) -> ClassifierSplit:
    """Row indices for a class-balanced train/holdout split.

    The larger class is downsampled to the smaller one. Both classes are
    shuffled by generators with the same seed, so equal-size samples get the
    same permutation; identical inputs then produce identical training sets
    for both classes.
    """
    if not 0 < holdout_frac < 1:
        raise ValueError("holdout_frac must lie in (0, 1)")
    k = min(n_ref, n_cur)
    perm_ref = np.random.default_rng(seed).permutation(n_ref)[:k]
    perm_cur = np.random.default_rng(seed).permutation(n_cur)[:k]
    n_hold = int(round(holdout_frac * k))
    if 2 * n_hold < 10:
        raise ValueError(f"holdout has {2 * n_hold} rows after splitting; need at least 10")
    if n_hold >= k:
        raise ValueError("holdout leaves no training rows")
    return ClassifierSplit(perm_ref[n_hold:], perm_cur[n_hold:],
                           perm_ref[:n_hold], perm_cur[:n_hold])


def classifier_two_sample_test(ref, cur, holdout_frac: float = 0.3, alpha: float = 0.05,
                               seed: int = 0, separator: Optional[LogisticSeparator] = None
                               ) -> TestResult:
    """Holdout accuracy of a reference-vs-current separator.

    The p-value is the exact binomial tail P(Bin(n_holdout, 1/2) >= correct);
    classes are balanced so chance accuracy is exactly 1/2 under the null.
    """
    X = np.atleast_2d(np.asarray(ref, dtype=float))
    Y = np.atleast_2d(np.asarray(cur, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch")
    if len(X) < 10 or len(Y) < 10:
        raise ValueError("classifier test needs at least 10 rows per sample")
    split = balanced_split(len(X), len(Y), holdout_frac, seed)
    train = np.vstack([X[split.train_ref], Y[split.train_cur]])
    y_train = np.r_[np.zeros(len(split.train_ref)), np.ones(len(split.train_cur))]
    hold = np.vstack([X[split.hold_ref], Y[split.hold_cur]])
    y_hold = np.r_[np.zeros(len(split.hold_ref)), np.ones(len(split.hold_cur))]
    clf = (separator or LogisticSeparator()).fit(train, y_train)
    correct = int(np.sum(clf.predict(hold) == y_hold))
    n_hold = len(y_hold)
    p = float(binom.sf(correct - 1, n_hold, 0.5))
    return TestResult(correct / n_hold, min(1.0, max(0.0, p)), len(X), len(Y),
                      CLASSIFIER, alpha)


# --------------------------------------------------------------------------
# Permutation harness
# --------------------------------------------------------------------------

def permutation_rng(seed: int, i: int) -> np.random.Generator:
    """Generator for permutation ``i``; depends only on (seed, i)."""
    return np.random.default_rng([seed, i])


def permutation_test(statistic: Callable[[np.ndarray, np.ndarray], float], ref, cur,
                     n_perm: int = 199, seed: int = 0, alpha: float = 0.05,
                     method: str = PERMUTATION_MMD) -> TestResult:
    """Calibrate ``statistic`` by re-splitting the pooled rows.

    p = (1 + #{permuted >= observed}) / (n_perm + 1). Larger statistics mean
    more evidence of a difference. Exceptions from ``statistic`` propagate.
    """
    if n_perm < 99:
        raise ValueError("n_perm must be at least 99")
    X = np.atleast_2d(np.asarray(ref, dtype=float))
    Y = np.atleast_2d(np.asarray(cur, dtype=float))
    n = len(X)
    pooled = np.vstack([X, Y])
    observed = float(statistic(X, Y))
    # permuted copies of the observed split can differ from it in the last ulp
    tol = 1e-12 * max(1.0, abs(observed))
    hits = 0
    for i in range(1, n_perm + 1):
        idx = permutation_rng(seed, i).permutation(len(pooled))
        stat = statistic(pooled[idx[:n]], pooled[idx[n:]])
        if stat >= observed - tol:
            hits += 1
    return TestResult(observed, (1 + hits) / (n_perm + 1), n, len(Y), method, alpha)


# --------------------------------------------------------------------------
# Per-feature battery
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BatteryResult:
    features: dict[str, TestResult]
    label: Optional[TestResult]
    alpha: float
    correction: str
    threshold: float

    @property
    def covariate_shift(self) -> bool:
        return any(r.reject for r in self.features.values())

    @property
    def label_shift(self) -> bool:
        return self.label is not None and self.label.reject

    @property
    def flagged(self) -> list[str]:
        return [name for name, r in self.features.items() if r.reject]


def per_test_threshold(alpha: float, k: int, correction: str) -> float:
    if correction == "bonferroni":
        return alpha / max(k, 1)
    if correction == "none":
        return alpha
    raise ValueError(f"unknown correction {correction!r}")


def feature_battery(pair: SplitPair, alpha: float = 0.05, correction: str = "bonferroni",
                    include_label: bool = True) -> BatteryResult:
    """KS test on every feature, and on the label when present and requested."""
    test_label = include_label and pair.has_label
    k = len(pair.feature_names) + (1 if test_label else 0)
    thr = per_test_threshold(alpha, k, correction)
    ref, cur = pair.reference, pair.current
    features = {
        name: ks_two_sample(ref.features[:, j], cur.features[:, j], alpha=thr)
        for j, name in enumerate(pair.feature_names)
    }
    label = ks_two_sample(ref.label, cur.label, alpha=thr) if test_label else None
    return BatteryResult(features, label, alpha, correction, thr)
