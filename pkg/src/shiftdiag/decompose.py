"""Split a performance gap into covariate, concept and out-of-support parts.

With conditional risks R_p(x) = E_p[loss | X = x] and R_q(x) = E_q[loss | X = x]
and a distribution S on the common support of P and Q::

    E_q[loss] - E_p[loss] = (E_S[R_p] - E_p[R_p])      covariate
                          + E_S[R_q - R_p]             concept
                          + (E_q[R_q] - E_S[R_q])      out of support

Risks are k-nearest-neighbour averages of observed losses. S is the uniform
distribution over the P rows whose estimated density ratio q/p falls inside
a band. Other ways to weight the overlap (proportional to min(p, q), or to
sqrt(p q)) are possible; only the uniform band is implemented.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .core import sample_std
from .stattests import LogisticSeparator

P_ORIGIN, Q_ORIGIN = "P", "Q"


class NoCommonSupportError(ValueError):
    """No rows of one sample fall inside the density-ratio band."""


@dataclass(frozen=True)
class LossSample:
    X: np.ndarray
    loss: np.ndarray
    origin: str = P_ORIGIN

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        loss = np.asarray(self.loss, dtype=float).reshape(-1)
        if X.shape[0] < 1 or X.shape[0] != loss.shape[0]:
            raise ValueError("need one loss per row and at least one row")
        if not np.all(np.isfinite(loss)) or not np.all(np.isfinite(X)):
            raise ValueError("losses and features must be finite")
        if self.origin not in (P_ORIGIN, Q_ORIGIN):
            raise ValueError(f"origin must be P or Q, got {self.origin!r}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "loss", loss)

    @property
    def n(self) -> int:
        return len(self.loss)


class RiskEstimator:
    """k-NN regression of loss on standardized features.

    Ties in distance are broken by row index (stable sort), so evaluation is
    deterministic.
    """

    def __init__(self, X, loss, k: int, center=None, scale=None):
        X = np.asarray(X, dtype=float)
        self.center = X.mean(axis=0) if center is None else np.asarray(center, dtype=float)
        if scale is None:
            scale = sample_std(X)
        scale = np.asarray(scale, dtype=float)
        self.scale = np.where(scale > 0, scale, 1.0)
        self.support = (X - self.center) / self.scale
        self.values = np.asarray(loss, dtype=float)
        self.k = k

    def __call__(self, Xq, chunk: int = 512) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(Xq, dtype=float)) - self.center) / self.scale
        out = np.empty(len(Z))
        for a in range(0, len(Z), chunk):
            d2 = cdist(Z[a:a + chunk], self.support, "sqeuclidean")
            nn = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
            out[a:a + chunk] = self.values[nn].mean(axis=1)
        return out


def default_k(n: int) -> int:
    return max(1, math.ceil(math.sqrt(n)))


def estimate_conditional_risk(sample: LossSample, k: Optional[int] = None,
                              center=None, scale=None) -> RiskEstimator:
    """Fit R(x) = mean loss of the k nearest rows of ``sample``.

    ``center``/``scale`` fix the standardization; by default the sample's own
    mean and sample std are used.
    """
    k = default_k(sample.n) if k is None else k
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > sample.n:
        raise ValueError(f"k={k} exceeds the {sample.n} rows available")
    return RiskEstimator(sample.X, sample.loss, k, center, scale)


@dataclass(frozen=True)
class SharedSupportSpec:
    p_weights: np.ndarray
    q_weights: np.ndarray
    ratio_bounds: tuple[float, float]
    p_ratio: np.ndarray
    q_ratio: np.ndarray

    def __post_init__(self):
        for name in ("p_weights", "q_weights"):
            w = getattr(self, name)
            if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a probability vector")

    @property
    def p_retained(self) -> float:
        return float(np.mean(self.p_weights > 0))

    @property
    def q_retained(self) -> float:
        return float(np.mean(self.q_weights > 0))

    @staticmethod
    def _effective(w: np.ndarray) -> float:
        return float(1.0 / np.sum(w ** 2))

    @property
    def effective_sizes(self) -> tuple[float, float]:
        return self._effective(self.p_weights), self._effective(self.q_weights)

    def summary(self) -> dict:
        ep, eq = self.effective_sizes
        return {"ratio_bounds": list(self.ratio_bounds),
                "p_retained_fraction": self.p_retained,
                "q_retained_fraction": self.q_retained,
                "p_effective_size": ep, "q_effective_size": eq}


def density_ratio(P_X, Q_X, separator: Optional[LogisticSeparator] = None):
    """Estimate q(x)/p(x) at every P and Q row with a probabilistic classifier.

    The separator's odds P(Q | x) / P(P | x) are multiplied by n_P / n_Q to undo
    the class-size prior.
    """
    P_X = np.atleast_2d(np.asarray(P_X, dtype=float))
    Q_X = np.atleast_2d(np.asarray(Q_X, dtype=float))
    X = np.vstack([P_X, Q_X])
    y = np.r_[np.zeros(len(P_X)), np.ones(len(Q_X))]
    # weak penalty: the odds must be free to reach the band edges on separable data
    clf = (separator or LogisticSeparator(l2=1e-3)).fit(X, y)
    prior = math.log(len(P_X) / len(Q_X))
    log_ratio = lambda A: np.clip(clf.decision_function(A) + prior, -700, 700)
    return np.exp(log_ratio(P_X)), np.exp(log_ratio(Q_X))


def shared_distribution(P_X, Q_X, ratio_bounds: tuple[float, float] = (0.1, 10.0)
                        ) -> SharedSupportSpec:
    """Uniform distribution over the P rows with q/p inside ``ratio_bounds``.

    Q rows inside the band get uniform weights too; they only feed the
    retention diagnostics.

    Raises:
        NoCommonSupportError: when no P row or no Q row is retained.
    """
    lo, hi = ratio_bounds
    if not 0 < lo < 1 < hi:
        raise ValueError("ratio bounds need 0 < r_lo < 1 < r_hi")
    rp, rq = density_ratio(P_X, Q_X)
    keep_p = (rp >= lo) & (rp <= hi)
    keep_q = (rq >= lo) & (rq <= hi)
    if not keep_p.any() or not keep_q.any():
        raise NoCommonSupportError("no common support between P and Q")
    return SharedSupportSpec(keep_p / keep_p.sum(), keep_q / keep_q.sum(),
                             (float(lo), float(hi)), rp, rq)


@dataclass(frozen=True)
class DecompositionReport:
    total_gap: float
    covariate_term: float
    concept_term: float
    oos_term: float
    raw_gap: float
    k_p: int
    k_q: int
    support: dict

    @property
    def support_related(self) -> float:
        """Covariate plus out-of-support terms."""
        return self.covariate_term + self.oos_term

    def to_dict(self) -> dict:
        out = asdict(self)
        out["support_related_term"] = self.support_related
        return out


def decompose_performance(P: LossSample, Q: LossSample, spec: SharedSupportSpec,
                          k: Optional[int] = None) -> DecompositionReport:
    """Plug-in estimate of the three-term decomposition.

    Both risk estimators measure distance in features standardized by P's
    mean and sample std. ``total_gap`` is the sum of the terms; the observed
    mean-loss difference is reported separately as ``raw_gap``.
    """
    if P.X.shape[1] != Q.X.shape[1]:
        raise ValueError("P and Q have different feature counts")
    if len(spec.p_weights) != P.n or len(spec.q_weights) != Q.n:
        raise ValueError("support weights do not match the samples")
    center, scale = P.X.mean(axis=0), sample_std(P.X)
    kp = default_k(P.n) if k is None else min(k, P.n)
    kq = default_k(Q.n) if k is None else min(k, Q.n)
    Rp = estimate_conditional_risk(P, kp, center, scale)
    Rq = estimate_conditional_risk(Q, kq, center, scale)

    S_X, w = P.X, spec.p_weights
    rp_on_s, rq_on_s = Rp(S_X), Rq(S_X)
    es_rp = float(w @ rp_on_s)
    es_rq = float(w @ rq_on_s)
    ep_rp = float(np.mean(Rp(P.X)))
    eq_rq = float(np.mean(Rq(Q.X)))

    covariate = es_rp - ep_rp
    concept = float(w @ (rq_on_s - rp_on_s))
    oos = eq_rq - es_rq
    return DecompositionReport(covariate + concept + oos, covariate, concept, oos,
                               float(Q.loss.mean() - P.loss.mean()), kp, kq, spec.summary())
