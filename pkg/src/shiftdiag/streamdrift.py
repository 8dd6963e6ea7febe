"""Streaming drift monitors.

* :func:`ddm_update` / :class:`DdmMonitor` - error-rate monitoring with
  warning and drift levels two and three standard deviations above the
  historical minimum of p_t + s_t.
* :func:`windowed_divergence_monitor` - permutation-calibrated distance
  between a baseline window and later windows of feature rows.
* :func:`multi_metric_monitor` - bootstrap tests on error rate, AUC and F1
  per window, in parallel or serially.

p_t is the error rate over every observation since the last reset (landmark
window), not over a sliding window.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .density import KernelSpec, median_heuristic_bandwidth, shared_histogram
from .divergence import kl_divergence, lsdd, mmd
from .stattests import (PERMUTATION_KL, PERMUTATION_LSDD, PERMUTATION_MMD,
                        per_test_threshold, permutation_test)

STABLE, WARNING, DRIFT = "stable", "warning", "drift"
DIVERGENCE_DRIFT, METRIC_DRIFT = "divergence-drift", "metric-drift"
DEFAULT_MIN_SAMPLES = 30
METRIC_ORDER = ("error_rate", "auc", "f1")


@dataclass(frozen=True)
class DdmState:
    i: int = 0
    error_count: int = 0
    p_t: float = 0.0
    s_t: float = 0.0
    p_min: float = math.inf
    s_min: float = math.inf
    status: str = STABLE
    min_samples: int = DEFAULT_MIN_SAMPLES

    def reset(self) -> "DdmState":
        return DdmState(min_samples=self.min_samples)


@dataclass(frozen=True)
class DriftEvent:
    index: int
    kind: str
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("event index starts at 1")

    def to_dict(self) -> dict:
        return asdict(self)


def ddm_update(state: DdmState, is_error: bool) -> tuple[DdmState, str]:
    """Fold one prediction outcome into the detector state.

    Alarms need ``min_samples`` observations since the last reset and a value
    of p_t + s_t strictly above the tracked minimum; the second condition
    keeps an error-free stream (p_min = s_min = 0) from alarming on itself.
    """
    i = state.i + 1
    errors = state.error_count + (1 if is_error else 0)
    p = errors / i
    s = math.sqrt(p * (1.0 - p) / i)
    p_min, s_min = state.p_min, state.s_min
    status = STABLE
    if i >= state.min_samples:
        if p + s < p_min + s_min:
            p_min, s_min = p, s
        level = p + s
        if level > p_min + s_min:
            if level >= p_min + 3.0 * s_min:
                status = DRIFT
            elif level >= p_min + 2.0 * s_min:
                status = WARNING
    new = replace(state, i=i, error_count=errors, p_t=p, s_t=s,
                  p_min=p_min, s_min=s_min, status=status)
    return new, status


class DdmMonitor:
    """Runs :func:`ddm_update` over a stream, resetting after each drift.

    Emits a ``warning`` event when the state enters warning and a ``drift``
    event (with the reset index) on drift. Indices are 1-based positions in
    the whole stream.
    """

    def __init__(self, min_samples: int = DEFAULT_MIN_SAMPLES):
        self.state = DdmState(min_samples=min_samples)
        self.t = 0
        self.events: list[DriftEvent] = []
        self.resets: list[int] = []

    def update(self, is_error: bool) -> str:
        prev = self.state.status
        self.state, status = ddm_update(self.state, is_error)
        self.t += 1
        detail = {"p_t": self.state.p_t, "s_t": self.state.s_t,
                  "p_min": self.state.p_min, "s_min": self.state.s_min,
                  "i": self.state.i}
        if status == WARNING and prev == STABLE:
            self.events.append(DriftEvent(self.t, WARNING, detail))
        elif status == DRIFT:
            if prev == STABLE:
                # drift threshold implies warning threshold
                self.events.append(DriftEvent(self.t, WARNING, detail))
            self.events.append(DriftEvent(self.t, DRIFT, detail))
            self.resets.append(self.t)
            self.state = self.state.reset()
        return status

    def run(self, errors: Iterable) -> list[DriftEvent]:
        for e in errors:
            self.update(bool(e))
        return self.events


def ddm_events(errors: Iterable, min_samples: int = DEFAULT_MIN_SAMPLES) -> list[DriftEvent]:
    return DdmMonitor(min_samples).run(errors)


# --------------------------------------------------------------------------
# Windowed distribution monitor
# --------------------------------------------------------------------------

def window_bounds(n: int, window: int, stride: int) -> list[tuple[int, int]]:
    """(start, stop) of every complete window; window 0 is the baseline."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    return [(s, s + window) for s in range(0, n - window + 1, stride)]


def _kl_stat(bins, smoothing):
    def stat(X, Y):
        total = 0.0
        for j in range(X.shape[1]):
            try:
                total += kl_divergence(shared_histogram(X[:, j], Y[:, j], bins, smoothing))
            except ValueError:
                # a constant column in both windows carries no evidence
                continue
        return total
    return stat


def _divergence_statistic(metric: str, baseline: np.ndarray, win: np.ndarray,
                          bins: Optional[int], smoothing: float, lam: float, seed: int):
    pooled = np.vstack([baseline, win])
    if metric == "kl":
        return _kl_stat(bins, smoothing), PERMUTATION_KL
    try:
        sigma = median_heuristic_bandwidth(pooled)
    except ValueError:
        sigma = 1.0
    if metric == "mmd":
        spec = KernelSpec(sigma)
        return (lambda X, Y: mmd(X, Y, spec)), PERMUTATION_MMD
    if metric == "lsdd":
        return (lambda X, Y: lsdd(X, Y, sigma, lam, seed=seed).value), PERMUTATION_LSDD
    raise ValueError(f"unknown metric {metric!r}")


def windowed_divergence_monitor(stream, window: int, stride: Optional[int] = None,
                                metric: str = "mmd", alpha: float = 0.05,
                                n_perm: int = 199, seed: int = 0,
                                baseline: str = "fixed", bins: Optional[int] = None,
                                smoothing: float = 0.5, lam: float = 1e-2
                                ) -> list[DriftEvent]:
    """Test each window against a baseline window with a permutation test.

    Window 0 is the first baseline. With ``baseline="sliding"`` every tested
    window becomes the baseline for the next one. Event indices are window
    numbers (1, 2, ...). KL is the sum of per-feature histogram KL values.
    """
    X = np.asarray(stream, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    stride = window if stride is None else stride
    if window < 20:
        raise ValueError("window must be at least 20 rows")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if baseline not in ("fixed", "sliding"):
        raise ValueError(f"unknown baseline policy {baseline!r}")
    if alpha <= 1.0 / (n_perm + 1):
        raise ValueError(f"alpha={alpha} is unreachable: the smallest permutation "
                         f"p-value with n_perm={n_perm} is {1.0 / (n_perm + 1):.4g}")
    bounds = window_bounds(len(X), window, stride)
    if len(bounds) < 2:
        raise ValueError(f"stream of {len(X)} rows is shorter than 2 windows of {window}")
    events = []
    base = X[bounds[0][0]:bounds[0][1]]
    for w, (a, b) in enumerate(bounds[1:], start=1):
        cur = X[a:b]
        stat, method = _divergence_statistic(metric, base, cur, bins, smoothing, lam, seed)
        res = permutation_test(stat, base, cur, n_perm=n_perm, seed=seed + w,
                               alpha=alpha, method=method)
        if res.reject:
            events.append(DriftEvent(w, DIVERGENCE_DRIFT, {
                "metric": metric, "statistic": res.statistic, "p_value": res.p_value,
                "start": a, "stop": b}))
        if baseline == "sliding":
            base = cur
    return events


# --------------------------------------------------------------------------
# Multi-metric monitor
# --------------------------------------------------------------------------

def error_rate(pred, outcome, threshold: float = 0.5) -> float:
    return float(np.mean((np.asarray(pred) >= threshold).astype(int) != np.asarray(outcome)))


def f1_score(pred, outcome, threshold: float = 0.5) -> float:
    yhat = np.asarray(pred) >= threshold
    y = np.asarray(outcome) == 1
    tp = np.sum(yhat & y)
    denom = 2 * tp + np.sum(yhat & ~y) + np.sum(~yhat & y)
    return float(2 * tp / denom) if denom else 0.0


def auc_score(score, outcome) -> float:
    """Mann-Whitney AUC with ties counted as 1/2; NaN if only one class."""
    score = np.asarray(score, dtype=float)
    y = np.asarray(outcome) == 1
    n1, n0 = int(y.sum()), int((~y).sum())
    if n1 == 0 or n0 == 0:
        return math.nan
    ranks = rankdata(score)
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


METRICS = {"error_rate": error_rate, "auc": auc_score, "f1": f1_score}


def bootstrap_change_pvalue(metric, base: tuple[np.ndarray, np.ndarray],
                            cur: tuple[np.ndarray, np.ndarray], n_boot: int,
                            rng: np.random.Generator) -> tuple[float, float]:
    """Observed change metric(cur) - metric(base) and its two-sided bootstrap p.

    Each window is resampled with replacement on its own; p is twice the
    smaller add-one tail mass of the resampled changes on either side of 0.
    """
    observed = metric(*cur) - metric(*base)
    nb, nc = len(base[0]), len(cur[0])
    diffs = np.empty(n_boot)
    for r in range(n_boot):
        ib = rng.integers(0, nb, nb)
        ic = rng.integers(0, nc, nc)
        diffs[r] = metric(cur[0][ic], cur[1][ic]) - metric(base[0][ib], base[1][ib])
    diffs = diffs[np.isfinite(diffs)]
    if diffs.size == 0:
        return observed, 1.0
    lo = (1 + np.sum(diffs <= 0)) / (diffs.size + 1)
    hi = (1 + np.sum(diffs >= 0)) / (diffs.size + 1)
    return observed, float(min(1.0, 2.0 * min(lo, hi)))


@dataclass
class MetricMonitorResult:
    events: list[DriftEvent]
    skipped: list[dict]
    threshold: float


def multi_metric_monitor(predictions, outcomes, window: int,
                         metrics: Sequence[str] = METRIC_ORDER, alpha: float = 0.05,
                         correction: str = "bonferroni", mode: str = "parallel",
                         n_boot: int = 500, seed: int = 0) -> MetricMonitorResult:
    """Bootstrap tests of per-window metric changes against window 0.

    ``predictions`` are scores in [0, 1] (hard 0/1 labels also work); error
    rate and F1 threshold them at 0.5, AUC ranks them. In serial mode the
    metrics are tried in the order error_rate, auc, f1 and testing a window
    stops at the first rejection. A window holding a single class skips AUC
    and the skip is recorded in ``skipped``.
    """
    pred = np.asarray(predictions, dtype=float).reshape(-1)
    y = np.asarray(outcomes, dtype=float).reshape(-1)
    if pred.shape != y.shape:
        raise ValueError("predictions and outcomes differ in length")
    if window < 30:
        raise ValueError("metric windows need at least 30 rows")
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    if mode not in ("parallel", "serial"):
        raise ValueError(f"unknown mode {mode!r}")
    if {"auc", "f1"} & set(metrics) and not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("auc and f1 need binary 0/1 outcomes")
    ordered = [m for m in METRIC_ORDER if m in metrics]
    thr = per_test_threshold(alpha, len(ordered), correction)
    bounds = window_bounds(len(y), window, window)
    if len(bounds) < 2:
        raise ValueError("need at least 2 complete windows")
    a0, b0 = bounds[0]
    base = (pred[a0:b0], y[a0:b0])
    events, skipped = [], []
    for w, (a, b) in enumerate(bounds[1:], start=1):
        cur = (pred[a:b], y[a:b])
        for name in ordered:
            if name == "auc" and (len(np.unique(cur[1])) < 2 or len(np.unique(base[1])) < 2):
                skipped.append({"window": w, "metric": name, "reason": "single class"})
                continue
            rng = np.random.default_rng([seed, w, METRIC_ORDER.index(name)])
            change, p = bootstrap_change_pvalue(METRICS[name], base, cur, n_boot, rng)
            if p < thr:
                events.append(DriftEvent(w, METRIC_DRIFT, {
                    "metric": name, "change": change, "p_value": p, "threshold": thr}))
                if mode == "serial":
                    break
    return MetricMonitorResult(events, skipped, thr)
