"""Command-line front end.

    shiftdiag detect REF.csv CUR.csv [--label y] [--out report.json]
    shiftdiag stream STREAM.csv --mode {ddm,windows,metrics} [--out events.jsonl]
    shiftdiag decompose P.csv Q.csv [--loss-column loss | --prediction c --outcome c --loss squared]
    shiftdiag viz REF.csv CUR.csv [--components 2] [--out-dir plots/]

Exit codes: 0 no shift detected, 1 shift or drift detected, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import CURRENT, REFERENCE, SplitPair, ValidationError, read_csv, read_table, standardize, validate
from .decompose import (LossSample, NoCommonSupportError, decompose_performance,
                        shared_distribution)
from .density import (DEFAULT_SMOOTHING, KernelSpec, default_bins, median_heuristic_bandwidth,
                      shared_histogram)
from .divergence import kl_divergence, lsdd, mmd, select_lsdd_hyperparams
from .projections import pca_project, write_ecdf_csv, write_pca_csv
from .stattests import (PERMUTATION_LSDD, PERMUTATION_MMD, classifier_two_sample_test,
                        feature_battery, permutation_test)
from .streamdrift import (DRIFT, DIVERGENCE_DRIFT, METRIC_DRIFT, METRIC_ORDER, ddm_events,
                          multi_metric_monitor, windowed_divergence_monitor)

log = logging.getLogger("shiftdiag")

EXIT_OK, EXIT_SHIFT, EXIT_ERROR = 0, 1, 2
LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0)
DRIFT_KINDS = (DRIFT, DIVERGENCE_DRIFT, METRIC_DRIFT)
SCHEMA_DIR = Path(__file__).parent / "schemas"


class UsageError(Exception):
    pass


def _json_value(v):
    """Convert numpy scalars/arrays to JSON types; refuse NaN and infinities."""
    if isinstance(v, dict):
        return {str(k): _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_json_value(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            raise ValueError("non-finite number in report")
        return v
    return v


def dumps(obj) -> str:
    return json.dumps(_json_value(obj), indent=2, sort_keys=True)


def _metadata(args, command: str, **extra) -> dict:
    meta = {
        "tool": "shiftdiag",
        "version": __version__,
        "command": command,
        "seed": args.seed,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(extra)
    return meta


def _kl_entry(ref_col, cur_col, bins, smoothing) -> dict:
    try:
        hist = shared_histogram(ref_col, cur_col, bins, smoothing)
    except ValueError:
        # pooled column is constant: both samples agree exactly
        return {"kl": 0.0, "disjoint_support": False, "bins": bins}
    kl = kl_divergence(hist)
    if math.isinf(kl):
        return {"kl": None, "disjoint_support": True, "bins": hist.bins}
    return {"kl": kl, "disjoint_support": False, "bins": hist.bins}


def _subsample(X: np.ndarray, max_rows: int, rng: np.random.Generator) -> np.ndarray:
    if len(X) <= max_rows:
        return X
    return X[np.sort(rng.choice(len(X), max_rows, replace=False))]


def build_shift_report(pair: SplitPair, args, paths: Sequence[str]) -> dict:
    """Run the static battery on ``pair`` and assemble the JSON report."""
    alpha, seed = args.alpha, args.seed
    ref, cur = pair.reference, pair.current
    n_pooled = ref.n + cur.n
    bins = args.bins or default_bins(n_pooled)

    battery = feature_battery(pair, alpha=alpha, correction=args.correction,
                              include_label=pair.has_label)
    features = {}
    for j, name in enumerate(pair.feature_names):
        entry = {"ks": battery.features[name].to_dict()}
        entry.update(_kl_entry(ref.features[:, j], cur.features[:, j], bins, args.smoothing))
        features[name] = entry

    rng = np.random.default_rng(seed)
    X = _subsample(ref.features, args.max_rows, rng)
    Y = _subsample(cur.features, args.max_rows, rng)
    pooled = np.vstack([X, Y])
    try:
        sigma = median_heuristic_bandwidth(pooled)
    except ValueError:
        sigma = 1.0
    spec = KernelSpec(sigma)
    mmd_test = permutation_test(lambda a, b: mmd(a, b, spec, args.mmd_estimator), X, Y,
                                n_perm=args.n_perm, seed=seed, alpha=alpha,
                                method=PERMUTATION_MMD)
    folds = min(5, len(X), len(Y))
    lsdd_sigma, lsdd_lambda = select_lsdd_hyperparams(X, Y, [sigma], list(LAMBDA_GRID),
                                                      folds=folds, seed=seed)
    lsdd_test = permutation_test(lambda a, b: lsdd(a, b, lsdd_sigma, lsdd_lambda, seed=seed).value,
                                 X, Y, n_perm=args.n_perm, seed=seed, alpha=alpha,
                                 method=PERMUTATION_LSDD)
    clf_test = classifier_two_sample_test(X, Y, holdout_frac=args.holdout_frac,
                                          alpha=alpha, seed=seed)

    rejections = [f"covariate:ks:{n}" for n in battery.flagged]
    for name, test in (("mmd", mmd_test), ("lsdd", lsdd_test), ("classifier", clf_test)):
        if test.reject:
            rejections.append(f"covariate:{name}")
    covariate_shift = bool(rejections)

    label_section = None
    if pair.has_label:
        label_section = {"ks": battery.label.to_dict(),
                         "shift_detected": battery.label_shift}
        label_section.update(_kl_entry(ref.label, cur.label, bins, args.smoothing))
        if battery.label_shift:
            rejections.append("label:ks")

    labels = []
    if covariate_shift:
        labels.append("covariate:static")
    if label_section and label_section["shift_detected"]:
        labels.append("label:static")

    meta = _metadata(
        args, "detect",
        inputs={"reference": str(paths[0]), "current": str(paths[1])},
        label=args.label,
        standardization="reference z-score (n-1 std)" if pair.standardized else "none",
        dropped_features=list(pair.dropped),
        histogram={"bins": bins, "binning": "equal-width over pooled range",
                   "smoothing": args.smoothing},
        settings={"alpha": alpha, "correction": args.correction,
                  "per_test_threshold": battery.threshold, "n_perm": args.n_perm,
                  "mmd_estimator": args.mmd_estimator, "kernel": "gaussian",
                  "kernel_bandwidth": sigma, "bandwidth_rule": "median heuristic",
                  "lsdd_sigma": lsdd_sigma, "lsdd_lambda": lsdd_lambda,
                  "lsdd_lambda_grid": list(LAMBDA_GRID),
                  "classifier": "l2 logistic, threshold 0.5",
                  "holdout_frac": args.holdout_frac, "max_rows": args.max_rows,
                  "rows_used": [len(X), len(Y)]},
    )
    return {
        "report_type": "shift",
        "metadata": meta,
        "covariate": {
            "features": features,
            "global": {
                "mmd": {"value": mmd_test.statistic, "test": mmd_test.to_dict()},
                "lsdd": {"value": lsdd_test.statistic, "test": lsdd_test.to_dict()},
                "classifier": clf_test.to_dict(),
            },
            "shift_detected": covariate_shift,
        },
        "label_shift": label_section,
        "concept": None,
        "taxonomy_labels": labels,
        "rejections": rejections,
    }


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text + ("" if text.endswith("\n") else "\n"))
    else:
        sys.stdout.write(text + ("" if text.endswith("\n") else "\n"))


def _load_pair(args) -> SplitPair:
    ref = read_csv(args.reference, label=args.label, source_tag=REFERENCE)
    cur = read_csv(args.current, label=args.label, source_tag=CURRENT)
    pair = SplitPair(ref, cur)
    return pair if args.no_standardize else standardize(pair)


def cmd_detect(args) -> int:
    pair = _load_pair(args)
    report = build_shift_report(pair, args, (args.reference, args.current))
    _write(dumps(report), args.out)
    return EXIT_SHIFT if report["rejections"] else EXIT_OK


def _columns(header, rows, names: Sequence[str]) -> dict[str, np.ndarray]:
    ds = validate(header, rows)
    missing = [n for n in names if n not in ds.feature_names]
    if missing:
        raise ValidationError(f"missing columns {missing}")
    return {n: ds.column(n) for n in names}


def cmd_stream(args) -> int:
    header, rows = read_table(args.stream)
    if args.mode == "ddm":
        if args.prediction and args.outcome:
            cols = _columns(header, rows, [args.prediction, args.outcome])
            errors = np.abs(cols[args.prediction] - cols[args.outcome]) > args.tolerance
        else:
            e = _columns(header, rows, [args.error_column])[args.error_column]
            if not np.all(np.isin(e, (0.0, 1.0))):
                raise ValidationError(f"column {args.error_column!r} must hold 0/1 errors")
            errors = e.astype(bool)
        events = ddm_events(errors, min_samples=args.min_samples)
    elif args.mode == "windows":
        ds = validate(header, rows)
        names = args.columns.split(",") if args.columns else list(ds.feature_names)
        X = np.column_stack(list(_columns(header, rows, names).values()))
        window = args.window or 100
        events = windowed_divergence_monitor(
            X, window, args.stride or window, metric=args.metric, alpha=args.alpha,
            n_perm=args.n_perm, seed=args.seed, baseline=args.baseline,
            bins=args.bins, smoothing=args.smoothing)
    else:
        if not (args.prediction and args.outcome):
            raise UsageError("metrics mode needs --prediction and --outcome")
        cols = _columns(header, rows, [args.prediction, args.outcome])
        metrics = args.metrics.split(",")
        result = multi_metric_monitor(
            cols[args.prediction], cols[args.outcome], args.window or 100, metrics=metrics,
            alpha=args.alpha, correction=args.correction,
            mode="serial" if args.serial else "parallel", seed=args.seed)
        for skip in result.skipped:
            log.warning("window %(window)d: %(metric)s skipped (%(reason)s)", skip)
        events = result.events
    lines = [json.dumps(_json_value(ev.to_dict()), sort_keys=True) for ev in events]
    _write("\n".join(lines), args.out)
    return EXIT_SHIFT if any(ev.kind in DRIFT_KINDS for ev in events) else EXIT_OK


LOSSES = {
    "squared": lambda pred, y: (pred - y) ** 2,
    "absolute": lambda pred, y: np.abs(pred - y),
    "zero_one": lambda pred, y: (pred != y).astype(float),
}


def _load_losses(path, args, origin: str) -> tuple[LossSample, tuple[str, ...]]:
    header, rows = read_table(path)
    ds = validate(header, rows)
    names = list(ds.feature_names)
    if args.prediction or args.outcome:
        if not (args.prediction and args.outcome and args.loss):
            raise UsageError("--prediction, --outcome and --loss go together")
        for c in (args.prediction, args.outcome):
            if c not in names:
                raise ValidationError(f"{path}: missing column {c!r}")
        loss = LOSSES[args.loss](ds.column(args.prediction), ds.column(args.outcome))
        drop = {args.prediction, args.outcome}
    else:
        if args.loss_column not in names:
            raise ValidationError(f"{path}: missing loss column {args.loss_column!r}")
        loss = ds.column(args.loss_column)
        drop = {args.loss_column}
    feats = tuple(n for n in names if n not in drop)
    if not feats:
        raise ValidationError(f"{path}: no feature columns")
    X = np.column_stack([ds.column(n) for n in feats])
    return LossSample(X, loss, origin), feats


def build_decomposition_report(P: LossSample, Q: LossSample, args, paths) -> tuple[dict, int]:
    lo, hi = args.ratio_bounds
    raw_gap = float(Q.loss.mean() - P.loss.mean())
    meta = _metadata(args, "decompose",
                     inputs={"p": str(paths[0]), "q": str(paths[1])},
                     settings={"ratio_bounds": [lo, hi], "k": args.k,
                               "risk_estimator": "k-NN on P-standardized features",
                               "shared_distribution": "uniform over P rows in ratio band",
                               "density_ratio": "l2 logistic odds x n_P/n_Q"})
    try:
        spec = shared_distribution(P.X, Q.X, (lo, hi))
    except NoCommonSupportError:
        concept = {"status": "no_common_support",
                   "decomposition": {"total_gap": raw_gap, "covariate_term": 0.0,
                                     "concept_term": 0.0, "oos_term": raw_gap,
                                     "support_related_term": raw_gap, "raw_gap": raw_gap}}
        return ({"report_type": "decomposition", "metadata": meta, "covariate": None,
                 "label_shift": None, "concept": concept,
                 "taxonomy_labels": [], "rejections": ["concept:no_common_support"]},
                EXIT_SHIFT)
    rep = decompose_performance(P, Q, spec, args.k)
    concept = {"status": "ok", "decomposition": rep.to_dict()}
    return ({"report_type": "decomposition", "metadata": meta, "covariate": None,
             "label_shift": None, "concept": concept, "taxonomy_labels": [],
             "rejections": []}, EXIT_OK)


def cmd_decompose(args) -> int:
    P, fp = _load_losses(args.p_losses, args, "P")
    Q, fq = _load_losses(args.q_losses, args, "Q")
    if fp != fq:
        raise ValidationError(f"feature columns differ: {list(fp)} vs {list(fq)}")
    report, code = build_decomposition_report(P, Q, args, (args.p_losses, args.q_losses))
    _write(dumps(report), args.out)
    d = report["concept"]["decomposition"]
    print(f"total_gap={d['total_gap']:.6g} covariate={d['covariate_term']:.6g} "
          f"concept={d['concept_term']:.6g} out_of_support={d['oos_term']:.6g}",
          file=sys.stderr)
    return code


def cmd_viz(args) -> int:
    pair = _load_pair(args)
    d = len(pair.feature_names)
    c = args.components if args.components is not None else min(2, d)
    if c > d:
        raise UsageError(f"--components {c} exceeds the {d} available features")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pca_csv(pca_project(pair, c), out / "pca.csv")
    write_ecdf_csv(pair, out / "ecdf.csv")
    return EXIT_OK


def _ratio_bounds(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected two numbers, e.g. 0.1,10") from None
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shiftdiag",
                                description="Detect and diagnose dataset shift.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--out", help="output file (default: stdout)")

    d = sub.add_parser("detect", parents=[common], help="static covariate/label shift report")
    d.add_argument("reference")
    d.add_argument("current")
    d.add_argument("--label", help="name of the label column")
    d.add_argument("--bins", type=int, help="histogram bins (default ceil(sqrt(n)) in [8, 64])")
    d.add_argument("--smoothing", type=float, default=DEFAULT_SMOOTHING)
    d.add_argument("--n-perm", type=int, default=199)
    d.add_argument("--correction", choices=("bonferroni", "none"), default="bonferroni")
    d.add_argument("--mmd-estimator", choices=("biased", "unbiased"), default="biased")
    d.add_argument("--holdout-frac", type=float, default=0.3)
    d.add_argument("--max-rows", type=int, default=1000,
                   help="rows per sample used by the kernel and classifier tests")
    d.add_argument("--no-standardize", action="store_true")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("stream", parents=[common], help="streaming drift monitors")
    s.add_argument("stream")
    s.add_argument("--mode", choices=("ddm", "windows", "metrics"), default="ddm")
    s.add_argument("--error-column", default="error")
    s.add_argument("--prediction")
    s.add_argument("--outcome")
    s.add_argument("--tolerance", type=float, default=0.0,
                   help="ddm: |prediction - outcome| above this counts as an error")
    s.add_argument("--min-samples", type=int, default=30)
    s.add_argument("--window", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--columns", help="windows mode: comma-separated feature columns")
    s.add_argument("--metric", choices=("kl", "mmd", "lsdd"), default="mmd")
    s.add_argument("--baseline", choices=("fixed", "sliding"), default="fixed")
    s.add_argument("--n-perm", type=int, default=199)
    s.add_argument("--bins", type=int)
    s.add_argument("--smoothing", type=float, default=DEFAULT_SMOOTHING)
    s.add_argument("--metrics", default=",".join(METRIC_ORDER))
    s.add_argument("--serial", action="store_true", help="metrics mode: stop at first rejection")
    s.add_argument("--correction", choices=("bonferroni", "none"), default="bonferroni")
    s.set_defaults(func=cmd_stream)

    c = sub.add_parser("decompose", parents=[common], help="performance-gap decomposition")
    c.add_argument("p_losses")
    c.add_argument("q_losses")
    c.add_argument("--loss-column", default="loss")
    c.add_argument("--prediction")
    c.add_argument("--outcome")
    c.add_argument("--loss", choices=sorted(LOSSES))
    c.add_argument("--ratio-bounds", type=_ratio_bounds, default=(0.1, 10.0))
    c.add_argument("--k", type=int, help="neighbours for the risk estimates (default ceil(sqrt(n)))")
    c.set_defaults(func=cmd_decompose)

    v = sub.add_parser("viz", parents=[common], help="PCA and ECDF plot data")
    v.add_argument("reference")
    v.add_argument("current")
    v.add_argument("--label")
    v.add_argument("--components", type=int)
    v.add_argument("--out-dir", default=".")
    v.add_argument("--no-standardize", action="store_true")
    v.set_defaults(func=cmd_viz)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (OSError, ValueError, UsageError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
