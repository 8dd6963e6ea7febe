"""Data model, validation and reference-based standardization.

Every detector in the package consumes a :class:`SplitPair`: a reference
(training) :class:`Dataset` and a current (deployment) one with identical
feature columns.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

REFERENCE = "reference"
CURRENT = "current"


class ValidationError(ValueError):
    """Raised when a raw table cannot be turned into a :class:`Dataset`.

    ``problems`` holds one human-readable entry per offending cell or column.
    """

    def __init__(self, message: str, problems: Sequence[str] = ()):
        self.problems = list(problems)
        if self.problems:
            message = message + ": " + "; ".join(self.problems[:20])
            if len(self.problems) > 20:
                message += f"; ... ({len(self.problems) - 20} more)"
        super().__init__(message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    feature_names: tuple[str, ...]
    label: Optional[np.ndarray] = None
    source_tag: str = REFERENCE
    label_name: Optional[str] = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        n, d = X.shape
        if n < 1:
            raise ValidationError("empty dataset")
        if d < 1:
            raise ValidationError("dataset has no feature columns")
        names = tuple(self.feature_names)
        if len(names) != d:
            raise ValidationError(f"{len(names)} feature names for {d} columns")
        if len(set(names)) != d:
            raise ValidationError("duplicate feature names", _duplicates(names))
        if not np.all(np.isfinite(X)):
            raise ValidationError("non-finite feature values", _bad_cells(X, names))
        if self.source_tag not in (REFERENCE, CURRENT):
            raise ValidationError(f"unknown source tag {self.source_tag!r}")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "feature_names", names)
        if self.label is not None:
            y = np.asarray(self.label, dtype=float).reshape(-1)
            if y.shape[0] != n:
                raise ValidationError(f"label has {y.shape[0]} rows, features have {n}")
            if not np.all(np.isfinite(y)):
                raise ValidationError("non-finite label values")
            object.__setattr__(self, "label", _frozen(y))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_label(self) -> bool:
        return self.label is not None

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_names.index(name)]


@dataclass(frozen=True)
class SplitPair:
    """Reference/current pairing.

    ``dropped`` lists reference features removed for having zero variance and
    ``standardized`` records whether reference statistics were applied.
    """

    reference: Dataset
    current: Dataset
    dropped: tuple[str, ...] = ()
    standardized: bool = False
    center: Optional[np.ndarray] = field(default=None, repr=False)
    scale: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.reference.feature_names != self.current.feature_names:
            raise ValidationError(
                "reference and current feature columns differ",
                [f"reference={list(self.reference.feature_names)}",
                 f"current={list(self.current.feature_names)}"],
            )
        if self.reference.has_label != self.current.has_label:
            raise ValidationError("label must be present in both datasets or neither")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.reference.feature_names

    @property
    def has_label(self) -> bool:
        return self.reference.has_label


def _duplicates(names: Sequence[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for j, name in enumerate(names):
        if name in seen:
            out.append(f"column {j} duplicates {name!r} (column {seen[name]})")
        else:
            seen[name] = j
    return out


def _bad_cells(X: np.ndarray, names: Sequence[str]) -> list[str]:
    rows, cols = np.nonzero(~np.isfinite(X))
    return [f"row {r}, column {names[c]!r}: {X[r, c]}" for r, c in zip(rows, cols)]


def validate(header: Sequence[str], rows: Sequence[Sequence[object]],
             label: Optional[str] = None, source_tag: str = REFERENCE) -> Dataset:
    """Turn a parsed table into a :class:`Dataset`.

    ``rows`` may hold strings (as read from CSV) or numbers. Row numbers in
    error messages are 0-based data rows, excluding the header.

    Raises:
        ValidationError: empty table, duplicate or missing column names,
            ragged rows, non-numeric cells, NaN or infinite values.
    """
    header = [str(h).strip() for h in header]
    if not header:
        raise ValidationError("table has no columns")
    dups = _duplicates(header)
    if dups:
        raise ValidationError("duplicate feature names", dups)
    if len(rows) == 0:
        raise ValidationError("empty dataset")
    if label is not None and label not in header:
        raise ValidationError(f"label column {label!r} not found", [f"columns={header}"])

    problems = []
    values = np.empty((len(rows), len(header)), dtype=float)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            problems.append(f"row {i}: expected {len(header)} cells, got {len(row)}")
            continue
        for j, cell in enumerate(row):
            try:
                v = float(cell.strip() if isinstance(cell, str) else cell)
            except (TypeError, ValueError):
                problems.append(f"row {i}, column {header[j]!r}: non-numeric value {cell!r}")
                continue
            if not math.isfinite(v):
                problems.append(f"row {i}, column {header[j]!r}: {cell!r} is not finite")
            values[i, j] = v
    if problems:
        raise ValidationError("invalid table", problems)

    if label is None:
        return Dataset(values, tuple(header), None, source_tag)
    j = header.index(label)
    keep = [c for c in range(len(header)) if c != j]
    if not keep:
        raise ValidationError("no feature columns besides the label")
    return Dataset(values[:, keep], tuple(header[c] for c in keep), values[:, j],
                   source_tag, label_name=label)


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV file with a header row; blank lines are skipped."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: file is empty") from None
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    return header, rows


def read_csv(path: str | Path, label: Optional[str] = None,
             source_tag: str = REFERENCE) -> Dataset:
    header, rows = read_table(path)
    try:
        return validate(header, rows, label=label, source_tag=source_tag)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def sample_std(X: np.ndarray) -> np.ndarray:
    """Column standard deviations with the n-1 denominator (0 when n == 1)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        return np.zeros(X.shape[1:])
    return X.std(axis=0, ddof=1)


def standardize(pair: SplitPair) -> SplitPair:
    """Rescale both datasets by reference mean and sample std.

    Features whose reference column is constant are dropped from both
    datasets and listed in ``dropped``. The label, if any, is left untouched.
    """
    ref, cur = pair.reference, pair.current
    mu = ref.features.mean(axis=0)
    sd = sample_std(ref.features)
    keep = sd > 0
    dropped = tuple(n for n, k in zip(ref.feature_names, keep) if not k)
    if not keep.any():
        raise ValidationError("every reference feature is constant", list(dropped))
    names = tuple(n for n, k in zip(ref.feature_names, keep) if k)
    mu, sd = mu[keep], sd[keep]
    new_ref = replace(ref, features=(ref.features[:, keep] - mu) / sd, feature_names=names)
    new_cur = replace(cur, features=(cur.features[:, keep] - mu) / sd, feature_names=names)
    return SplitPair(new_ref, new_cur, dropped=pair.dropped + dropped, standardized=True,
                     center=_frozen(mu), scale=_frozen(sd))
