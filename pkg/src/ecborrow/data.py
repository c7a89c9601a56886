"""Unified sample table for trial and external-control data, plus CSV I/O.

A :class:`Dataset` holds covariates ``X``, binary treatment ``a``, outcome
``y`` and a binary source flag ``r`` (1 = randomized trial, 0 = external
control).  External-control rows must be untreated.  All arrays are made
read-only on construction so datasets can be shared freely across threads.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .validation import ValidationError, readonly

__all__ = [
    "Dataset",
    "DataSplit",
    "Schema",
    "StandardizeRecord",
    "load_csv",
    "write_csv",
    "standardize",
    "destandardize",
    "split",
]


@dataclass(frozen=True)
class Schema:
    """Column-role mapping used by :func:`load_csv`.

    ``covariates`` lists covariate column names in order; ``treatment``,
    ``outcome`` and ``source`` name single columns.
    """

    covariates: tuple[str, ...]
    treatment: str
    outcome: str
    source: str

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            return cls(
                covariates=tuple(d["covariates"]),
                treatment=str(d["treatment"]),
                outcome=str(d["outcome"]),
                source=str(d["source"]),
            )
        except KeyError as e:  # pragma: no cover - trivial
            raise ValidationError(f"schema is missing key {e}") from e

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "treatment": self.treatment,
            "outcome": self.outcome,
            "source": self.source,
        }


@dataclass(frozen=True)
class Dataset:
    """Immutable sample table (covariates, treatment, outcome, source)."""

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    source: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        a = np.asarray(self.treatment, dtype=float).ravel()
        y = np.asarray(self.outcome, dtype=float).ravel()
        r = np.asarray(self.source, dtype=float).ravel()
        n = X.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one row")
        if not (len(a) == len(y) == len(r) == n):
            raise ValidationError(
                f"row counts differ: X={n}, a={len(a)}, y={len(y)}, r={len(r)}"
            )
        for name, v in (("treatment", a), ("source", r)):
            if not np.isin(v, (0.0, 1.0)).all():
                raise ValidationError(f"{name} must be binary 0/1")
        for name, v in (("covariates", X), ("outcome", y)):
            if not np.isfinite(v).all():
                raise ValidationError(f"{name} contains non-finite values")
        bad = (r == 0) & (a == 1)
        if bad.any():
            raise ValidationError(
                f"EC row is treated: row(s) {np.where(bad)[0][:5].tolist()} "
                "have source=0 and treatment=1"
            )
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValidationError("column_names length does not match covariates")
        object.__setattr__(self, "covariates", readonly(X))
        object.__setattr__(self, "treatment", readonly(a))
        object.__setattr__(self, "outcome", readonly(y))
        object.__setattr__(self, "source", readonly(r))
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def with_outcome(self, y: np.ndarray) -> "Dataset":
        """Copy of the dataset with a replaced outcome vector."""
        return Dataset(self.covariates, self.treatment, y, self.source,
                       self.column_names)

    def with_covariates(self, X: np.ndarray, names: tuple[str, ...] = ()) -> "Dataset":
        return Dataset(X, self.treatment, self.outcome, self.source, names)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.covariates[idx], self.treatment[idx],
                       self.outcome[idx], self.source[idx], self.column_names)


@dataclass(frozen=True)
class DataSplit:
    """Index partition of a dataset into trial, trial-control and EC rows."""

    rct_indices: np.ndarray
    rct_control_indices: np.ndarray
    ec_indices: np.ndarray
    n_rct: int
    n_control: int
    n_ec: int


def split(ds: Dataset, enforce_min_controls: bool = True) -> DataSplit:
    """Partition row indices by source and arm.

    With ``enforce_min_controls`` (the default for every estimation path)
    this raises when there are fewer than ``d + 2`` trial controls, the
    minimum needed to fit the control outcome model with an intercept.
    """
    r = ds.source
    a = ds.treatment
    rct = np.where(r == 1)[0]
    ctrl = np.where((r == 1) & (a == 0))[0]
    ec = np.where(r == 0)[0]
    if enforce_min_controls and len(ctrl) < ds.d + 2:
        raise ValidationError(
            f"too few RCT controls: {len(ctrl)} < d+2 = {ds.d + 2}"
        )
    return DataSplit(
        rct_indices=readonly(rct),
        rct_control_indices=readonly(ctrl),
        ec_indices=readonly(ec),
        n_rct=len(rct),
        n_control=len(ctrl),
        n_ec=len(ec),
    )


def _parse_cell(text: str, column: str, line_no: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(
            f"non-numeric cell {text!r} in column {column!r} at line {line_no}"
        ) from None
    if not np.isfinite(v):
        raise ValidationError(
            f"non-finite cell {text!r} in column {column!r} at line {line_no}"
        )
    return v


def load_csv(path, schema: Schema) -> Dataset:
    """Load a dataset from a headered CSV file using a column-role schema.

    Rows violating invariants (missing column, non-numeric cell, treated EC
    row) raise; nothing is silently dropped.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"empty file: {path}") from None
        header = [h.strip() for h in header]
        col = {name: i for i, name in enumerate(header)}
        needed = list(schema.covariates) + [schema.treatment, schema.outcome,
                                            schema.source]
        missing = [c for c in needed if c not in col]
        if missing:
            raise ValidationError(f"missing column(s) {missing} in {path}")
        rows = []
        for line_no, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) < len(header):
                raise ValidationError(f"short row at line {line_no} in {path}")
            rows.append([_parse_cell(raw[col[c]], c, line_no) for c in needed])
    if not rows:
        raise ValidationError(f"no data rows in {path}")
    table = np.asarray(rows, dtype=float)
    d = len(schema.covariates)
    return Dataset(
        covariates=table[:, :d],
        treatment=table[:, d],
        outcome=table[:, d + 1],
        source=table[:, d + 2],
        column_names=tuple(schema.covariates),
    )


def write_csv(path, ds: Dataset, schema: Schema | None = None) -> None:
    """Write a dataset back to CSV; finite doubles round-trip bit-exactly."""
    if schema is None:
        schema = Schema(ds.column_names, "treatment", "outcome", "source")
    header = list(schema.covariates) + [schema.treatment, schema.outcome,
                                        schema.source]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.covariates[i]]
            row.append(repr(float(ds.treatment[i])))
            row.append(repr(float(ds.outcome[i])))
            row.append(repr(float(ds.source[i])))
            w.writerow(row)


@dataclass(frozen=True)
class StandardizeRecord:
    """Per-column mean/scale transform record; sufficient to invert."""

    columns: tuple[int, ...]
    names: tuple[str, ...]
    means: np.ndarray
    scales: np.ndarray

    def to_json(self) -> str:
        entries = [
            {"column": n, "mean": m, "scale": s}
            for n, m, s in zip(self.names, self.means, self.scales)
        ]
        return json.dumps(entries, indent=2)


def binary_columns(ds: Dataset) -> list[int]:
    """Columns whose values all lie in {0, 1} (left unstandardized)."""
    X = ds.covariates
    return [j for j in range(ds.d) if np.isin(X[:, j], (0.0, 1.0)).all()]


def continuous_columns(ds: Dataset) -> list[int]:
    """Non-binary, non-constant columns, the default standardization set."""
    X = ds.covariates
    out = []
    binary = set(binary_columns(ds))
    for j in range(ds.d):
        if j in binary:
            continue
        if np.std(X[:, j], ddof=1) if ds.n > 1 else 0.0:
            out.append(j)
    return out


def standardize(ds: Dataset, columns) -> tuple[Dataset, StandardizeRecord]:
    """Center and scale the selected columns to sample mean 0, sample sd 1."""
    columns = [int(c) for c in columns]
    X = ds.covariates.copy()
    means = np.empty(len(columns))
    scales = np.empty(len(columns))
    for k, j in enumerate(columns):
        if j < 0 or j >= ds.d:
            raise ValidationError(f"column index {j} out of range")
        m = X[:, j].mean()
        s = X[:, j].std(ddof=1) if ds.n > 1 else 0.0
        if s == 0.0:
            raise ValidationError(
                f"constant column selected for standardization: {ds.column_names[j]!r}"
            )
        X[:, j] = (X[:, j] - m) / s
        means[k], scales[k] = m, s
    rec = StandardizeRecord(
        columns=tuple(columns),
        names=tuple(ds.column_names[j] for j in columns),
        means=readonly(means),
        scales=readonly(scales),
    )
    return ds.with_covariates(X, ds.column_names), rec


def destandardize(ds: Dataset, rec: StandardizeRecord) -> Dataset:
    """Invert :func:`standardize` using its transform record."""
    X = ds.covariates.copy()
    for j, m, s in zip(rec.columns, rec.means, rec.scales):
        X[:, j] = X[:, j] * s + m
    return ds.with_covariates(X, ds.column_names)
