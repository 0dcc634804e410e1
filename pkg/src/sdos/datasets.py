"""CSV loading for the regression models."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, ParseError

FORMAT_KINDS = ("ionosphere", "concrete")
_LABELS = {"good": 1.0, "g": 1.0, "1": 1.0, "bad": 0.0, "b": 0.0, "0": 0.0}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, target vector and column names (target column last)."""

    features: np.ndarray
    target: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.target.shape[0]:
            raise ValueError("features and target disagree on the number of rows")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


def standardize_columns(X: np.ndarray) -> np.ndarray:
    """Center each column and scale it to unit variance.

    Constant columns are centered only.
    """
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mean) / sd


def load_dataset(path, format_kind: str, standardize: bool = True) -> Dataset:
    """Load a comma-separated file whose last column is the target.

    The first row must be a header. For ``ionosphere`` files the target is a
    class label mapped good/g -> 1 and bad/b -> 0; for ``concrete`` files
    it is numeric and is standardized along with the features when
    ``standardize`` is set.

    Raises:
        ParseError: with the 1-based file row (header is row 1) and column.
        EmptyDataset: if there are no data rows.
    """
    if format_kind not in FORMAT_KINDS:
        raise ValueError(f"unknown format {format_kind!r}; expected one of {FORMAT_KINDS}")
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyDataset(f"{path}: file is empty")
    header = tuple(h.strip() for h in rows[0])
    if len(header) < 2:
        raise ParseError("header needs at least one feature and a target", row=1)
    features, target = [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=line_no)
        values = []
        for col_no, cell in enumerate(row[:-1], start=1):
            values.append(_parse_number(cell, line_no, col_no))
        label = row[-1].strip()
        if format_kind == "ionosphere":
            if label.lower() not in _LABELS:
                raise ParseError(f"unknown class label {label!r}", row=line_no, column=len(row))
            target.append(_LABELS[label.lower()])
        else:
            target.append(_parse_number(label, line_no, len(row)))
        features.append(values)
    if not features:
        raise EmptyDataset(f"{path}: no data rows")
    X = np.array(features, dtype=float)
    y = np.array(target, dtype=float)
    if standardize:
        X = standardize_columns(X)
        if format_kind == "concrete":
            y = standardize_columns(y[:, None])[:, 0]
    return Dataset(X, y, header)


def _parse_number(cell: str, row: int, column: int) -> float:
    try:
        value = float(cell.strip())
    except ValueError:
        raise ParseError(f"cannot parse {cell!r} as a number", row=row, column=column) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite value {cell!r}", row=row, column=column)
    return value
