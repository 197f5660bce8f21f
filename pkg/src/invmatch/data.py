"""Per-environment datasets and their CSV interchange format.

CSV layout: header ``env,x1,...,xd[,y]``, one sample per row, UTF-8, ``.`` as
decimal separator.  Rows of one environment need not be contiguous; reading
groups them by first appearance and remembers the original row positions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .errors import SchemaError


@dataclass(frozen=True)
class EnvDataset:
    env_label: Hashable
    X: np.ndarray
    Y: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"X must be a non-empty n x d matrix, got shape {X.shape}")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.Y is not None:
            Y = np.array(self.Y, dtype=float).reshape(-1)
            if Y.shape[0] != X.shape[0]:
                raise ValueError(f"Y has {Y.shape[0]} rows but X has {X.shape[0]}")
            Y.setflags(write=False)
            object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def has_y(self) -> bool:
        return self.Y is not None

    def without_y(self) -> "EnvDataset":
        return EnvDataset(self.env_label, self.X)


def pooled_X(datasets: Sequence[EnvDataset]) -> np.ndarray:
    return np.vstack([ds.X for ds in datasets])


def pooled_Y(datasets: Sequence[EnvDataset]) -> np.ndarray:
    if any(ds.Y is None for ds in datasets):
        raise ValueError("every dataset needs a response column")
    return np.concatenate([ds.Y for ds in datasets])


def env_column(datasets: Sequence[EnvDataset]) -> list:
    return [ds.env_label for ds in datasets for _ in range(ds.n)]


def check_dims(datasets: Sequence[EnvDataset]) -> int:
    if not datasets:
        raise ValueError("need at least one dataset")
    d = datasets[0].d
    for ds in datasets:
        if ds.d != d:
            raise ValueError(f"environment {ds.env_label!r} has {ds.d} predictors, expected {d}")
    return d


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(datasets: Sequence[EnvDataset], path, include_y: bool | None = None) -> int:
    """Write datasets in order; returns the number of data rows written."""
    d = check_dims(datasets)
    if include_y is None:
        include_y = all(ds.has_y for ds in datasets)
    header = ["env"] + [f"x{j + 1}" for j in range(d)] + (["y"] if include_y else [])
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for ds in datasets:
            for i in range(ds.n):
                row = [str(ds.env_label)] + [_fmt(v) for v in ds.X[i]]
                if include_y:
                    row.append(_fmt(ds.Y[i]))
                w.writerow(row)
                rows += 1
    return rows


@dataclass(frozen=True)
class CsvTable:
    """Datasets read from one CSV plus, per dataset, the original row indices."""

    datasets: list
    row_index: list
    n_rows: int

    @property
    def d(self) -> int:
        return self.datasets[0].d

    @property
    def has_y(self) -> bool:
        return self.datasets[0].has_y

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Map values in pooled (grouped) order back to the file's row order."""
        out = np.empty(self.n_rows)
        out[np.concatenate(self.row_index)] = values
        return out

    def env_per_row(self) -> list:
        labels = [None] * self.n_rows
        for ds, idx in zip(self.datasets, self.row_index):
            for i in idx:
                labels[i] = ds.env_label
        return labels


def read_csv(path) -> CsvTable:
    """Read a dataset CSV; environment labels are kept as strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "env":
            raise SchemaError(f"{path}: first column must be 'env'")
        has_y = header[-1] == "y"
        xcols = header[1:-1] if has_y else header[1:]
        expected = [f"x{j + 1}" for j in range(len(xcols))]
        if not xcols or xcols != expected:
            raise SchemaError(f"{path}: predictor columns must be x1..xd, got {xcols}")
        width = len(header)
        groups: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise SchemaError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            groups.setdefault(row[0], []).append((lineno - 2, vals))
    if not groups:
        raise SchemaError(f"{path}: no data rows")
    datasets, index = [], []
    n_rows = 0
    for label, items in groups.items():
        idx = [i for i, _ in items]
        M = np.array([v for _, v in items])
        if has_y:
            datasets.append(EnvDataset(label, M[:, :-1], M[:, -1]))
        else:
            datasets.append(EnvDataset(label, M))
        index.append(np.array(idx))
        n_rows += len(idx)
    # rows are numbered by position among data rows (blank lines skipped above)
    order = np.argsort(np.concatenate(index), kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(len(order))
    split = np.cumsum([len(i) for i in index])[:-1]
    index = np.split(ranks, split)
    return CsvTable(datasets, list(index), n_rows)
