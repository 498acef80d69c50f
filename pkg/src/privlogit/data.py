"""Local datasets, agency splits, CSV ingestion and a synthetic generator."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LocalDataset:
    """Rows held by one agency: features without intercept and 0/1 labels."""

    agency_id: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError("local features must be a non-empty 2-D matrix")
        if y.size != x.shape[0]:
            raise DataError(f"{y.size} labels for {x.shape[0]} rows")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain NaN or Inf")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> LocalDataset:
        return LocalDataset(self.agency_id, self.x[rows], self.y[rows])


def stack(datasets: Sequence[LocalDataset]) -> tuple[np.ndarray, np.ndarray]:
    """Pool agencies in order into one ``(X, y)`` pair."""
    return (np.vstack([d.x for d in datasets]), np.concatenate([d.y for d in datasets]))


def split_sizes(n: int, k: int, proportions: Sequence[float] | None = None) -> list[int]:
    if k < 1:
        raise DataError("need at least one agency")
    if k > n:
        raise DataError(f"cannot split {n} rows over {k} agencies")
    if proportions is None:
        sizes = [n // k] * k
    else:
        if len(proportions) != k:
            raise DataError(f"{len(proportions)} proportions for {k} agencies")
        if not np.isclose(sum(proportions), 1.0):
            raise DataError("proportions must sum to 1")
        sizes = [int(np.floor(n * q)) for q in proportions]
    sizes[-1] += n - sum(sizes)
    if min(sizes) < 1:
        raise DataError(f"split {sizes} leaves an agency without rows")
    return sizes


def split_agencies(
    x,
    y,
    k: int,
    proportions: Sequence[float] | None = None,
    shuffle: bool = False,
    seed: int = 0,
) -> list[LocalDataset]:
    """Contiguous blocks, remainder to the last agency; optional seeded shuffle first."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    bounds = np.cumsum([0] + split_sizes(n, k, proportions))
    return [
        LocalDataset(i + 1, x[order[a:b]], y[order[a:b]])
        for i, (a, b) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]


def synthetic(n: int, p: int, seed: int = 0, beta_scale: float = 1.0):
    """Gaussian features and labels drawn from a logistic model.

    Returns ``(x, y, beta_true)`` where ``beta_true[0]`` is the intercept.
    """
    rng = np.random.default_rng(seed)
    beta = rng.normal(scale=beta_scale / np.sqrt(p), size=p + 1)
    x = rng.standard_normal((n, p))
    eta = beta[0] + x @ beta[1:]
    y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(np.float64)
    return x, y, beta


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def ingest_csv(path: str | Path, label_column: str | int | None = None):
    """Read a numeric CSV into ``(x, y, feature_names)``.

    A header is assumed when the first row has a non-numeric cell.  The label
    column is named (header) or indexed; by default it is the last column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = rows[0], rows[1:]
    width = len(header or rows[0])
    if label_column is None:
        label_idx = width - 1
    elif isinstance(label_column, int) or (header is None and str(label_column).lstrip("-").isdigit()):
        label_idx = int(label_column) % width
    else:
        if header is None or label_column not in header:
            raise DataError(f"label column {label_column!r} not found in header")
        label_idx = header.index(label_column)

    first_data_line = 2 if header else 1
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"line {i + first_data_line}: expected {width} cells, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"line {i + first_data_line}, column {j + 1}: cannot parse {cell!r}"
                ) from None
            if not np.isfinite(v):
                raise DataError(f"line {i + first_data_line}, column {j + 1}: non-finite value")
            values[i, j] = v
    y = values[:, label_idx]
    if not np.all((y == 0) | (y == 1)):
        bad = int(np.flatnonzero((y != 0) & (y != 1))[0])
        raise DataError(f"line {bad + first_data_line}: label must be 0 or 1, got {y[bad]}")
    if np.unique(y).size < 2:
        logger.warning("%s has a single label class; AUC will be unavailable", path)
    x = np.delete(values, label_idx, axis=1)
    names = [h for j, h in enumerate(header) if j != label_idx] if header else None
    return x, y, names


def export_csv(path: str | Path, x, y, names: Sequence[str] | None = None, precision: int = 17):
    x = np.asarray(x)
    names = list(names) if names else [f"x{j + 1}" for j in range(x.shape[1])]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["label"])
        for row, label in zip(x, y):
            w.writerow([f"{v:.{precision}g}" for v in row] + [int(label)])
