"""Spambase loading and partitioning of emails across nodes."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Dataset",
    "MalformedRowError",
    "SPAMBASE_FEATURES",
    "bundled_spambase_path",
    "resolve_dataset_path",
    "load_spambase",
    "partition_dataset",
]

# word_freq_make, word_freq_address, word_freq_all
SPAMBASE_FEATURES = (0, 1, 2)


class MalformedRowError(ValueError):
    def __init__(self, path, row: int, reason: str):
        self.row = row
        super().__init__(f"{path}: row {row}: {reason}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix and +/-1 labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features[rows], self.labels[rows])

    def standardized(self) -> "Dataset":
        """Zero-mean, unit-variance columns (constant columns are only centred)."""
        mu = self.features.mean(axis=0)
        sd = self.features.std(axis=0)
        sd[sd == 0] = 1.0
        return Dataset((self.features - mu) / sd, self.labels)


def bundled_spambase_path() -> Path:
    return Path(str(resources.files("ranrc") / "data" / "spambase.data"))


def resolve_dataset_path(path: str | os.PathLike | None) -> Path:
    """Explicit path, else ``$RANRC_DATA``, else the bundled copy."""
    if path:
        return Path(path)
    env = os.environ.get("RANRC_DATA")
    if env:
        return Path(env)
    return bundled_spambase_path()


def load_spambase(path=None, feature_columns: Sequence[int] = SPAMBASE_FEATURES) -> Dataset:
    """Read a comma-separated spambase file.

    Every row is numeric, the last column is the 0/1 spam label.  Labels are
    mapped ``0 -> -1`` and ``1 -> +1``.  Rows are numbered from 1 in errors.
    """
    path = resolve_dataset_path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    cols = [int(c) for c in feature_columns]
    feats: list[list[float]] = []
    labels: list[float] = []
    width = None
    with open(path, newline="") as fh:
        for rowno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise MalformedRowError(path, rowno, "non-numeric cell") from None
            if width is None:
                width = len(values)
                if any(c < 0 or c >= width - 1 for c in cols):
                    raise ValueError(f"feature columns {cols} out of range for {width - 1} features")
            elif len(values) != width:
                raise MalformedRowError(path, rowno, f"expected {width} cells, got {len(values)}")
            label = values[-1]
            if label not in (0.0, 1.0):
                raise MalformedRowError(path, rowno, f"label {label!r} not in {{0, 1}}")
            feats.append([values[c] for c in cols])
            labels.append(2.0 * label - 1.0)
    if not labels:
        raise ValueError(f"{path}: no data rows")
    return Dataset(np.array(feats, dtype=float), np.array(labels, dtype=float))


def partition_dataset(d: Dataset | int, n_nodes: int, seed: int | None, balanced: bool = False) -> list[np.ndarray]:
    """Split row indices across ``n_nodes``.

    By default each row is sent to an i.i.d. uniformly drawn node, so set sizes
    vary.  With ``balanced=True`` the rows are shuffled and dealt round-robin.
    Index arrays are sorted.
    """
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    n_rows = d if isinstance(d, (int, np.integer)) else len(d)
    rng = np.random.default_rng(seed)
    if balanced:
        perm = rng.permutation(n_rows)
        owner = np.empty(n_rows, dtype=int)
        owner[perm] = np.arange(n_rows) % n_nodes
    else:
        owner = rng.integers(0, n_nodes, size=n_rows)
    return [np.flatnonzero(owner == i) for i in range(n_nodes)]
