"""Datasets: in-memory tabular data, synthetic blobs, and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError
from .rng import stream


@dataclass
class Dataset:
    """Feature matrix with integer class labels.

    Labels live in {0..C-1}; the feature count is constant across rows.
    """

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigurationError("features must be a 2-d matrix")
        if self.features.shape[0] < 1:
            raise ConfigurationError("dataset must contain at least one row")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigurationError("labels must be one integer per feature row")
        if self.labels.min() < 0:
            raise ConfigurationError("labels must be non-negative class indices")

    @property
    def num_rows(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx].copy(), self.labels[idx].copy(),
                       name if name is not None else self.name)


def _simplex_means(classes: int, features: int, separation: float) -> np.ndarray:
    """Class means at pairwise distance ``separation``.

    For features >= classes the scaled standard basis is used; otherwise a
    regular simplex is embedded through the Helmert basis (needs
    features >= classes - 1).
    """
    if features >= classes:
        means = np.zeros((classes, features))
        means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
        return means
    if features < classes - 1:
        raise ConfigurationError(
            f"cannot place {classes} equidistant class means in {features} dimensions")
    # Helmert rows form an orthonormal basis of the hyperplane orthogonal to 1.
    helmert = np.zeros((classes - 1, classes))
    for r in range(1, classes):
        helmert[r - 1, :r] = 1.0
        helmert[r - 1, r] = -r
        helmert[r - 1] /= np.sqrt(r * (r + 1))
    corners = np.eye(classes) - 1.0 / classes
    coords = corners @ helmert.T  # (classes, classes-1), pairwise distance sqrt(2)
    return coords * (separation / np.sqrt(2.0))


def make_synthetic(classes: int, n: int, features: int, separation: float,
                   seed: int) -> Dataset:
    """Gaussian blobs with unit covariance, one mean per class.

    Class means sit at pairwise distance ``separation``; class counts are
    balanced to within one row (labels cycle 0,1,...,C-1).
    """
    if classes < 2:
        raise ConfigurationError("need at least 2 classes")
    if n < classes:
        raise ConfigurationError("need at least one row per class")
    means = _simplex_means(classes, features, separation)
    rng = stream(seed, "synthetic")
    labels = np.arange(n, dtype=np.int64) % classes
    noise = rng.standard_normal((n, features))
    return Dataset(means[labels] + noise, labels, name=f"synthetic-c{classes}-n{n}")


def train_validation_split(data: Dataset, validation_fraction: float,
                           seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle rows and split off a hold-out validation set."""
    if not 0.0 < validation_fraction < 1.0:
        raise ConfigurationError("validation_fraction must be in (0, 1)")
    rng = stream(seed, "val-split")
    order = rng.permutation(data.num_rows)
    n_val = max(1, int(round(validation_fraction * data.num_rows)))
    if n_val >= data.num_rows:
        raise ConfigurationError("validation split would leave no training rows")
    val_idx, train_idx = order[:n_val], order[n_val:]
    return (data.subset(train_idx, f"{data.name}/train"),
            data.subset(val_idx, f"{data.name}/val"))


def load_csv(path: str | Path, label_column: str) -> Dataset:
    """Load a CSV with a header row into a Dataset.

    Numeric feature columns are taken as-is. Non-numeric feature columns are
    one-hot encoded over their sorted distinct values (one indicator column
    per value, in sorted order). The label column may hold integers or
    strings; string labels are mapped to indices by sorted order.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise IngestionError(f"{path}: file is empty")
    header, body = rows[0], rows[1:]
    if not body:
        raise IngestionError(f"{path}: no data rows")
    if label_column not in header:
        raise IngestionError(f"{path}: label column {label_column!r} not in header {header}")
    label_idx = header.index(label_column)
    width = len(header)
    for r, row in enumerate(body, start=2):
        if len(row) != width:
            raise IngestionError(f"{path}: row {r} has {len(row)} cells, expected {width}")

    def parses(v: str) -> bool:
        try:
            float(v)
            return True
        except ValueError:
            return False

    columns: list[np.ndarray] = []
    for c, col_name in enumerate(header):
        if c == label_idx:
            continue
        cells = [row[c].strip() for row in body]
        numeric = [parses(v) for v in cells]
        if all(numeric):
            columns.append(np.array([[float(v)] for v in cells]))
        elif not any(numeric):
            values = sorted(set(cells))
            lut = {v: j for j, v in enumerate(values)}
            onehot = np.zeros((len(cells), len(values)))
            onehot[np.arange(len(cells)), [lut[v] for v in cells]] = 1.0
            columns.append(onehot)
        else:
            # Mixed column: treat as a numeric column with a corrupt cell.
            bad = numeric.index(False)
            raise IngestionError(
                f"{path}: row {bad + 2}, column {col_name!r}: "
                f"non-numeric cell {cells[bad]!r} in numeric column")
    if not columns:
        raise IngestionError(f"{path}: no feature columns besides the label")

    raw_labels = [row[label_idx].strip() for row in body]
    try:
        labels = np.array([int(v) for v in raw_labels], dtype=np.int64)
    except ValueError:
        classes = sorted(set(raw_labels))
        lut = {v: j for j, v in enumerate(classes)}
        labels = np.array([lut[v] for v in raw_labels], dtype=np.int64)
    if labels.min() < 0:
        bad = int(np.argmin(labels)) + 2
        raise IngestionError(f"{path}: row {bad}: negative class label")

    return Dataset(np.hstack(columns), labels, name=path.stem)
