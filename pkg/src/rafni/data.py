"""Dataset container, CSV serialization and synthetic benchmark generation.

The on-disk format is a UTF-8 CSV with a header row and columns
``id,label[,clean_label],f0..f{d-1}``: ``id`` is an opaque string, ``label``
the (possibly corrupted) training label, ``clean_label`` an optional hidden
ground-truth label kept for auditing, and ``f*`` decimal float features.
Floats are written with 17 significant digits so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DataError


@dataclass
class LabeledDataset:
    """Feature matrix with current labels and optional hidden clean labels."""

    ids: list[str]
    features: np.ndarray
    labels: np.ndarray
    clean_labels: np.ndarray | None
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        n = len(self.ids)
        if self.features.shape[0] != n or self.labels.size != n:
            raise DataError("ids, features and labels must have matching length")
        if self.clean_labels is not None and self.clean_labels.size != n:
            raise DataError("clean labels must align with the dataset")
        for name, arr in (("label", self.labels), ("clean_label", self.clean_labels)):
            if arr is not None and arr.size and (arr.min() < 0 or arr.max() >= self.n_classes):
                raise DataError(
                    f"{name} values must lie in [0, {self.n_classes}), got range "
                    f"[{arr.min()}, {arr.max()}]"
                )

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            ids=[self.ids[i] for i in idx],
            features=self.features[idx],
            labels=self.labels[idx],
            clean_labels=self.clean_labels[idx] if self.clean_labels is not None else None,
            n_classes=self.n_classes,
        )


def load_dataset(path, n_classes: int | None = None) -> LabeledDataset:
    """Parse a dataset CSV; the class count is inferred as max label + 1
    unless given explicitly."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["id", "label"]:
            raise DataError(f"{path}: header must start with 'id,label', got {header[:2]}")
        has_clean = len(header) > 2 and header[2] == "clean_label"
        feat_start = 3 if has_clean else 2
        feat_names = header[feat_start:]
        expected = [f"f{i}" for i in range(len(feat_names))]
        if feat_names != expected:
            raise DataError(f"{path}: feature columns must be f0..f{len(feat_names)-1}")
        if not feat_names:
            raise DataError(f"{path}: no feature columns")

        ids: list[str] = []
        labels: list[int] = []
        clean: list[int] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            ids.append(row[0])
            try:
                labels.append(int(row[1]))
                if has_clean:
                    clean.append(int(row[2]))
            except ValueError:
                raise DataError(f"{path}:{line_no}: labels must be integers") from None
            try:
                rows.append([float(v) for v in row[feat_start:]])
            except ValueError:
                raise DataError(f"{path}:{line_no}: non-numeric feature value") from None

    if not ids:
        raise DataError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    clean_arr = np.asarray(clean, dtype=np.int64) if has_clean else None
    if labels_arr.min() < 0 or (clean_arr is not None and clean_arr.min() < 0):
        raise DataError(f"{path}: labels must be non-negative")
    if n_classes is None:
        n_classes = int(labels_arr.max()) + 1
        if clean_arr is not None:
            n_classes = max(n_classes, int(clean_arr.max()) + 1)
    return LabeledDataset(
        ids=ids,
        features=np.asarray(rows, dtype=np.float64),
        labels=labels_arr,
        clean_labels=clean_arr,
        n_classes=n_classes,
    )


def save_dataset(dataset: LabeledDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        cols = ["id", "label"]
        if dataset.clean_labels is not None:
            cols.append("clean_label")
        cols += [f"f{i}" for i in range(dataset.dim)]
        writer.writerow(cols)
        for i in range(dataset.n):
            row = [dataset.ids[i], str(int(dataset.labels[i]))]
            if dataset.clean_labels is not None:
                row.append(str(int(dataset.clean_labels[i])))
            row += [f"{v:.17g}" for v in dataset.features[i]]
            writer.writerow(row)


def gen_synthetic(
    n: int, k: int, d: int, cluster_sep: float, seed: int
) -> LabeledDataset:
    """Balanced isotropic Gaussian blobs, one unit-variance cluster per class.

    Cluster centers are drawn at random and rescaled so the smallest pairwise
    center distance is at least ``cluster_sep``. Class counts differ by at
    most one; ``clean_label`` equals ``label``. Deterministic per seed.
    """
    if k < 2 or n < k or d < 1:
        raise ConfigError(f"need n >= k >= 2 and d >= 1, got n={n}, k={k}, d={d}")
    rng = np.random.default_rng(seed)
    while True:
        centers = rng.normal(size=(k, d))
        dists = [
            float(np.linalg.norm(centers[i] - centers[j]))
            for i in range(k)
            for j in range(i + 1, k)
        ]
        if min(dists) > 1e-8:
            break
    centers *= cluster_sep / min(dists)

    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    features = np.vstack(
        [centers[c] + rng.normal(size=(counts[c], d)) for c in range(k)]
    )
    labels = np.repeat(np.arange(k), counts)
    order = rng.permutation(n)
    features, labels = features[order], labels[order]
    width = len(str(n - 1))
    return LabeledDataset(
        ids=[f"i{i:0{width}d}" for i in range(n)],
        features=features,
        labels=labels,
        clean_labels=labels.copy(),
        n_classes=k,
    )
