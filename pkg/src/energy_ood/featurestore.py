"""In-distribution feature sets: loading, validation, normalization, batching.

Features and logits travel as rank-2 f32 tensor files, labels as rank-1 u32
files. Everything is promoted to float64 for computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorio import load_tensor, write_tensor


class DegenerateFeatureError(ValueError):
    def __init__(self, row: int, norm: float):
        super().__init__(f"feature row {row} has near-zero norm {norm:.3e}; cannot normalize")
        self.row = row


@dataclass(frozen=True)
class FeatureSet:
    """N feature vectors with integer class labels in [0, num_classes).

    Arrays are copied, promoted (float64 / int64) and frozen read-only, so a
    fitted set can be shared across threads.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2:
            raise ValueError(f"features must be a 2-D matrix, got shape {feats.shape}")
        if labels.ndim != 1:
            raise ValueError(f"labels must be a 1-D vector, got shape {labels.shape}")
        if feats.shape[0] != labels.shape[0]:
            raise ValueError(f"{feats.shape[0]} feature rows but {labels.shape[0]} labels")
        if self.num_classes < 1:
            raise ValueError("num_classes must be at least 1")
        if not np.isfinite(feats).all():
            bad = int(np.argwhere(~np.isfinite(feats).all(axis=1))[0, 0])
            raise ValueError(f"non-finite feature entry at row {bad}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            bad = int(np.argwhere((labels < 0) | (labels >= self.num_classes))[0, 0])
            raise ValueError(
                f"label {labels[bad]} at row {bad} outside [0, {self.num_classes})"
            )
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def load_feature_set(features_path, labels_path, num_classes: int | None = None) -> FeatureSet:
    """Load a feature matrix and its labels from tensor files.

    ``num_classes`` defaults to ``max(labels) + 1``.
    """
    feats = load_tensor(features_path)
    if feats.ndim != 2 or feats.dtype != np.float32:
        raise ValueError(f"{features_path}: features file must be a rank-2 f32 tensor")
    labels = load_tensor(labels_path)
    if labels.ndim != 1 or labels.dtype != np.uint32:
        raise ValueError(f"{labels_path}: labels file must be a rank-1 u32 tensor")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return FeatureSet(feats, labels, num_classes)


def save_feature_set(fs: FeatureSet, features_path, labels_path) -> None:
    write_tensor(features_path, fs.features.astype(np.float32))
    write_tensor(labels_path, fs.labels.astype(np.uint32))


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm; no epsilon smoothing.

    Rows with norm below 1e-12 raise DegenerateFeatureError instead of being
    clamped.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if x.ndim == 1:
        if norms < 1e-12:
            raise DegenerateFeatureError(0, float(norms))
        return x / norms
    small = norms[:, 0] < 1e-12
    if small.any():
        row = int(np.argmax(small))
        raise DegenerateFeatureError(row, float(norms[row, 0]))
    return x / norms


def normalize_features(fs: FeatureSet) -> FeatureSet:
    return FeatureSet(normalize_rows(fs.features), fs.labels, fs.num_classes)


def label_histogram(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)


def minibatch_indices(n: int, batch_size: int, rng: np.random.Generator):
    """Yield shuffled index batches covering all n samples once per epoch."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]
