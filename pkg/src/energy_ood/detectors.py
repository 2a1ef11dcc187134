"""Uniform scoring interface over all detectors.

Every scorer returns higher-is-more-OOD, whatever the native sign of the
underlying quantity, so one evaluation harness serves them all. Scorers
accept a single vector or a batch of rows.
"""

from __future__ import annotations

import numpy as np

from .energy_net import EnergyMlp, mlp_energy
from .mog import gaussian_energy
from .trainer import CorrectionModel

# distance-matrix chunking bound for the brute-force KNN scan
_KNN_CELLS = 1 << 24


def score_correction(model: CorrectionModel, z) -> float | np.ndarray:
    """Network energy plus mixture energy, each with its temperature applied."""
    return mlp_energy(model.net, z) + gaussian_energy(model.gm, z)


def score_ebm(net: EnergyMlp, z, temperature: float = 1.0) -> float | np.ndarray:
    """Plain network energy divided by its temperature."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return mlp_energy(net, z) / temperature


def score_knn(train: np.ndarray, z, k: int) -> float | np.ndarray:
    """Exact k-th nearest Euclidean distance to the training set, by full scan."""
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2:
        raise ValueError("train must be an (n, d) matrix")
    n = train.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    queries = z[None, :] if single else z
    if queries.shape[1] != train.shape[1]:
        raise ValueError(f"query dimension {queries.shape[1]} != train {train.shape[1]}")

    train_sq = (train ** 2).sum(axis=1)
    out = np.empty(queries.shape[0])
    chunk = max(1, _KNN_CELLS // n)
    for start in range(0, queries.shape[0], chunk):
        rows = queries[start : start + chunk]
        d2 = (rows ** 2).sum(axis=1)[:, None] - 2.0 * rows @ train.T + train_sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        out[start : start + chunk] = np.sqrt(kth)
    return float(out[0]) if single else out


def _as_logit_batch(logits) -> tuple[np.ndarray, bool]:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ValueError(f"logits must be a vector or matrix, got shape {arr.shape}")


def score_msp(logits) -> float | np.ndarray:
    """Negated maximum softmax probability."""
    batch, single = _as_logit_batch(logits)
    shifted = batch - batch.max(axis=1, keepdims=True)
    score = -1.0 / np.exp(shifted).sum(axis=1)
    return float(score[0]) if single else score


def score_odin_temperature(logits, temperature: float) -> float | np.ndarray:
    """Negated maximum softmax probability at temperature T (no input preprocessing)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    batch, single = _as_logit_batch(logits)
    score = score_msp(batch / temperature)
    return float(score[0]) if single else score


def score_energy_logits(logits, temperature: float = 1.0) -> float | np.ndarray:
    """-T * logsumexp(logits / T), computed with the max-shift trick."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    batch, single = _as_logit_batch(logits)
    scaled = batch / temperature
    m = scaled.max(axis=1)
    score = -temperature * (m + np.log(np.exp(scaled - m[:, None]).sum(axis=1)))
    return float(score[0]) if single else score
