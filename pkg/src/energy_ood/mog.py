"""Mixture of class-conditional Gaussians with one tied covariance matrix.

Parameters come from closed-form empirical estimates: mixing weights are
class frequencies, means are class means, and the tied covariance is the
pooled within-class scatter divided by N, plus a diagonal shrinkage term.

Two energy views coexist on purpose. ``gaussian_energy`` is the raw
log-sum-exp over negated quadratic forms, with no mixing weights, no 1/2
factor and no normalizer, divided by the mixture temperature; it is the
reference energy the correction network is added to. ``log_density`` and
``sample_mog`` use the fully normalized mixture density. The two are not
rescalings of each other and both are needed downstream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .featurestore import FeatureSet
from .tensorio import read_archive, write_archive

# keep batched quadratic-form temporaries around (rows * classes * dim) floats
_CHUNK_CELLS = 1 << 22


class MixtureFitError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    def __init__(self, shrinkage: float):
        super().__init__(
            f"tied covariance is not positive definite with shrinkage {shrinkage:.3e}; "
            "pass a larger shrinkage"
        )
        self.shrinkage = shrinkage


@dataclass(frozen=True)
class GaussianMixture:
    means: np.ndarray        # (C, D) component means
    covariance: np.ndarray   # (D, D) tied covariance, shrinkage included
    chol_lower: np.ndarray   # lower-triangular L with L L^T = covariance
    precision: np.ndarray    # inverse of covariance
    mixing: np.ndarray       # (C,) simplex weights
    temperature: float = 1.0
    shrinkage: float = 0.0

    def __post_init__(self):
        for name in ("means", "covariance", "chol_lower", "precision", "mixing"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.shrinkage < 0:
            raise ValueError("shrinkage must be nonnegative")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_moments(cls, means, covariance, mixing=None, temperature: float = 1.0,
                     shrinkage: float = 0.0) -> "GaussianMixture":
        """Build a mixture from explicit means and covariance.

        The covariance is symmetrized and factorized here; ``mixing`` defaults
        to uniform weights.
        """
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        cov = np.asarray(covariance, dtype=np.float64)
        cov = 0.5 * (cov + cov.T)
        if mixing is None:
            mixing = np.full(means.shape[0], 1.0 / means.shape[0])
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(shrinkage) from exc
        precision = cho_solve((chol, True), np.eye(cov.shape[0]))
        precision = 0.5 * (precision + precision.T)
        return cls(means, cov, chol, precision, np.asarray(mixing, dtype=np.float64),
                   temperature, shrinkage)

    def validate(self) -> None:
        """Recheck structural invariants; raises ValueError on violation."""
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-10, rtol=0):
            raise ValueError("covariance is not symmetric")
        if np.any(np.diag(self.chol_lower) <= 0):
            raise ValueError("Cholesky factor has non-positive diagonal")
        if np.any(np.triu(self.chol_lower, 1) != 0):
            raise ValueError("Cholesky factor is not lower-triangular")
        if not np.allclose(self.precision @ self.covariance, np.eye(self.dim), atol=1e-8):
            raise ValueError("precision is not the inverse of the covariance")
        if abs(self.mixing.sum() - 1.0) > 1e-12 or np.any(self.mixing < 0):
            raise ValueError("mixing weights are not a simplex vector")


def fit_mog(fs: FeatureSet, shrinkage: float | None = None,
            temperature: float = 1.0) -> GaussianMixture:
    """Fit the class-conditional mixture by empirical estimates.

    mixing_c = N_c / N, mean_c = class mean, and the tied covariance is the
    within-class scatter summed over classes and divided by N, then shrunk by
    ``shrinkage * I`` (default 1e-6 * trace / D) before factorization.
    """
    feats, labels = fs.features, fs.labels
    n, d = feats.shape
    counts = np.bincount(labels, minlength=fs.num_classes)
    if counts.min() < 2:
        bad = int(np.argmin(counts))
        raise MixtureFitError(
            f"class {bad} has {counts[bad]} samples; need at least 2 per class"
        )
    if n <= d:
        warnings.warn(
            f"only {n} samples for {d} dimensions; covariance may be ill-conditioned",
            RuntimeWarning,
        )

    mixing = counts / n
    means = np.zeros((fs.num_classes, d))
    scatter = np.zeros((d, d))
    for c in range(fs.num_classes):
        x = feats[labels == c]
        means[c] = x.mean(axis=0)
        centered = x - means[c]
        scatter += centered.T @ centered
    cov = scatter / n

    if shrinkage is None:
        shrinkage = 1e-6 * np.trace(cov) / d
    cov = cov + shrinkage * np.eye(d)
    return GaussianMixture.from_moments(means, cov, mixing, temperature, shrinkage)


def _as_batch(z, dim: int) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        if z.shape[0] != dim:
            raise ValueError(f"expected a vector of dimension {dim}, got {z.shape[0]}")
        return z[None, :], True
    if z.ndim == 2 and z.shape[1] == dim:
        return z, False
    raise ValueError(f"expected shape (n, {dim}) or ({dim},), got {z.shape}")


def _quad_forms(gm: GaussianMixture, z: np.ndarray) -> np.ndarray:
    """(n, C) matrix of (z - mu_c)^T Sigma^-1 (z - mu_c), via triangular solves."""
    n, d = z.shape
    c = gm.n_components
    out = np.empty((n, c))
    chunk = max(1, _CHUNK_CELLS // max(1, c * d))
    for start in range(0, n, chunk):
        rows = z[start : start + chunk]
        diffs = rows[:, None, :] - gm.means[None, :, :]
        sol = solve_triangular(gm.chol_lower, diffs.reshape(-1, d).T, lower=True)
        out[start : start + chunk] = (sol ** 2).sum(axis=0).reshape(rows.shape[0], c)
    return out


def gaussian_energy(gm: GaussianMixture, z) -> float | np.ndarray:
    """Reference energy -log sum_c exp(-quad_c(z)), divided by the temperature.

    Evaluated with the max-shift trick so far-away points do not underflow to
    -inf inside the log.
    """
    batch, single = _as_batch(z, gm.dim)
    q = _quad_forms(gm, batch)
    m = q.min(axis=1)
    e = (m - np.log(np.exp(m[:, None] - q).sum(axis=1))) / gm.temperature
    return float(e[0]) if single else e


def gaussian_energy_grad(gm: GaussianMixture, z) -> np.ndarray:
    """Exact gradient of gaussian_energy.

    With w_c the softmax of the negated quadratic forms, the gradient is
    (2 / T) sum_c w_c Sigma^-1 (z - mu_c); since the weights sum to one this
    collapses to (2 / T) (z - w @ means) Sigma^-1.
    """
    batch, single = _as_batch(z, gm.dim)
    q = _quad_forms(gm, batch)
    shifted = np.exp(q.min(axis=1)[:, None] - q)
    w = shifted / shifted.sum(axis=1, keepdims=True)
    grad = (2.0 / gm.temperature) * (batch - w @ gm.means) @ gm.precision
    return grad[0] if single else grad


def mahalanobis_ood_score(gm: GaussianMixture, z) -> float | np.ndarray:
    """Squared Mahalanobis distance to the nearest component mean (higher = OOD)."""
    batch, single = _as_batch(z, gm.dim)
    q = _quad_forms(gm, batch).min(axis=1)
    return float(q[0]) if single else q


def sample_mog(gm: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n samples: pick components from the mixing weights, then means + L u."""
    if n < 1:
        raise ValueError("need at least one sample")
    comp = rng.choice(gm.n_components, size=n, p=gm.mixing)
    u = rng.standard_normal((n, gm.dim))
    return gm.means[comp] + u @ gm.chol_lower.T


def log_density(gm: GaussianMixture, z) -> float | np.ndarray:
    """Log of the normalized mixture density (mixing weights and 1/2 included)."""
    batch, single = _as_batch(z, gm.dim)
    q = _quad_forms(gm, batch)
    log_det = 2.0 * np.log(np.diag(gm.chol_lower)).sum()
    log_norm = -0.5 * (gm.dim * np.log(2.0 * np.pi) + log_det)
    terms = np.log(gm.mixing)[None, :] - 0.5 * q + log_norm
    m = terms.max(axis=1)
    out = m + np.log(np.exp(terms - m[:, None]).sum(axis=1))
    return float(out[0]) if single else out


def mixture_entries(gm: GaussianMixture, prefix: str = "") -> dict[str, np.ndarray]:
    return {
        prefix + "means": gm.means,
        prefix + "chol_lower": gm.chol_lower,
        prefix + "mixing": gm.mixing,
        prefix + "temperature": np.array([gm.temperature]),
        prefix + "shrinkage": np.array([gm.shrinkage]),
    }


def mixture_from_entries(entries: dict[str, np.ndarray], prefix: str = "") -> GaussianMixture:
    missing = [k for k in ("means", "chol_lower", "mixing", "temperature", "shrinkage")
               if prefix + k not in entries]
    if missing:
        raise ValueError(f"not a mixture archive: missing entries {missing}")
    chol = entries[prefix + "chol_lower"]
    cov = chol @ chol.T
    precision = cho_solve((chol, True), np.eye(chol.shape[0]))
    precision = 0.5 * (precision + precision.T)
    return GaussianMixture(
        entries[prefix + "means"],
        cov,
        chol,
        precision,
        entries[prefix + "mixing"],
        float(entries[prefix + "temperature"][0]),
        float(entries[prefix + "shrinkage"][0]),
    )


def save_mixture(path, gm: GaussianMixture) -> None:
    write_archive(path, mixture_entries(gm))


def load_mixture(path) -> GaussianMixture:
    return mixture_from_entries(read_archive(path))
