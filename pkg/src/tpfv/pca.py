"""Decorrelation of pooled descriptors before mixture fitting.

Plain eigendecomposition PCA: center, project on the top-d eigenvectors of
the sample covariance.  No whitening by default; mixture variances absorb
the per-axis scale.
"""

from __future__ import annotations

import numpy as np

from .datamodel import PcaModel

# Fits on more samples than this are done on a seeded uniform subsample to
# bound memory.
MAX_FIT_SAMPLES = 1_000_000


class RankDeficientError(ValueError):
    def __init__(self, requested, achievable):
        super().__init__(
            f"covariance supports only {achievable} positive-variance directions, "
            f"{requested} requested"
        )
        self.achievable = achievable


def fit_pca(descriptors, d: int, whiten: bool = False, seed: int = 0,
            max_fit_samples: int = MAX_FIT_SAMPLES) -> PcaModel:
    """Fit the projection to ``d`` dimensions on an (n, C) sample matrix.

    Basis rows are the top-d unit eigenvectors of the sample covariance in
    descending eigenvalue order; each row's largest-magnitude entry is made
    positive so refits are reproducible.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"descriptor matrix must be 2-D, got shape {x.shape}")
    n, c = x.shape
    if d < 1 or d > c:
        raise ValueError(f"target dimension {d} not in [1, {c}]")
    if n <= d:
        raise ValueError(f"need more than {d} samples to fit, got {n}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite descriptor values")
    if n > max_fit_samples:
        rng = np.random.default_rng(seed)
        x = x[rng.choice(n, size=max_fit_samples, replace=False)]
        n = max_fit_samples

    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]

    positive = int((evals > max(evals[0], 0.0) * 1e-12).sum()) if evals[0] > 0 else 0
    if positive < d:
        raise RankDeficientError(d, positive)

    basis = evecs[:, :d].T.copy()
    flip = basis[np.arange(d), np.abs(basis).argmax(axis=1)] < 0
    basis[flip] *= -1.0

    scale = 1.0 / np.sqrt(evals[:d]) if whiten else None
    return PcaModel(mean=mean, basis=basis, scale=scale)


def project(model: PcaModel, x) -> np.ndarray:
    """Project a C-vector or (n, C) matrix: basis @ (x - mean)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input dimension {x.shape[-1]} != model input {model.input_dim}")
    y = (x - model.mean) @ model.basis.T
    if model.scale is not None:
        y = y * model.scale
    return y
