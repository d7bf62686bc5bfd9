"""Diagonal-covariance Gaussian mixtures fit by expectation-maximization.

All density work is done in log space.  The M-step uses the biased (1/N)
variance estimator, matching the maximum-likelihood criterion, with a hard
variance floor.  Fits are deterministic given the data order and seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .datamodel import VARIANCE_FLOOR, GmmModel

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class EmConfig:
    n_components: int = 16
    max_iters: int = 100
    rel_tol: float = 1e-5
    variance_floor: float = VARIANCE_FLOOR
    seed: int = 0
    init: str = "kmeans"

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError(f"need at least one component, got {self.n_components}")
        if self.rel_tol <= 0 or self.variance_floor <= 0:
            raise ValueError("tolerances must be positive")
        if self.init != "kmeans":
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class EmLog:
    """Per-iteration mean log-likelihood trace plus component-rescue events."""

    mean_log_likelihood: list = field(default_factory=list)
    reseeded: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iters(self):
        return len(self.mean_log_likelihood)


def _log_densities(weights, means, variances, x):
    """Per-point per-component log(w_k * N(x; mu_k, var_k)); shape (M, K)."""
    k = weights.shape[0]
    out = np.empty((x.shape[0], k), dtype=np.float64)
    log_norm = -0.5 * (x.shape[1] * _LOG_2PI + np.log(variances).sum(axis=1))
    for j in range(k):
        diff = x - means[j]
        out[:, j] = log_norm[j] - 0.5 * ((diff * diff) / variances[j]).sum(axis=1)
    return out + np.log(weights)


def _kmeanspp_centers(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _init_params(x, cfg, rng):
    """k-means++ seeding plus one hard-assignment estimate of all parameters."""
    k = cfg.n_components
    centers = _kmeanspp_centers(x, k, rng)
    d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    global_var = np.maximum(x.var(axis=0), cfg.variance_floor)
    weights = np.empty(k)
    means = np.empty_like(centers)
    variances = np.empty_like(centers)
    for j in range(k):
        members = x[assign == j]
        if members.shape[0] == 0:
            means[j] = x[rng.integers(x.shape[0])]
            variances[j] = global_var
            weights[j] = 1.0
        else:
            means[j] = members.mean(axis=0)
            variances[j] = np.maximum(members.var(axis=0), cfg.variance_floor)
            weights[j] = members.shape[0]
    weights /= weights.sum()
    return weights, means, variances


def _m_step(x, resp, rng, variance_floor, reseed_log=None, iteration=None):
    """Maximize parameters for fixed responsibilities.

    Components whose responsibility mass vanishes are reseeded on a random
    data point with floor variance instead of failing.
    """
    n, _ = x.shape
    nk = resp.sum(axis=0)
    k = nk.shape[0]
    weights = nk / n
    means = np.empty((k, x.shape[1]))
    variances = np.empty_like(means)
    empty = nk <= n * 1e-12
    for j in range(k):
        if empty[j]:
            means[j] = x[rng.integers(n)]
            variances[j] = variance_floor
            weights[j] = 1.0 / n
            if reseed_log is not None:
                reseed_log.append({"component": int(j), "iteration": iteration})
            warnings.warn(f"reseeded empty mixture component {j}")
            continue
        means[j] = resp[:, j] @ x / nk[j]
        diff = x - means[j]
        variances[j] = np.maximum(resp[:, j] @ (diff * diff) / nk[j], variance_floor)
    weights = weights / weights.sum()
    return weights, means, variances


def fit_gmm(data, cfg: EmConfig = EmConfig()):
    """Fit the mixture by EM; returns (GmmModel, EmLog).

    The recorded mean log-likelihood trace is non-decreasing up to float
    noise; iteration stops when the relative improvement drops below
    ``cfg.rel_tol`` or after ``cfg.max_iters`` maximization steps.
    """
    x = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if x.ndim != 2:
        raise ValueError(f"data must be (samples, dim), got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite training data")
    if x.shape[0] < cfg.n_components:
        raise ValueError(
            f"{x.shape[0]} samples cannot support {cfg.n_components} components"
        )
    rng = np.random.default_rng(cfg.seed)
    weights, means, variances = _init_params(x, cfg, rng)
    log = EmLog()
    prev = None
    for it in range(cfg.max_iters):
        joint = _log_densities(weights, means, variances, x)
        norm = logsumexp(joint, axis=1)
        mean_ll = norm.mean()
        log.mean_log_likelihood.append(float(mean_ll))
        if prev is not None:
            denom = abs(prev) if prev != 0 else 1.0
            if (mean_ll - prev) / denom < cfg.rel_tol:
                log.converged = True
                break
        prev = mean_ll
        resp = np.exp(joint - norm[:, None])
        resp /= resp.sum(axis=1, keepdims=True)
        weights, means, variances = _m_step(
            x, resp, rng, cfg.variance_floor, reseed_log=log.reseeded, iteration=it
        )
    else:
        # trace the likelihood of the final maximization too
        joint = _log_densities(weights, means, variances, x)
        log.mean_log_likelihood.append(float(logsumexp(joint, axis=1).mean()))
    return GmmModel(weights=weights, means=means, variances=variances), log


def responsibilities(model: GmmModel, x) -> np.ndarray:
    """Posterior component probabilities for one point (K,) or rows (M, K)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != model.dim:
        raise ValueError(f"point dimension {arr.shape[1]} != model dimension {model.dim}")
    joint = _log_densities(model.weights, model.means, model.variances, arr)
    gamma = np.exp(joint - logsumexp(joint, axis=1)[:, None])
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma[0] if single else gamma


def log_likelihood(model: GmmModel, data) -> float:
    """Total log-likelihood of the data under the mixture."""
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("log-likelihood of empty data is undefined")
    joint = _log_densities(model.weights, model.means, model.variances, x)
    return float(logsumexp(joint, axis=1).sum())
