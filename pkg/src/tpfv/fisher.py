"""Fisher vector encoding of descriptor sets against a fitted mixture.

The raw encoding stacks, per component, the normalized gradients of the
descriptor set's mean log-likelihood with respect to the component means and
variances:

    mean block k:      1/(M sqrt(w_k))   * sum_m gamma_k(m) (x_m - mu_k) / var_k
    variance block k:  1/(M sqrt(2 w_k)) * sum_m gamma_k(m) [(x_m - mu_k)^2 / var_k - 1]

laid out as all mean blocks then all variance blocks, giving 2*K*d values.
The gradient with respect to the weights is available separately and is not
part of the default encoding, which keeps the published 2kd dimensionality.

Per-coordinate reductions use exact (correctly rounded) summation, so the
encoding is bitwise invariant to descriptor order and duplication.
"""

from __future__ import annotations

import math

import numpy as np

from .datamodel import FisherVector, GmmModel
from .gmm import responsibilities


def _check_input(model: GmmModel, x) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[1] != model.dim:
        raise ValueError(
            f"descriptors must be (M, {model.dim}), got shape {np.asarray(x).shape}"
        )
    if arr.shape[0] < 1:
        raise ValueError("need at least one descriptor to encode")
    return arr


def _exact_column_sums(terms: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(terms[:, j]) for j in range(terms.shape[1])])


def encode_raw(model: GmmModel, descriptors) -> np.ndarray:
    """Un-normalized encoding: concatenated mean and variance blocks, 2*K*d."""
    x = _check_input(model, descriptors)
    m = x.shape[0]
    gamma = np.atleast_2d(responsibilities(model, x))
    k, d = model.means.shape
    mean_blocks = np.empty((k, d))
    var_blocks = np.empty((k, d))
    for j in range(k):
        diff = x - model.means[j]
        scaled = diff / model.variances[j]
        g = gamma[:, j : j + 1]
        mean_blocks[j] = _exact_column_sums(g * scaled) / (m * math.sqrt(model.weights[j]))
        var_blocks[j] = _exact_column_sums(g * (diff * scaled - 1.0)) / (
            m * math.sqrt(2.0 * model.weights[j])
        )
    return np.concatenate([mean_blocks.ravel(), var_blocks.ravel()])


def weight_gradient(model: GmmModel, descriptors) -> np.ndarray:
    """Gradient block for the mixture weights:
    1/(M sqrt(w_k)) * sum_m (gamma_k(m) - w_k); zero whenever the
    responsibilities average to the weights."""
    x = _check_input(model, descriptors)
    m = x.shape[0]
    gamma = np.atleast_2d(responsibilities(model, x))
    out = np.empty(model.n_components)
    for j in range(model.n_components):
        out[j] = math.fsum(gamma[:, j] - model.weights[j]) / (m * math.sqrt(model.weights[j]))
    return out


def normalize(raw) -> np.ndarray:
    """Signed square root then L2 normalization; all-zero stays all-zero."""
    v = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("non-finite raw encoding")
    rooted = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(rooted)
    if norm == 0.0:
        return rooted
    return rooted / norm


def encode(model: GmmModel, descriptors, video_id: str = "", window_index=None,
           include_weight_block: bool = False) -> FisherVector:
    """Full encoding: raw gradients, signed sqrt, L2 normalization."""
    raw = encode_raw(model, descriptors)
    if include_weight_block:
        raw = np.concatenate([raw, weight_gradient(model, descriptors)])
    return FisherVector(values=normalize(raw), video_id=video_id, window_index=window_index)
