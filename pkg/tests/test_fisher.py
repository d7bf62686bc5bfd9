import itertools
import math
import time

import numpy as np
import pytest

from tpfv.datamodel import GmmModel
from tpfv.fisher import encode, encode_raw, normalize, weight_gradient


def random_model(rng, k, d):
    w = rng.uniform(0.2, 1.0, size=k)
    return GmmModel(
        weights=w / w.sum(),
        means=rng.normal(0.0, 1.0, size=(k, d)),
        variances=rng.uniform(0.5, 2.0, size=(k, d)),
    )


def brute_mean_loglik(weights, means, variances, x):
    """Direct (non log-space) mean log-likelihood, the oracle's own path."""
    total = 0.0
    for row in x:
        p = 0.0
        for k in range(len(weights)):
            dens = 1.0
            for j in range(len(row)):
                var = variances[k][j]
                dens *= math.exp(-((row[j] - means[k][j]) ** 2) / (2 * var)) / math.sqrt(
                    2 * math.pi * var
                )
            p += weights[k] * dens
        total += math.log(p)
    return total / len(x)


def brute_responsibilities(weights, means, variances, row):
    dens = np.empty(len(weights))
    for k in range(len(weights)):
        d = 1.0
        for j in range(len(row)):
            var = variances[k][j]
            d *= math.exp(-((row[j] - means[k][j]) ** 2) / (2 * var)) / math.sqrt(
                2 * math.pi * var
            )
        dens[k] = weights[k] * d
    return dens / dens.sum()


def fd_gradient_blocks(model, x, h=1e-5):
    """Central finite differences of the mean log-likelihood w.r.t. each
    component mean and variance."""
    k, d = model.means.shape
    w = model.weights.copy()
    mu = model.means.copy()
    var = model.variances.copy()
    grad_mu = np.empty((k, d))
    grad_var = np.empty((k, d))
    for a in range(k):
        for b in range(d):
            for target, out in ((mu, grad_mu), (var, grad_var)):
                orig = target[a, b]
                target[a, b] = orig + h
                up = brute_mean_loglik(w, mu, var, x)
                target[a, b] = orig - h
                down = brute_mean_loglik(w, mu, var, x)
                target[a, b] = orig
                out[a, b] = (up - down) / (2 * h)
    return grad_mu, grad_var


class TestGradientOracle:
    def test_blocks_match_finite_differences(self):
        # >= 20 random instances over the K/d/M grid, under 10 seconds
        start = time.monotonic()
        cases = list(itertools.product([1, 2, 4], [2, 3, 5], [1, 5, 20]))
        assert len(cases) >= 20
        for idx, (k, d, m) in enumerate(cases):
            rng = np.random.default_rng(100 + idx)
            model = random_model(rng, k, d)
            x = rng.normal(0.0, 1.5, size=(m, d))
            raw = encode_raw(model, x)
            mean_blocks = raw[: k * d].reshape(k, d)
            var_blocks = raw[k * d :].reshape(k, d)
            fd_mu, fd_var = fd_gradient_blocks(model, x)
            expect_mu = fd_mu / np.sqrt(model.weights)[:, None]
            expect_var = fd_var * model.variances * (np.sqrt(2.0 / model.weights))[:, None]
            assert np.allclose(mean_blocks, expect_mu, rtol=1e-5, atol=1e-8), (k, d, m)
            assert np.allclose(var_blocks, expect_var, rtol=1e-5, atol=1e-8), (k, d, m)
        assert time.monotonic() - start < 10.0


class TestStructure:
    def test_published_dimension(self, rng):
        model = random_model(rng, 16, 32)
        fv = encode(model, rng.normal(size=(30, 32)))
        assert len(fv) == 2 * 16 * 32 == 1024
        assert np.isclose(np.linalg.norm(fv.values), 1.0, atol=1e-9)

    def test_descriptors_at_the_mean(self):
        d = 4
        model = GmmModel(weights=[1.0], means=[[0.5] * d], variances=[[1.3] * d])
        raw = encode_raw(model, np.full((7, d), 0.5))
        assert np.array_equal(raw[:d], np.zeros(d))               # mean block exactly zero
        assert np.allclose(raw[d:], -1.0 / np.sqrt(2.0), atol=1e-12)

    def test_permutation_invariance_exact(self, rng):
        model = random_model(rng, 3, 4)
        x = rng.normal(size=(25, 4))
        perm = rng.permutation(25)
        assert np.array_equal(encode_raw(model, x), encode_raw(model, x[perm]))

    def test_duplication_invariance_exact(self, rng):
        model = random_model(rng, 4, 3)
        x = rng.normal(size=(11, 3))
        a = encode(model, x)
        b = encode(model, np.vstack([x, x]))
        assert np.array_equal(a.values, b.values)

    def test_weight_block_config_dimension(self, rng):
        model = random_model(rng, 4, 3)
        fv = encode(model, rng.normal(size=(9, 3)), include_weight_block=True)
        assert len(fv) == 2 * 4 * 3 + 4

    def test_single_descriptor(self, rng):
        model = random_model(rng, 2, 3)
        fv = encode(model, rng.normal(size=(1, 3)))
        assert len(fv) == 12
        assert np.isclose(np.linalg.norm(fv.values), 1.0, atol=1e-9)


class TestWeightGradient:
    def test_single_component_is_exactly_zero(self, rng):
        model = random_model(rng, 1, 3)
        x = rng.normal(size=(10, 3))
        assert np.array_equal(weight_gradient(model, x), np.zeros(1))

    def test_identical_components_vanish(self, rng):
        # identical densities make every responsibility equal its weight
        mu = rng.normal(size=3)
        var = rng.uniform(0.5, 1.5, size=3)
        model = GmmModel(weights=[0.3, 0.7], means=[mu, mu], variances=[var, var])
        g = weight_gradient(model, rng.normal(size=(15, 3)))
        assert np.abs(g).max() < 1e-12

    def test_direct_summation_oracle(self, rng):
        model = random_model(rng, 2, 3)
        x = rng.normal(size=(12, 3))
        expected = np.zeros(2)
        for row in x:
            gamma = brute_responsibilities(model.weights, model.means, model.variances, row)
            expected += gamma - model.weights
        expected /= 12 * np.sqrt(model.weights)
        assert np.allclose(weight_gradient(model, x), expected, atol=1e-12)


class TestNormalize:
    def test_hand_case(self):
        out = normalize(np.array([4.0, -9.0]))
        assert np.allclose(out, [2.0 / math.sqrt(13.0), -3.0 / math.sqrt(13.0)], atol=1e-15)

    def test_unit_norm(self, rng):
        for _ in range(10):
            v = rng.normal(size=17) * rng.uniform(0.01, 100)
            assert np.isclose(np.linalg.norm(normalize(v)), 1.0, atol=1e-9)

    def test_zero_stays_zero(self):
        assert np.array_equal(normalize(np.zeros(6)), np.zeros(6))
