import numpy as np
import pytest

from tpfv.datamodel import GmmModel, VARIANCE_FLOOR
from tpfv.gmm import EmConfig, _m_step, fit_gmm, log_likelihood, responsibilities


def two_cluster_data(rng, n=500, sep=10.0, dim=2):
    a = rng.normal(size=(n, dim)) + sep
    b = rng.normal(size=(n, dim)) - sep
    return np.vstack([a, b])


class TestFit:
    def test_single_component_closed_form(self, rng):
        x = rng.normal(2.0, 3.0, size=(400, 3))
        model, log = fit_gmm(x, EmConfig(n_components=1))
        assert model.weights[0] == 1.0
        assert np.allclose(model.means[0], x.mean(axis=0), atol=1e-12)
        biased_var = x.var(axis=0)   # 1/N estimator, the ML choice
        assert np.allclose(model.variances[0], np.maximum(biased_var, VARIANCE_FLOOR), atol=1e-12)

    def test_two_cluster_recovery(self, rng):
        x = two_cluster_data(rng)
        model, _ = fit_gmm(x, EmConfig(n_components=2, seed=3))
        order = np.argsort(model.means[:, 0])
        assert np.abs(model.means[order[0]] - (-10.0)).max() < 0.2
        assert np.abs(model.means[order[1]] - 10.0).max() < 0.2
        assert np.abs(model.weights - 0.5).max() < 0.05

    def test_monotone_log_likelihood_many_datasets(self):
        # 50 random datasets; mean log-likelihood may never drop by more
        # than 1e-10 per observation between iterations
        for seed in range(50):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(40, 120))
            d = int(rng.integers(1, 5))
            k = int(rng.integers(1, 5))
            x = rng.normal(size=(n, d)) * rng.uniform(0.5, 2.0, size=d)
            _, log = fit_gmm(x, EmConfig(n_components=k, seed=seed, max_iters=40))
            trace = np.asarray(log.mean_log_likelihood)
            assert (np.diff(trace) >= -1e-10).all(), f"seed {seed}: {trace}"

    def test_deterministic_given_seed(self, rng):
        x = rng.normal(size=(200, 3))
        m1, _ = fit_gmm(x, EmConfig(n_components=4, seed=9))
        m2, _ = fit_gmm(x, EmConfig(n_components=4, seed=9))
        assert np.array_equal(m1.means, m2.means)
        assert np.array_equal(m1.weights, m2.weights)
        assert np.array_equal(m1.variances, m2.variances)

    def test_variance_floor_enforced(self, rng):
        x = np.repeat(rng.normal(size=(4, 2)), 10, axis=0)   # exact duplicates
        model, _ = fit_gmm(x, EmConfig(n_components=2, seed=0, max_iters=10))
        assert (model.variances >= VARIANCE_FLOOR).all()

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError):
            fit_gmm(rng.normal(size=(3, 2)), EmConfig(n_components=4))

    def test_empty_component_is_reseeded(self, rng):
        # direct M-step with a responsibility column forced to zero
        x = rng.normal(size=(30, 2))
        resp = np.zeros((30, 3))
        resp[:, 0] = 0.7
        resp[:, 1] = 0.3
        events = []
        with pytest.warns(UserWarning, match="reseeded"):
            w, mu, var = _m_step(x, resp, np.random.default_rng(0), VARIANCE_FLOOR,
                                 reseed_log=events, iteration=5)
        assert events == [{"component": 2, "iteration": 5}]
        assert np.isclose(w.sum(), 1.0)
        assert (var[2] == VARIANCE_FLOOR).all()
        # the reseeded mean is one of the data points
        assert any(np.allclose(mu[2], row) for row in x)

    def test_iteration_log_recorded(self, rng):
        x = two_cluster_data(rng, n=100)
        _, log = fit_gmm(x, EmConfig(n_components=2, seed=1))
        assert log.n_iters >= 2
        assert log.converged


class TestResponsibilities:
    def test_single_component(self):
        model = GmmModel(weights=[1.0], means=[[0.0]], variances=[[1.0]])
        assert np.array_equal(responsibilities(model, [0.3]), [1.0])

    def test_separated_components_saturate(self):
        model = GmmModel(weights=[0.5, 0.5], means=[[0.0], [100.0]], variances=[[1.0], [1.0]])
        gamma = responsibilities(model, [0.0])
        assert gamma[0] > 0.999
        assert np.isclose(gamma.sum(), 1.0, atol=1e-12)

    def test_midpoint_symmetry(self):
        model = GmmModel(weights=[0.5, 0.5], means=[[-2.0], [2.0]], variances=[[1.0], [1.0]])
        gamma = responsibilities(model, [0.0])
        assert np.allclose(gamma, [0.5, 0.5], atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        model, _ = fit_gmm(rng.normal(size=(100, 2)), EmConfig(n_components=3, seed=0))
        gamma = responsibilities(model, rng.normal(size=(50, 2)) * 40.0)
        assert np.allclose(gamma.sum(axis=1), 1.0, atol=1e-12)
        assert (gamma >= 0).all()

    def test_extreme_points_do_not_underflow(self):
        model = GmmModel(weights=[0.5, 0.5], means=[[0.0], [1.0]], variances=[[1.0], [1.0]])
        gamma = responsibilities(model, [1e6])
        assert np.isfinite(gamma).all()
        assert np.isclose(gamma.sum(), 1.0, atol=1e-12)


class TestLogLikelihood:
    def test_unit_density_point(self):
        # variance 1/(2*pi) makes the density exactly 1 at the mean per dim
        var = 1.0 / (2.0 * np.pi)
        for d in (1, 2, 5):
            model = GmmModel(weights=[1.0], means=[[0.0] * d], variances=[[var] * d])
            assert abs(log_likelihood(model, [[0.0] * d])) < 1e-12

    def test_duplicating_data_doubles_value(self, rng):
        x = rng.normal(size=(40, 3))
        model, _ = fit_gmm(x, EmConfig(n_components=2, seed=0))
        single = log_likelihood(model, x)
        double = log_likelihood(model, np.vstack([x, x]))
        assert np.isclose(double, 2.0 * single, rtol=1e-12)

    def test_always_finite(self, rng):
        model, _ = fit_gmm(rng.normal(size=(60, 2)), EmConfig(n_components=2, seed=0))
        assert np.isfinite(log_likelihood(model, rng.normal(size=(10, 2)) * 1e3))

    def test_empty_data_rejected(self):
        model = GmmModel(weights=[1.0], means=[[0.0]], variances=[[1.0]])
        with pytest.raises(ValueError):
            log_likelihood(model, np.zeros((0, 1)))
