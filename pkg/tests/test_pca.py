import numpy as np
import pytest

from tpfv.pca import RankDeficientError, fit_pca, project


class TestFit:
    def test_data_on_x_axis(self, rng):
        x = np.zeros((50, 2))
        x[:, 0] = rng.normal(3.0, 2.0, size=50)
        model = fit_pca(x, d=1)
        assert np.allclose(np.abs(model.basis), [[1.0, 0.0]], atol=1e-9)
        assert model.basis[0, 0] > 0         # sign convention
        assert np.allclose(model.mean, x.mean(axis=0))

    def test_known_diagonal_covariance(self, rng):
        x = rng.normal(size=(10_000, 2)) * np.sqrt([4.0, 1.0])
        model = fit_pca(x, d=2)
        var = project(model, x).var(axis=0, ddof=1)
        # eigenvalue recovery within 5% at N = 10000
        assert abs(var[0] - 4.0) / 4.0 < 0.05
        assert abs(var[1] - 1.0) / 1.0 < 0.05
        # axis-aligned up to sampling noise
        assert abs(model.basis[0, 0]) > 0.99
        assert abs(model.basis[1, 1]) > 0.99

    def test_rank_deficiency_reports_achievable(self, rng):
        # 1-D subspace embedded in 3-D
        direction = np.array([1.0, 2.0, -1.0])
        x = rng.normal(size=(40, 1)) * direction
        with pytest.raises(RankDeficientError) as err:
            fit_pca(x, d=2)
        assert err.value.achievable == 1

    def test_orthonormal_basis(self, rng):
        x = rng.normal(size=(200, 8)) @ rng.normal(size=(8, 8))
        model = fit_pca(x, d=5)
        gram = model.basis @ model.basis.T
        assert np.allclose(gram, np.eye(5), atol=1e-6)

    def test_projected_covariance_is_diagonal(self, rng):
        x = rng.normal(size=(500, 6)) @ rng.normal(size=(6, 6))
        model = fit_pca(x, d=4)
        y = project(model, x)
        cov = np.cov(y.T)
        lam = cov.diagonal().max()
        off = cov - np.diag(cov.diagonal())
        assert np.abs(off).max() <= 1e-6 * lam

    def test_variance_never_grows(self, rng):
        x = rng.normal(size=(300, 5)) @ rng.normal(size=(5, 5))
        total_in = x.var(axis=0, ddof=1).sum()
        for d in (2, 5):
            model = fit_pca(x, d=d)
            total_out = project(model, x).var(axis=0, ddof=1).sum()
            assert total_out <= total_in + 1e-9
        # full-rank projection keeps all the variance
        model = fit_pca(x, d=5)
        assert np.isclose(project(model, x).var(axis=0, ddof=1).sum(), total_in)

    def test_determinism(self, rng):
        x = rng.normal(size=(120, 7))
        a = fit_pca(x, d=3)
        b = fit_pca(x, d=3)
        assert np.array_equal(a.basis, b.basis)
        assert np.array_equal(a.mean, b.mean)

    def test_needs_more_samples_than_dims(self, rng):
        with pytest.raises(ValueError):
            fit_pca(rng.normal(size=(3, 5)), d=3)


class TestProject:
    def test_mean_maps_to_zero(self, rng):
        x = rng.normal(size=(100, 4))
        model = fit_pca(x, d=2)
        assert np.allclose(project(model, model.mean), 0.0, atol=1e-12)

    def test_identity_basis_centers(self, rng):
        x = rng.normal(size=(60, 3))
        mean = x.mean(axis=0)
        from tpfv.datamodel import PcaModel

        model = PcaModel(mean=mean, basis=np.eye(3))
        v = rng.normal(size=3)
        assert np.allclose(project(model, v), v - mean, atol=1e-12)

    def test_matches_matrix_oracle(self, rng):
        x = rng.normal(size=(80, 6))
        model = fit_pca(x, d=4)
        v = rng.normal(size=6)
        oracle = np.array([model.basis[i] @ (v - model.mean) for i in range(4)])
        assert np.allclose(project(model, v), oracle, atol=1e-10)

    def test_affine(self, rng):
        x = rng.normal(size=(90, 5))
        model = fit_pca(x, d=3)
        u, v = rng.normal(size=5), rng.normal(size=5)
        a = 0.3
        lhs = project(model, a * u + (1 - a) * v)
        rhs = a * project(model, u) + (1 - a) * project(model, v)
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_dimension_mismatch(self, rng):
        model = fit_pca(rng.normal(size=(50, 4)), d=2)
        with pytest.raises(ValueError):
            project(model, np.zeros(5))

    def test_subsampled_fit_is_seeded(self, rng):
        x = rng.normal(size=(3000, 3))
        a = fit_pca(x, d=2, max_fit_samples=500, seed=11)
        b = fit_pca(x, d=2, max_fit_samples=500, seed=11)
        assert np.array_equal(a.basis, b.basis)

    def test_whitened_fit_unit_variance(self, rng):
        x = rng.normal(size=(2000, 3)) * np.array([5.0, 2.0, 0.5])
        model = fit_pca(x, d=3, whiten=True)
        var = project(model, x).var(axis=0, ddof=1)
        assert np.allclose(var, 1.0, atol=0.05)
