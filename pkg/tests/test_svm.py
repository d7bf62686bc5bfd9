import numpy as np
import pytest

from tpfv.svm import (
    CoOccurrenceMatrix,
    SvmConfig,
    apply_co_weighting,
    estimate_cooccurrence,
    load_au_region_table,
    predict_multiclass,
    primal_objective,
    select_trajectories_sf,
    solve_dual,
    train_binary,
    train_multiclass_ovr,
)


def reference_objective(x, y, cfg):
    """Brute-force reference solve of the same objective with cvxpy."""
    import cvxpy as cp

    n, d = x.shape
    w = cp.Variable(d)
    v = cp.Variable()
    margins = cp.multiply(y, x @ w + v * cfg.bias_scale)
    loss = 0.5 * (cp.sum_squares(w) + cp.square(v)) + cfg.C * cp.sum(cp.pos(1 - margins))
    prob = cp.Problem(cp.Minimize(loss))
    prob.solve(solver=cp.CLARABEL)
    return float(prob.value)


class TestBinary:
    def test_separable_toy(self):
        pos = np.full((10, 1), 2.0)
        neg = np.full((10, 1), -2.0)
        w, b = train_binary(pos, neg, SvmConfig(C=100.0))
        assert w[0] * 2 + b > 0
        assert w[0] * -2 + b < 0
        # max-margin separator crosses zero
        assert abs(-b / w[0]) < 1e-6

    def test_duplicated_data_with_halved_c(self, rng):
        x = rng.normal(size=(30, 4))
        y = np.sign(x[:, 0] + 0.3 * rng.normal(size=30))
        y[y == 0] = 1
        pos, neg = x[y > 0], x[y < 0]
        cfg = SvmConfig(C=10.0, tol=1e-10, max_epochs=20000)
        w1, b1 = train_binary(pos, neg, cfg)
        cfg_half = SvmConfig(C=5.0, tol=1e-10, max_epochs=20000)
        w2, b2 = train_binary(np.repeat(pos, 2, axis=0), np.repeat(neg, 2, axis=0), cfg_half)
        probe = rng.normal(size=(20, 4))
        assert np.allclose(probe @ w1 + b1, probe @ w2 + b2, atol=1e-6)

    def test_objective_matches_reference(self, rng):
        pytest.importorskip("cvxpy")
        for seed in range(4):
            r = np.random.default_rng(seed)
            n = int(r.integers(10, 50))
            x = r.normal(size=(n, 5))
            y = np.where(x[:, 0] + 0.5 * r.normal(size=n) > 0, 1.0, -1.0)
            if len(set(y)) < 2:
                continue
            cfg = SvmConfig(C=float(r.uniform(0.5, 20)), tol=1e-9, max_epochs=50000, seed=seed)
            w, b, _, _ = solve_dual(x, y, cfg)
            mine = primal_objective(w, b, x, y, cfg)
            ref = reference_objective(x, y, cfg)
            assert mine <= ref * (1 + 1e-4) + 1e-8, (seed, mine, ref)
            assert abs(mine - ref) / max(abs(ref), 1e-12) < 1e-4

    def test_dual_objective_monotone_per_epoch(self, rng):
        x = rng.normal(size=(60, 6))
        y = np.where(x[:, 1] > 0, 1.0, -1.0)
        _, _, _, trace = solve_dual(x, y, SvmConfig(C=50.0, tol=1e-12, max_epochs=200))
        diffs = np.diff(np.asarray(trace))
        assert (diffs <= 1e-9).all()

    def test_separable_large_c_zero_training_error(self, rng):
        x = np.vstack([rng.normal(size=(25, 3)) + 4.0, rng.normal(size=(25, 3)) - 4.0])
        y = np.concatenate([np.ones(25), -np.ones(25)])
        w, b, _, _ = solve_dual(x, y, SvmConfig(C=1000.0))
        assert ((x @ w + b) * y > 0).all()

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_binary(np.ones((3, 2)), np.zeros((0, 2)))

    def test_deterministic_given_seed(self, rng):
        x = rng.normal(size=(40, 5))
        y = np.where(x[:, 2] > 0, 1.0, -1.0)
        a = solve_dual(x, y, SvmConfig(seed=4))
        b = solve_dual(x, y, SvmConfig(seed=4))
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]


class TestMulticlass:
    def test_three_separated_clusters(self, rng):
        centers = np.array([[0.0, 8.0], [8.0, -4.0], [-8.0, -4.0]])
        x_train = np.vstack([rng.normal(size=(30, 2)) + c for c in centers])
        y_train = np.repeat([0, 1, 2], 30)
        x_test = np.vstack([rng.normal(size=(20, 2)) + c for c in centers])
        y_test = np.repeat([0, 1, 2], 20)
        model = train_multiclass_ovr(x_train, y_train, SvmConfig(C=100.0))
        acc = (predict_multiclass(model, x_test) == y_test).mean()
        assert acc >= 0.95

    def test_single_example_per_class(self):
        x = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, -1.0]])
        y = np.array([0, 1, 2])
        model = train_multiclass_ovr(x, y, SvmConfig(C=100.0))
        assert list(predict_multiclass(model, x)) == [0, 1, 2]

    def test_scaling_inputs_with_rescaled_c(self, rng):
        x = np.vstack([rng.normal(size=(20, 3)) + 3.0, rng.normal(size=(20, 3)) - 3.0])
        y = np.repeat([0, 1], 20)
        s = 7.0
        cfg = SvmConfig(C=10.0, tol=1e-10, max_epochs=20000)
        cfg_scaled = SvmConfig(C=10.0 / s**2, bias_scale=s, tol=1e-10, max_epochs=20000)
        base = train_multiclass_ovr(x, y, cfg)
        scaled = train_multiclass_ovr(x * s, y, cfg_scaled)
        probe = np.vstack([rng.normal(size=(30, 3)) + 3.0, rng.normal(size=(30, 3)) - 3.0])
        assert np.array_equal(
            predict_multiclass(base, probe), predict_multiclass(scaled, probe * s)
        )

    def test_missing_class_examples(self):
        with pytest.raises(ValueError):
            train_multiclass_ovr(np.ones((3, 2)), np.array([0, 0, 0]))


class TestTrajectorySelection:
    def test_lip_corner_units_stay_in_mouth(self):
        mouth = set(range(48, 68))
        for au in (12, 15):
            assert set(select_trajectories_sf(au)) <= mouth

    def test_brow_units_stay_in_brows(self):
        brows = set(range(17, 27))
        for au in (1, 2, 4):
            assert set(select_trajectories_sf(au)) <= brows

    def test_full_face_fallback(self):
        table = {"*": tuple(range(68))}
        assert select_trajectories_sf(99, table) == tuple(range(68))

    def test_missing_au_is_an_error(self):
        with pytest.raises(ValueError, match="99"):
            select_trajectories_sf(99)

    def test_table_file_round_trip(self, tmp_path):
        path = tmp_path / "regions.json"
        path.write_text('{"5": [1, 2, 3]}')
        table = load_au_region_table(path)
        assert select_trajectories_sf(5, table) == (1, 2, 3)

    def test_all_12_bp4d_units_covered(self):
        table = load_au_region_table()
        for au in (1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24):
            assert len(select_trajectories_sf(au, table)) > 0


class TestCoOccurrence:
    def test_implication_gives_one(self):
        labels = np.array([[1, 1, 0], [1, 1, 1], [0, 0, 1], [1, 1, 0]])
        cm = estimate_cooccurrence(labels)
        assert cm.matrix[0, 1] == 1.0          # AU0 always comes with AU1
        assert cm.matrix[0, 0] == 1.0

    def test_independent_labels_approach_priors(self):
        rng = np.random.default_rng(0)
        labels = (rng.uniform(size=(20000, 3)) < np.array([0.5, 0.3, 0.7])).astype(int)
        cm = estimate_cooccurrence(labels)
        for i in range(3):
            for j in range(3):
                if i != j:
                    assert abs(cm.matrix[i, j] - cm.priors[j]) < 0.03

    def test_never_active_unit_gets_zero_row(self):
        labels = np.array([[1, 0], [1, 0], [0, 0]])
        cm = estimate_cooccurrence(labels)
        assert np.array_equal(cm.matrix[1], [0.0, 0.0])

    def test_priors_are_marginals(self):
        labels = np.array([[1, 0], [1, 1], [0, 1], [0, 1]])
        cm = estimate_cooccurrence(labels)
        assert np.allclose(cm.priors, [0.5, 0.75])


class TestCoWeighting:
    def make_matrix(self):
        return CoOccurrenceMatrix(
            matrix=np.array([[1.0, 1.0, 0.2], [0.5, 1.0, 0.4], [0.1, 0.3, 1.0]]),
            priors=np.array([0.4, 0.1, 0.3]),
        )

    def test_alpha_zero_is_exact_identity(self, rng):
        cm = self.make_matrix()
        s = rng.normal(size=(5, 3))
        assert np.array_equal(apply_co_weighting(s, cm, 0.0), s)

    def test_positive_evidence_raises_score(self):
        cm = CoOccurrenceMatrix(
            matrix=np.array([[1.0, 1.0], [0.5, 1.0]]), priors=np.array([0.5, 0.1])
        )
        s = np.array([8.0, -1.0])    # unit 0 strongly active, P(1|0)=1 >> p_1
        out = apply_co_weighting(s, cm, 0.5)
        assert out[1] > s[1]

    def test_hand_computed_three_unit_case(self):
        cm = self.make_matrix()
        s = np.array([0.7, -0.2, 1.1])
        alpha = 0.5
        sig = 1.0 / (1.0 + np.exp(-s))
        expected = s.copy()
        for j in range(3):
            adj = sum(sig[i] * (cm.matrix[i, j] - cm.priors[j]) for i in range(3) if i != j)
            expected[j] += alpha * adj
        assert np.allclose(apply_co_weighting(s, cm, alpha), expected, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_co_weighting(np.zeros(4), self.make_matrix(), 0.5)
