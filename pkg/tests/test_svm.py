import numpy as np
import pytest
from hypothesis import given, strategies as st

from taillight import svm

from oracles import svm_grid_minimum, svm_objective


def raw_model(W, c=1.0, margin=100.0, classes=None):
    W = np.asarray(W, dtype=np.float64)
    return svm.SvmModel(W, c, margin, tuple(classes or range(W.shape[0])))


def small_instance(seed):
    """n <= 6, d <= 2, k <= 3; every class present."""
    rng = np.random.default_rng(seed)
    k = 2 + seed % 2
    d = 1 + (seed // 2) % 2
    n = int(rng.integers(k, 7))
    y = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    X = rng.normal(size=(n, d)) * 30 + y[:, None] * 20
    c = (0.1, 1.0, 10.0)[seed % 3]
    return X, y, k, c


class TestObjective:
    def test_zero_weights(self):
        X = np.random.default_rng(0).normal(size=(7, 3))
        y = np.array([0, 1, 2, 3, 0, 1, 2])
        for c in (0.5, 2.0):
            assert svm.objective(raw_model(np.zeros((4, 3)), c), X, y) == pytest.approx(100 * c)

    def test_zero_slack(self):
        model = raw_model([[200.0], [-200.0]])
        X, y = np.array([[1.0], [-1.0]]), [0, 1]
        assert not svm.slack_vector(model, X, y).any()
        assert svm.objective(model, X, y) == 40000.0

    def test_hand_evaluated_three_samples(self):
        model = raw_model([[1.0], [-1.0]], c=2.0)
        X, y = np.array([[1.0], [-2.0], [60.0]]), [0, 0, 1]
        assert svm.slack_vector(model, X, y).tolist() == [98.0, 104.0, 220.0]
        assert svm.objective(model, X, y) == pytest.approx(1.0 + 2.0 / 3.0 * 422.0, abs=1e-12)

    @given(st.integers(0, 2 ** 32))
    def test_matches_oracle_objective(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(3, 2)) * 20
        X = rng.normal(size=(5, 2)) * 3
        y = rng.integers(0, 3, 5)
        model = raw_model(W, c=0.7)
        assert svm.objective(model, X, y) == pytest.approx(svm_objective(W, X, y, 0.7), rel=1e-12)

    @given(st.integers(0, 2 ** 32))
    def test_slack_consistency(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(4, 3)) * 50
        X = rng.normal(size=(6, 3))
        y = rng.integers(0, 4, 6)
        xi = svm.slack_vector(raw_model(W), X, y)
        for m in range(6):
            s = W @ X[m]
            viol = [100.0 * (j != y[m]) + s[j] - s[y[m]] for j in range(4)]
            assert xi[m] >= 0 and all(v <= xi[m] + 1e-9 for v in viol)
            assert xi[m] == 0 or abs(max(viol) - xi[m]) < 1e-9


class TestFit:
    def test_two_point_instance(self):
        X = np.array([[1.0, 0.0]] * 10 + [[-1.0, 0.0]] * 10)
        y = np.array([0] * 10 + [1] * 10)
        model = svm.fit(X, y, c=1.0, epochs=2000, classes=[0, 1])
        assert (svm.predict(model, X) == y).all()
        s = svm.decision_scores(model, X)
        assert (s[:10, 0] > s[:10, 1]).all() and (s[10:, 1] > s[10:, 0]).all()
        # optimum: w0 = -w1 = (1, 0), objective 1 + (100 - 2) = 99
        assert svm.objective(model, X, y) == pytest.approx(99.0, rel=0.05)
        oracle = svm_grid_minimum(model.standardize(X), y, 2, 1.0)
        assert svm.objective(model, X, y) <= oracle * 1.05

    @pytest.mark.parametrize("seed", range(12))
    def test_grid_oracle_small_instances(self, seed):
        X, y, k, c = small_instance(seed)
        model = svm.fit(X, y, c=c, epochs=20000, seed=seed, classes=range(k), standardize=False)
        got = svm.objective(model, X, y)
        want = svm_grid_minimum(X, y, k, c)
        assert abs(got - want) <= 0.05 * want, (got, want)

    def test_never_worse_than_zero(self):
        X, y, k, c = small_instance(3)
        model = svm.fit(X, y, c=c, epochs=3, classes=range(k), standardize=False)
        assert svm.objective(model, X, y) <= 100 * c

    def test_history_non_increasing(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, 5))
        y = np.arange(40) % 4
        model = svm.fit(X, y, c=1.0, epochs=30)
        assert len(model.history) == 31
        assert all(b <= a + 1e-6 for a, b in zip(model.history, model.history[1:]))
        assert svm.objective(model, X, y) == pytest.approx(model.history[-1])

    def test_tiny_c_shrinks_weights(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(20, 3))
        y = np.arange(20) % 4
        model = svm.fit(X, y, c=1e-6, epochs=20)
        assert np.abs(model.W).max() < 1e-2

    def test_four_by_250_shape(self):
        rng = np.random.default_rng(6)
        model = svm.fit(rng.normal(size=(40, 250)), np.arange(40) % 4, epochs=2)
        assert model.W.shape == (4, 250)

    def test_separable_toy_zero_error(self):
        rng = np.random.default_rng(7)
        centers = rng.normal(size=(4, 6)) * 10
        y = np.repeat(np.arange(4), 15)
        X = centers[y] + rng.normal(size=(60, 6))
        model = svm.fit(X, y, c=10.0, epochs=100)
        assert (svm.predict(model, X) == y).all()

    def test_deterministic(self):
        X, y, k, c = small_instance(5)
        a = svm.fit(X, y, c=c, epochs=50, seed=3, classes=range(k))
        b = svm.fit(X, y, c=c, epochs=50, seed=3, classes=range(k))
        assert a.W.tobytes() == b.W.tobytes()

    @pytest.mark.parametrize("kw,msg", [
        ({"c": 0.0}, "c must be positive"),
        ({"epochs": 0}, "epochs"),
    ])
    def test_bad_arguments(self, kw, msg):
        with pytest.raises(ValueError, match=msg):
            svm.fit(np.zeros((4, 2)), [0, 1, 2, 3], **kw)

    def test_missing_class(self):
        with pytest.raises(ValueError, match="missing"):
            svm.fit(np.zeros((3, 2)), [0, 1, 2])

    def test_non_finite(self):
        X = np.zeros((4, 2))
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            svm.fit(X, [0, 1, 2, 3])


class TestPrediction:
    def test_zero_input(self):
        model = raw_model(np.random.default_rng(0).normal(size=(4, 3)))
        assert not svm.decision_scores(model, np.zeros(3)).any()

    def test_orthonormal_rows(self):
        model = raw_model(np.eye(4))
        assert svm.predict(model, np.eye(4)[2]) == 2

    def test_tie_lowest_id(self):
        model = raw_model(np.zeros((4, 2)))
        assert svm.predict(model, np.ones(2)) == 0

    def test_naive_dot_products(self):
        rng = np.random.default_rng(1)
        W, x = rng.normal(size=(4, 7)), rng.normal(size=7)
        want = [sum(W[i, j] * x[j] for j in range(7)) for i in range(4)]
        assert np.allclose(svm.decision_scores(raw_model(W), x), want, atol=1e-12, rtol=0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            svm.decision_scores(raw_model(np.eye(4)), np.zeros(3))

    def test_scale_invariance_1000_probes(self):
        rng = np.random.default_rng(2)
        W = rng.normal(size=(4, 5))
        probes = rng.normal(size=(1000, 5))
        base = svm.predict(raw_model(W), probes)
        for a in rng.uniform(1e-3, 1e3, 5):
            assert np.array_equal(svm.predict(raw_model(W * a), probes), base)

    def test_standardization_passthrough(self):
        X = np.column_stack([np.arange(6.0), np.ones(6)])
        mean, scale = svm.standardization(X)
        assert mean[1] == 0 and scale[1] == 1
        assert np.array_equal(svm.append_bias(np.zeros((2, 3)))[:, 3], [1.0, 1.0])


class TestFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        model = svm.fit(rng.normal(size=(12, 3)), np.arange(12) % 4, c=2.5, epochs=5)
        path = tmp_path / "m.tlsv"
        svm.save_model(path, model)
        raw = path.read_bytes()
        assert raw[:4] == b"TLSV" and len(raw) == 32 + 8 * (12 + 6)
        back = svm.load_model(path)
        assert np.array_equal(back.W, model.W) and back.c == 2.5 and back.margin_scale == 100.0
        assert np.array_equal(back.mean, model.mean) and np.array_equal(back.scale, model.scale)
        x = rng.normal(size=(9, 3))
        assert np.array_equal(svm.predict(back, x), svm.predict(model, x))

    @pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-8], lambda b: b[:20]])
    def test_corrupt(self, tmp_path, mutate):
        path = tmp_path / "m.tlsv"
        svm.save_model(path, raw_model(np.eye(4)))
        path.write_bytes(mutate(path.read_bytes()))
        with pytest.raises(ValueError):
            svm.load_model(path)

    def test_non_contiguous_classes(self, tmp_path):
        with pytest.raises(ValueError):
            svm.save_model(tmp_path / "m", raw_model(np.eye(2), classes=(1, 3)))
