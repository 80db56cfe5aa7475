import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fives import diffcore as dc
from fives.checks import ToyConfig, fives_gradcheck


def _grad(fn, x):
    store = dc.ParamStore({"x": x})
    dc.backward(fn(store.var("x")), store)
    return store.grads["x"]


class TestSigmoidLogit:
    def test_known_values(self):
        assert dc.sigmoid(np.array(0.0)) == 0.5
        assert dc.sigmoid(np.array(-1000.0)) == 0.0
        assert dc.sigmoid(np.array(1.0)) == pytest.approx(0.7310585786, abs=1e-10)

    def test_stable_at_extremes(self):
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            out = dc.sigmoid(np.array([-700.0, 700.0, -1e5, 1e5]))
        assert np.all(np.isfinite(out))

    def test_logit_values(self):
        assert dc.logit(np.array(0.5)) == 0.0
        assert dc.logit(dc.sigmoid(np.array(3.0))) == pytest.approx(3.0, abs=1e-9)
        top = dc.logit(np.array(1.0))
        assert np.isfinite(top) and top == pytest.approx(np.log((1 - 1e-12) / 1e-12))

    def test_inverse_pair_on_grid(self):
        x = np.linspace(-20, 20, 401)
        np.testing.assert_allclose(dc.logit(dc.sigmoid(x)), x, atol=1e-9)

    def test_sigmoid_gradient(self):
        x = np.array([-2.0, 0.0, 1.5])
        s = 1 / (1 + np.exp(-x))
        np.testing.assert_allclose(_grad(lambda v: dc.sum_(dc.sigmoid(v)), x), s * (1 - s))


class TestLinear:
    def test_identity(self):
        x = np.array([1.5, -2.0])
        np.testing.assert_array_equal(dc.linear(x, np.eye(2), np.zeros(2)), x)

    def test_zero_input_gives_bias(self):
        np.testing.assert_array_equal(dc.linear(np.zeros(3), np.ones((2, 3)), np.array([4.0, 5.0])), [4.0, 5.0])

    def test_hand_case(self):
        out = dc.linear(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2))
        np.testing.assert_array_equal(out, [3.0, 7.0])

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(dc.DimensionError, match=r"\(3,\).*\(2, 2\)"):
            dc.linear(np.ones(3), np.ones((2, 2)), np.zeros(2))

    def test_batched(self):
        x = np.arange(6.0).reshape(3, 2)
        W = np.array([[1.0, 0.0], [1.0, 1.0]])
        np.testing.assert_array_equal(dc.linear(x, W, np.zeros(2)), x @ W.T)


class TestWeightedMean:
    rows = np.array([[1.0, 3.0], [3.0, 1.0]])

    def test_one_hot_selects(self):
        msgs = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(dc.weighted_mean_aggregate(msgs, np.array([0.0, 1.0, 0.0])), msgs[1])

    def test_uniform_is_mean(self):
        np.testing.assert_array_equal(dc.weighted_mean_aggregate(self.rows, np.ones(2)), [2.0, 2.0])

    def test_half_weights(self):
        rows = np.array([[0.0, 4.0], [2.0, 0.0]])
        np.testing.assert_allclose(dc.weighted_mean_aggregate(rows, np.array([0.5, 0.5])), [1.0, 2.0])

    def test_all_zero_weights(self):
        np.testing.assert_array_equal(dc.weighted_mean_aggregate(self.rows, np.zeros(2)), [0.0, 0.0])

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            dc.weighted_mean_aggregate(self.rows, np.array([1.0, -1.0]))

    def test_matrix_weights_match_rowwise(self):
        rng = np.random.default_rng(0)
        msgs, W = rng.normal(size=(4, 3)), rng.random((5, 4))
        out = dc.weighted_mean_aggregate(msgs, W)
        for i in range(5):
            np.testing.assert_allclose(out[i], dc.weighted_mean_aggregate(msgs, W[i]))


class TestBackward:
    def test_sum_of_squares(self):
        np.testing.assert_array_equal(_grad(lambda v: dc.sum_(v * v), np.array([1.0, 2.0])), [2.0, 4.0])

    def test_independent_loss(self):
        store = dc.ParamStore({"x": np.ones(3), "y": np.ones(2)})
        dc.backward(dc.sum_(store.var("y") * 2.0), store)
        np.testing.assert_array_equal(store.grads["x"], 0.0)

    def test_non_scalar_loss_rejected(self):
        store = dc.ParamStore({"x": np.ones(3)})
        with pytest.raises(dc.GradientContractError):
            dc.backward(store.var("x") * 2.0, store)

    def test_plain_array_rejected(self):
        with pytest.raises(dc.GradientContractError):
            dc.backward(np.array(1.0))

    def test_shared_leaf_accumulates(self):
        # x used twice: d/dx (x*x + 3x) = 2x + 3
        np.testing.assert_allclose(_grad(lambda v: dc.sum_(v * v + v * 3.0), np.array([1.0, -1.0])), [5.0, 1.0])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_linearity(self, seed):
        rng = np.random.default_rng(seed)
        x, w1, w2 = rng.normal(size=4), rng.normal(size=4), rng.normal(size=4)

        def f1(v):
            return dc.sum_(dc.sigmoid(v * w1))

        def f2(v):
            return dc.sum_(dc.softplus(v) * w2)

        both = _grad(lambda v: f1(v) + f2(v), x)
        np.testing.assert_allclose(both, _grad(f1, x) + _grad(f2, x), rtol=1e-12, atol=1e-14)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 4))
        W = rng.normal(size=(4, 4))

        def f(v):
            return dc.sum_(dc.sigmoid(dc.einsum("ij,jk->ik", v, W)))

        a, b = _grad(f, x), _grad(f, x)
        assert np.array_equal(a, b)

    def test_einsum_with_ellipsis(self):
        rng = np.random.default_rng(2)
        msgs = rng.normal(size=(3, 4, 2))
        w = rng.random(4)

        def loss(store):
            return dc.sum_(dc.weighted_mean_aggregate(store.var("m"), store.var("w")))

        store = dc.ParamStore({"m": msgs, "w": w})
        assert dc.finite_diff_check(loss, store).max_rel_error < 1e-7


class TestFiniteDiff:
    def test_quadratic(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])
        store = dc.ParamStore({"x": np.array([0.3, -0.7])})

        def loss(s):
            x = s.var("x")
            return dc.sum_(x * dc.einsum("ij,j->i", A, x))

        assert dc.finite_diff_check(loss, store).max_rel_error < 1e-9

    def test_step_bounds(self):
        store = dc.ParamStore({"x": np.ones(1)})
        with pytest.raises(ValueError):
            dc.finite_diff_check(lambda s: dc.sum_(s.var("x")), store, h=1e-2)

    def test_sign_bug_detected(self):
        store = dc.ParamStore({"x": np.array([0.4, 1.2])})
        with dc.injected_gradient_bug():
            rep = dc.finite_diff_check(lambda s: dc.sum_(s.var("x") * s.var("x")), store)
        assert rep.max_rel_error == pytest.approx(2.0)

    def test_bug_flag_restored(self):
        with dc.injected_gradient_bug():
            pass
        np.testing.assert_array_equal(_grad(lambda v: dc.sum_(v), np.ones(2)), [1.0, 1.0])

    def test_subsample_respects_minimum(self):
        store = dc.ParamStore({"a": np.zeros(300), "b": np.zeros(300)})
        rep = dc.finite_diff_check(lambda s: dc.sum_(dc.softplus(s.var("a")) + s.var("b")), store, max_coords=50)
        assert rep.n_checked >= 200

    def test_fives_toy_model(self):
        rep = fives_gradcheck(ToyConfig(m=3, d=2, K=2, n_rows=4))
        assert rep.max_rel_error < 1e-4
        assert set(rep.per_param) == {"W_F", "W_node", "W_head", "b_head", "H"}

    def test_fives_toy_model_with_injected_bug(self):
        with dc.injected_gradient_bug():
            rep = fives_gradcheck()
        assert rep.max_rel_error == pytest.approx(2.0, abs=1e-6)


class TestOptimizers:
    def test_sgd(self):
        store = dc.ParamStore({"t": np.array([1.0])})
        store.grads["t"][:] = 2.0
        dc.optimizer_step(store, "sgd", 0.1)
        np.testing.assert_allclose(store["t"], [0.8])
        np.testing.assert_array_equal(store.grads["t"], 0.0)

    @pytest.mark.parametrize("rule", ["sgd", "adam"])
    def test_zero_gradient_no_change(self, rule):
        store = dc.ParamStore({"t": np.array([1.0, -2.0])})
        dc.optimizer_step(store, rule, 0.1)
        np.testing.assert_array_equal(store["t"], [1.0, -2.0])

    def test_adam_first_step(self):
        store = dc.ParamStore({"t": np.array([0.5])})
        store.grads["t"][:] = 1.0
        dc.optimizer_step(store, "adam", 0.001)
        # bias-corrected m/sqrt(v) = g/|g| = 1 at t = 1
        assert store["t"][0] == pytest.approx(0.5 - 0.001 / (1 + 1e-8), abs=1e-15)

    def test_weight_decay_added(self):
        store = dc.ParamStore({"t": np.array([2.0])})
        dc.optimizer_step(store, "sgd", 0.5, weight_decay=0.1)
        np.testing.assert_allclose(store["t"], [2.0 - 0.5 * 0.2])

    def test_nan_gradient_aborts(self):
        store = dc.ParamStore({"t": np.array([1.0])})
        store.grads["t"][:] = np.nan
        with pytest.raises(dc.NumericError):
            dc.optimizer_step(store, "adam", 0.1)
        np.testing.assert_array_equal(store["t"], [1.0])

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            dc.make_optimizer("rmsprop", ["t"], 0.1)


class TestParamStore:
    def test_checkpoint_round_trip(self, tmp_path):
        store = dc.ParamStore({"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])})
        store.save(tmp_path / "p.json")
        back = dc.ParamStore.load(tmp_path / "p.json")
        assert back.names() == ["a", "b"]
        np.testing.assert_array_equal(back["a"], store["a"])

    def test_duplicate_name(self):
        store = dc.ParamStore({"a": np.ones(1)})
        with pytest.raises(KeyError):
            store.add("a", np.ones(1))

    def test_gradient_shapes_match(self):
        store = dc.ParamStore({"a": np.ones((2, 3)), "b": np.ones(4)})
        assert all(store.grads[n].shape == store[n].shape for n in store)
