import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from numkernel import (
    BatchNormState, ParamStore, Tape, Tensor, adam_step, add, batchnorm, bce_with_logits, concat, default_dtype,
    dropout, gather, grad_check, l2_normalize_rows, linear, matmul, mean_all, mul, precision, relu, rowdot,
    segment_mean, segment_sum, sigmoid, softmax_cross_entropy, sum_all, xavier_uniform, zeros,
)
from utils.errors import DivergenceError, InvalidArgumentError


def param(array, name="p"):
    return Tensor(np.asarray(array, dtype=default_dtype()), requires_grad=True, name=name)


class TestTape:
    def test_no_tape_no_records(self):
        x = param([1.0, 2.0])
        y = mul(x, x)
        assert not y.requires_grad
        assert y.data.tolist() == [1.0, 4.0]

    def test_product_rule(self):
        with precision("double"):
            x = param([[1.0, -2.0, 3.0]], "x")
            with Tape() as tape:
                loss = sum_all(mul(x, x))
                grads = tape.gradient(loss, {"x": x})
        np.testing.assert_allclose(grads["x"], [[2.0, -4.0, 6.0]])

    def test_fan_out_accumulates(self):
        with precision("double"):
            x = param([2.0], "x")
            with Tape() as tape:
                loss = sum_all(add(mul(x, x), mul(x, 3.0)))
                grads = tape.gradient(loss, [x])
        np.testing.assert_allclose(grads[0], [7.0])

    def test_unreached_parameters_get_zeros(self):
        x, y = param([1.0], "x"), param([[1.0, 2.0]], "y")
        with Tape() as tape:
            loss = sum_all(mul(x, 2.0))
            grads = tape.gradient(loss, {"x": x, "y": y})
        assert grads["y"].tolist() == [[0.0, 0.0]]

    def test_non_scalar_loss_rejected(self):
        x = param([1.0, 2.0])
        with Tape() as tape:
            y = mul(x, x)
            with pytest.raises(InvalidArgumentError):
                tape.gradient(y, [x])

    def test_tapes_are_per_thread(self):
        errors = []

        def work(seed):
            try:
                rng = np.random.default_rng(seed)
                w = param(rng.standard_normal((3, 2)), "w")
                x = Tensor(rng.standard_normal((4, 3)))
                for _ in range(20):
                    with Tape() as tape:
                        loss = sum_all(matmul(x, w))
                        g = tape.gradient(loss, [w])[0]
                    np.testing.assert_allclose(g, np.repeat(x.data.sum(axis=0)[:, None], 2, axis=1), rtol=1e-5)
            except Exception as e:
                errors.append(e)

        threads = [threading.Thread(target=work, args=(s,)) for s in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors

    def test_non_finite_forward_raises_divergence(self):
        x = param([1e30])
        with pytest.raises(DivergenceError):
            mul(x, x)


class TestPrimitives:
    def test_gather_scatters_back(self):
        with precision("double"):
            table = param(np.arange(6.0).reshape(3, 2), "t")
            with Tape() as tape:
                loss = sum_all(gather(table, [0, 2, 2]))
                g = tape.gradient(loss, [table])[0]
        assert g.tolist() == [[1, 1], [0, 0], [2, 2]]

    def test_gather_index_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            gather(param(np.zeros((2, 2))), [2])

    def test_segment_sum_and_mean(self):
        x = Tensor(np.array([[1.0], [2.0], [4.0]]))
        assert segment_sum(x, [0, 0, 2], 3).data.ravel().tolist() == [3.0, 0.0, 4.0]
        assert segment_mean(x, [0, 0, 2], 3).data.ravel().tolist() == [1.5, 0.0, 4.0]

    def test_concat_splits_gradient(self):
        with precision("double"):
            a, b = param(np.ones((2, 1)), "a"), param(np.ones((2, 3)), "b")
            with Tape() as tape:
                loss = sum_all(mul(concat([a, b], axis=1), np.array([1.0, 2.0, 3.0, 4.0])))
                ga, gb = tape.gradient(loss, [a, b]).values()
        assert ga.tolist() == [[1.0], [1.0]]
        assert gb.tolist() == [[2.0, 3.0, 4.0]] * 2

    def test_relu_and_rowdot_gradients(self):
        with precision("double"):
            a = param(np.array([[1.0, -2.0], [0.5, 3.0]]), "a")
            b = param(np.array([[2.0, 1.0], [-1.0, 1.0]]), "b")
            with Tape() as tape:
                loss = sum_all(rowdot(relu(a), b))
                ga, gb = tape.gradient(loss, [a, b]).values()
        assert ga.tolist() == [[2.0, 0.0], [-1.0, 1.0]]
        assert gb.tolist() == [[1.0, 0.0], [0.5, 3.0]]

    def test_dropout_identity_outside_training(self):
        x = Tensor(np.ones((5, 4)))
        assert dropout(x, 0.5, None, train=False) is x
        assert dropout(x, 0.0, None, train=True) is x
        y = dropout(x, 0.5, np.random.default_rng(0), train=True)
        assert set(np.unique(y.data).tolist()) <= {0.0, 2.0}
        with pytest.raises(InvalidArgumentError):
            dropout(x, 1.0, None, train=True)

    def test_l2_rows_have_unit_norm(self):
        y = l2_normalize_rows(Tensor(np.array([[3.0, 4.0], [0.0, 0.0]])))
        np.testing.assert_allclose(y.data, [[0.6, 0.8], [0.0, 0.0]], atol=1e-6)

    def test_batchnorm_modes(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 6.0]]))
        gamma, beta = param(np.ones(2), "g"), param(np.zeros(2), "b")
        state = BatchNormState(2)
        out = batchnorm(x, gamma, beta, state, train=True)
        np.testing.assert_allclose(out.data.mean(axis=0), [0.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(state.running_mean, [0.2, 0.4], rtol=1e-6)
        np.testing.assert_allclose(state.running_var, [0.9 + 0.1 * 2.0, 0.9 + 0.1 * 8.0], rtol=1e-6)
        frozen = batchnorm(x, gamma, beta, state, train=False)
        np.testing.assert_allclose(frozen.data[0, 0], (1.0 - 0.2) / np.sqrt(1.1 + 1e-5), rtol=1e-5)


class TestLosses:
    def test_bce_matches_closed_form(self):
        logits = Tensor(np.array([0.0, 2.0, -1.0]))
        y = np.array([1, 0, 1])
        expected = np.mean([np.log(2.0), np.log1p(np.exp(2.0)), np.log1p(np.exp(1.0))])
        assert bce_with_logits(logits, y).item() == pytest.approx(expected, rel=1e-5)

    def test_bce_mask_zeroes_loss_and_gradient(self):
        with precision("double"):
            logits = param(np.array([[0.5, -3.0], [1.0, 2.0]]), "z")
            mask = np.array([[True, False], [True, True]])
            with Tape() as tape:
                loss = bce_with_logits(logits, np.array([[1, 0], [0, 1]]), mask=mask)
                g = tape.gradient(loss, [logits])[0]
        assert g[0, 1] == 0.0
        full = bce_with_logits(Tensor(np.array([0.5, 1.0, 2.0])), np.array([1, 0, 1])).item()
        assert loss.item() == pytest.approx(full)

    def test_bce_rejects_empty_mask(self):
        with pytest.raises(InvalidArgumentError):
            bce_with_logits(Tensor(np.zeros(2)), np.zeros(2), mask=np.zeros(2, bool))

    def test_bce_is_finite_for_huge_logits(self):
        loss = bce_with_logits(Tensor(np.array([1e4, -1e4])), np.array([0, 1]))
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(30.0, rel=1e-6)

    def test_softmax_cross_entropy_uniform(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((2, 4))), [1, 3])
        assert loss.item() == pytest.approx(np.log(4.0), rel=1e-6)

    @given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10 ** 6))
    def test_grad_check_small_composition(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        with precision("double"):
            store = ParamStore()
            w = store.create("w", (cols, 3), xavier_uniform, rng)
            b = store.create("b", (3,), zeros, rng)
            x = Tensor(rng.standard_normal((rows, cols)))
            targets = rng.integers(0, 2, size=(rows, 3))

            def loss_fn():
                z = linear(x, w, b)
                return add(bce_with_logits(z, targets), mean_all(mul(sigmoid(z), z)))

            assert grad_check(loss_fn, store) < 1e-6


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        store = ParamStore()
        p = store.create("p", (3,), zeros)
        adam_step(store, {"p": np.array([0.5, -2.0, 0.0])}, lr=0.1)
        np.testing.assert_allclose(p.data, [-0.1, 0.1, 0.0], atol=1e-6)
        assert store.step == 1

    def test_minimises_quadratic(self):
        with precision("double"):
            store = ParamStore()
            p = store.create("p", (2,), zeros)
            target = np.array([1.5, -0.5])
            for _ in range(2000):
                with Tape() as tape:
                    diff = add(p, -target)
                    loss = sum_all(mul(diff, diff))
                    grads = tape.gradient(loss, store.params)
                adam_step(store, grads, lr=0.01)
        np.testing.assert_allclose(p.data, target, atol=1e-2)

    def test_missing_or_misshapen_gradient(self):
        store = ParamStore()
        store.create("p", (2,), zeros)
        with pytest.raises(InvalidArgumentError):
            adam_step(store, {})
        with pytest.raises(InvalidArgumentError):
            adam_step(store, {"p": np.zeros(3)})

    def test_merge_shares_tensors(self):
        a, b = ParamStore(), ParamStore()
        ta = a.create("a", (1,), zeros)
        b.create("b", (1,), zeros)
        merged = a.merge(b)
        assert merged["a"] is ta and len(merged) == 2
        with pytest.raises(InvalidArgumentError):
            a.create("a", (1,), zeros)
