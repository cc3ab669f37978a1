import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hydraheads import tensor as T
from hydraheads.gradcheck import GradCheckContractError, grad_check
from hydraheads.optim import Adam
from hydraheads.tensor import Parameter, Tensor


def brute_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1, 2], [3, 4]])
        assert np.array_equal(T.matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])

    def test_zero(self):
        out = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor(np.zeros((2, 2))))
        assert np.array_equal(out.data, np.zeros((2, 2)))

    def test_hand_expanded(self):
        out = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5, 6], [7, 8]]))
        assert np.array_equal(out.data, [[19, 22], [43, 50]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    @pytest.mark.parametrize("seed", range(10))
    def test_against_triple_loop(self, seed):
        r = np.random.default_rng(seed)
        m, k, n = r.integers(1, 9, size=3)
        a, b = r.uniform(-1, 1, (m, k)), r.uniform(-1, 1, (k, n))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, brute_matmul(a, b), rtol=0, atol=1e-12)

    def test_batched_shares_right_operand(self, rng):
        a = rng.normal(size=(3, 4, 5))
        b = rng.normal(size=(5, 2))
        out = T.matmul(Tensor(a), Tensor(b)).data
        for i in range(3):
            np.testing.assert_allclose(out[i], a[i] @ b, atol=1e-12)


class TestTranspose:
    def test_square(self):
        assert np.array_equal(T.transpose(Tensor([[1, 2], [3, 4]])).data, [[1, 3], [2, 4]])

    def test_symmetric_fixed_point(self):
        assert np.array_equal(T.transpose(Tensor(np.eye(2))).data, np.eye(2))

    def test_row_to_column(self):
        out = T.transpose(Tensor([[5, 6, 7]]))
        assert out.shape == (3, 1)
        assert np.array_equal(out.data[:, 0], [5, 6, 7])

    def test_rank_error(self):
        with pytest.raises(T.RankError):
            T.transpose(Tensor(np.ones((2, 2, 2))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_large_equal_logits(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])

    def test_odds_one_to_three(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, math.log(3)]])).data, [[0.25, 0.75]], atol=1e-15)

    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                  elements=st.floats(-50, 50)),
           st.floats(-100, 100))
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        y = T.softmax_rows(Tensor(x)).data
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(T.softmax_rows(Tensor(x + c)).data, y, atol=1e-9)


class TestLayerNorm:
    def _gb(self, d, g=1.0, b=0.0):
        return Parameter(np.full(d, g), "g"), Parameter(np.full(d, b), "b")

    def test_two_vector(self):
        out = T.layer_norm(Tensor([[1.0, 3.0]]), *self._gb(2)).data
        # variance 1, so the only deviation from +-1 is the epsilon in the root
        np.testing.assert_allclose(out, [[-1 / math.sqrt(1 + 1e-5), 1 / math.sqrt(1 + 1e-5)]], atol=1e-15)

    def test_constant_vector_collapses(self):
        out = T.layer_norm(Tensor([[4.0, 4.0, 4.0]]), *self._gb(3)).data
        assert np.array_equal(out, np.zeros((1, 3)))

    def test_bias_passthrough(self):
        out = T.layer_norm(Tensor([[2.0, 2.0]]), *self._gb(2, b=0.7)).data
        np.testing.assert_allclose(out, [[0.7, 0.7]])

    def test_dimension_error(self):
        with pytest.raises(T.DimensionError):
            T.layer_norm(Tensor([[1.0]]), *self._gb(1))


class TestGelu:
    def test_center(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0

    def test_asymptotes(self):
        out = T.gelu(Tensor([10.0, -10.0])).data
        assert abs(out[0] - 10.0) < 1e-6
        assert abs(out[1]) < 1e-6

    def test_monotone_on_tested_range(self):
        x = np.linspace(-0.75, 10, 500)
        assert np.all(np.diff(T.gelu(Tensor(x)).data) > 0)


class TestMse:
    def test_identical(self):
        x = np.eye(3)
        assert T.mse_flat(Tensor(x), x, np.ones((3, 3))).item() == 0.0

    def test_zeros_vs_identity(self):
        assert T.mse_flat(Tensor(np.zeros((2, 2))), np.eye(2), np.ones((2, 2))).item() == 0.5

    def test_half_identity(self):
        assert T.mse_flat(Tensor(0.5 * np.eye(2)), np.eye(2), np.ones((2, 2))).item() == pytest.approx(0.125, abs=1e-15)

    def test_empty_mask(self):
        with pytest.raises(T.EmptyLossError):
            T.mse_flat(Tensor(np.zeros((2, 2))), np.eye(2), np.zeros((2, 2)))

    def test_masked_cells_carry_no_gradient(self, rng):
        pred = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        mask = np.array([[1, 0, 0], [0, 1, 1], [0, 1, 0]], dtype=float)
        T.mse_flat(pred, rng.normal(size=(3, 3)), mask).backward()
        assert np.all(pred.grad[mask == 0] == 0)

    def test_batch_is_mean_of_items(self, rng):
        p, t = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
        m = np.ones((2, 3, 3))
        m[1, 2, :] = 0
        both = T.mse_flat(Tensor(p), t, m).item()
        each = [T.mse_flat(Tensor(p[i]), t[i], m[i]).item() for i in range(2)]
        assert both == pytest.approx(np.mean(each), abs=1e-15)


class TestCrossEntropy:
    def test_uniform(self):
        assert T.cross_entropy(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_saturated(self):
        assert T.cross_entropy(Tensor([[1000.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-12)

    def test_closed_form(self):
        out = T.cross_entropy(Tensor([[0.0, math.log(3)]]), [1]).item()
        assert out == pytest.approx(-math.log(0.75), abs=1e-15)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor([[0.0, 0.0]]), [2])


class TestAdam:
    def test_frozen_parameter_untouched(self):
        p = Parameter([1.0, -2.0], "p", trainable=False)
        p.grad[:] = [3.0, 4.0]
        before = p.data.tobytes()
        Adam([p], lr=0.1).step()
        assert p.data.tobytes() == before

    def test_first_step_moves_by_lr(self):
        # step 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
        p = Parameter([1.0], "p")
        p.grad[:] = 1.0
        Adam([p], lr=0.1).step()
        assert p.data[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)

    def test_zero_grad_fixed_point(self):
        q = Parameter([2.0], "q")
        opt = Adam([q], lr=0.1)
        for _ in range(3):
            opt.step()
        assert q.data[0] == 2.0

    def test_zero_grad_decays_moments(self):
        p = Parameter([1.0], "p")
        opt = Adam([p], lr=0.1)
        p.grad[:] = 1.0
        opt.step()
        m1, v1 = opt.state.m["p"][0], opt.state.v["p"][0]
        opt.step()
        assert opt.state.m["p"][0] == pytest.approx(0.9 * m1)
        assert opt.state.v["p"][0] == pytest.approx(0.999 * v1)

    def test_step_counter_and_grad_reset(self):
        p = Parameter(np.ones((2, 2)), "p")
        opt = Adam([p])
        for k in range(3):
            p.grad[:] = 1.0
            opt.step()
            assert opt.state.step == k + 1
            assert np.all(p.grad == 0)
            assert opt.state.m["p"].shape == p.shape

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(1e-4, 1.0))
    def test_never_mutates_frozen(self, grads, lr):
        frozen = Parameter(np.arange(len(grads), dtype=float), "f", trainable=False)
        live = Parameter(np.zeros(len(grads)), "l")
        frozen.grad[:] = grads
        live.grad[:] = grads
        before = frozen.data.tobytes()
        Adam([frozen, live], lr=lr).step()
        assert frozen.data.tobytes() == before


class TestBackward:
    def test_shared_subexpression_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x * 3.0
        T.tsum(y).backward()
        assert x.grad[0] == pytest.approx(2 * 2.0 + 3.0)

    def test_tape_is_released(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = T.tsum(x * 2.0)
        y.backward()
        assert y._parents == () and y._backward is None

    def test_frozen_parameter_gets_no_gradient(self):
        w = Parameter(np.ones((2, 2)), "w", trainable=False)
        x = Tensor(np.ones((1, 2)), requires_grad=True)
        T.tsum(T.matmul(x, w)).backward()
        assert np.all(w.grad == 0)
        assert np.all(x.grad == 2)

    def test_rank_limit(self):
        with pytest.raises(T.RankError):
            Tensor(np.zeros((1, 1, 1, 1)))


def _rand(seed, *shape):
    return np.random.default_rng(seed).uniform(-1, 1, shape)


SEEDS = range(10)


@pytest.mark.parametrize("seed", SEEDS)
class TestGradients:
    """Every differentiable op against central differences on inputs in [-1, 1]."""

    def test_matmul_left(self, seed):
        b = Tensor(_rand(seed + 100, 4, 3))
        assert grad_check(lambda x: T.tsum(T.matmul(x, b) * T.matmul(x, b)), _rand(seed, 2, 4)).passed

    def test_matmul_batched_right(self, seed):
        a = Tensor(_rand(seed + 100, 2, 3, 4))
        assert grad_check(lambda w: T.tsum(T.gelu(T.matmul(a, w))), _rand(seed, 4, 2)).passed

    def test_transpose_and_swap(self, seed):
        c = _rand(seed + 1, 3, 2)
        assert grad_check(lambda x: T.tsum(T.transpose(x) * Tensor(c)), _rand(seed, 2, 3)).passed
        c3 = _rand(seed + 2, 2, 3, 2)
        assert grad_check(lambda x: T.tsum(T.swap_last(x) * Tensor(c3)), _rand(seed, 2, 2, 3)).passed

    def test_softmax(self, seed):
        c = _rand(seed + 1, 3, 4)
        assert grad_check(lambda x: T.tsum(T.softmax_rows(x) * Tensor(c)), _rand(seed, 3, 4)).passed

    def test_layer_norm_input_gain_bias(self, seed):
        c = _rand(seed + 1, 2, 3, 5)
        g, b = _rand(seed + 2, 5), _rand(seed + 3, 5)
        x0 = _rand(seed, 2, 3, 5)
        assert grad_check(lambda x: T.tsum(T.layer_norm(x, Tensor(g), Tensor(b)) * Tensor(c)), x0).passed
        assert grad_check(lambda gg: T.tsum(T.layer_norm(Tensor(x0), gg, Tensor(b)) * Tensor(c)), g).passed
        assert grad_check(lambda bb: T.tsum(T.layer_norm(Tensor(x0), Tensor(g), bb) * Tensor(c)), b).passed

    def test_gelu(self, seed):
        assert grad_check(lambda x: T.tsum(T.gelu(x) * T.gelu(x)), _rand(seed, 6)).passed

    def test_mse_flat(self, seed):
        target = (_rand(seed + 1, 3, 3) > 0).astype(float)
        mask = np.ones((3, 3))
        mask[0, 2] = 0
        assert grad_check(lambda x: T.mse_flat(x, target, mask), _rand(seed, 3, 3), tolerance=1e-6).passed

    def test_cross_entropy(self, seed):
        assert grad_check(lambda x: T.cross_entropy(x, [0, 2, 1]), _rand(seed, 3, 3)).passed

    def test_mean_squared_error(self, seed):
        y = _rand(seed + 1, 4, 1)
        assert grad_check(lambda x: T.mean_squared_error(x, y), _rand(seed, 4, 1)).passed

    def test_slicing_concat_embedding(self, seed):
        ids = np.array([[0, 2, 2], [1, 0, 3]])
        def f(w):
            e = T.embedding(w, ids)
            parts = T.concat([e[:, :, :2], e[:, :, 2:] * 2.0], axis=-1)
            return T.tsum(parts * parts) + T.mean(e[:, 0, :])
        assert grad_check(f, _rand(seed, 4, 3)).passed


class TestGradCheckHarness:
    def test_non_scalar_rejected(self):
        with pytest.raises(GradCheckContractError):
            grad_check(lambda x: x * 2.0, np.ones(3))

    def test_corrupted_backward_fails(self):
        def scaled_square(x):
            out = T._make(x.data**2, (x,), lambda g: (g * 2 * x.data * 1.1,))
            return T.tsum(out)
        report = grad_check(scaled_square, _rand(0, 3, 3))
        assert not report.passed
        assert report.max_rel_error == pytest.approx(0.1 / 1.1, rel=1e-3)

    def test_corrupted_single_term_fails(self):
        # +10% on one of the two matmul backward terms
        b0 = _rand(5, 3, 2)

        def f(x):
            a, b = x, Tensor(b0)
            out = T._make(a.data @ b.data, (a, b), lambda g: (1.1 * g @ b.data.T, a.data.T @ g))
            return T.tsum(out * out)

        assert not grad_check(f, _rand(6, 2, 3)).passed
