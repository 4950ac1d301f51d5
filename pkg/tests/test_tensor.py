"""Forward semantics and error contracts of the autodiff engine."""

import numpy as np
import pytest

from eapcr import autodiff as ad
from eapcr.errors import (
    DimensionError,
    GraphConsumedError,
    GraphStateError,
    IndexLookupError,
    NumericError,
)

from oracles import reference_conv2d, reference_maxpool2, reference_matmul


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])

    def test_hand_product(self):
        a = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(a, ad.transpose(a))
        np.testing.assert_array_equal(out.data, [[5.0, 11.0], [11.0, 25.0]])

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        out = ad.matmul(ad.Tensor(a), ad.Tensor(b))
        np.testing.assert_allclose(out.data, reference_matmul(a, b), atol=1e-12)

    def test_batched_broadcast(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=(5, 3, 4)), rng.normal(size=(4, 2))
        out = ad.matmul(ad.Tensor(a), ad.Tensor(b))
        assert out.shape == (5, 3, 2)
        np.testing.assert_allclose(out.data[2], reference_matmul(a[2], b), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as exc:
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))))
        assert "(2, 3)" in str(exc.value)


class TestConv2d:
    def test_zero_input_gives_bias_planes(self):
        rng = np.random.default_rng(0)
        kernels = ad.Tensor(rng.normal(size=(3, 2, 3, 3)))
        bias = ad.Tensor([1.0, -2.0, 0.5])
        out = ad.conv2d(ad.Tensor(np.zeros((2, 4, 5))), kernels, bias)
        assert out.shape == (3, 4, 5)
        for ch, b in enumerate([1.0, -2.0, 0.5]):
            np.testing.assert_array_equal(out.data[ch], np.full((4, 5), b))

    def test_ones_kernel_tap_counts(self):
        out = ad.conv2d(ad.Tensor(np.ones((1, 3, 3))),
                        ad.Tensor(np.ones((1, 1, 3, 3))),
                        ad.Tensor([0.0]))
        expected = np.array([[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]])
        np.testing.assert_array_equal(out.data[0], expected)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 4))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(k), ad.Tensor(b))
        np.testing.assert_allclose(out.data, reference_conv2d(x, k, b), atol=1e-12)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 2, 4, 4))
        k = rng.normal(size=(5, 2, 3, 3))
        b = rng.normal(size=5)
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(k), ad.Tensor(b))
        for i in range(3):
            single = ad.conv2d(ad.Tensor(x[i]), ad.Tensor(k), ad.Tensor(b))
            np.testing.assert_allclose(out.data[i], single.data, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.conv2d(ad.Tensor(np.zeros((2, 4, 4))),
                      ad.Tensor(np.zeros((3, 1, 3, 3))),
                      ad.Tensor(np.zeros(3)))

    def test_non_3x3_kernel_rejected(self):
        with pytest.raises(DimensionError):
            ad.conv2d(ad.Tensor(np.zeros((1, 4, 4))),
                      ad.Tensor(np.zeros((2, 1, 5, 5))),
                      ad.Tensor(np.zeros(2)))


class TestMaxpool2:
    def test_single_window(self):
        out = ad.maxpool2(ad.Tensor([[[1.0, 2.0], [3.0, 4.0]]]))
        np.testing.assert_array_equal(out.data, [[[4.0]]])

    def test_odd_edges(self):
        x = np.arange(1.0, 10.0).reshape(1, 3, 3)
        out = ad.maxpool2(ad.Tensor(x))
        np.testing.assert_array_equal(out.data, [[[5.0, 6.0], [8.0, 9.0]]])

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 7, 5))
        out = ad.maxpool2(ad.Tensor(x))
        np.testing.assert_allclose(out.data, reference_maxpool2(x), atol=0)

    def test_tie_routes_to_first_index(self):
        x = ad.Tensor([[[7.0, 7.0], [7.0, 7.0]]], requires_grad=True)
        with ad.Graph() as g:
            out = ad.tensor_sum(ad.maxpool2(x))
        g.backward(out)
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])


class TestRelu:
    def test_definition(self):
        out = ad.relu(ad.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_subgradient_at_zero_is_zero(self):
        x = ad.Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        with ad.Graph() as g:
            loss = ad.tensor_sum(ad.relu(x))
        g.backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


class TestGatherRows:
    def test_selects_rows(self):
        table = ad.Tensor([[0.0, 1.0], [10.0, 11.0], [20.0, 21.0]])
        out = ad.gather_rows(table, [2, 0])
        np.testing.assert_array_equal(out.data, [[20.0, 21.0], [0.0, 1.0]])

    def test_duplicate_indices_accumulate(self):
        table = ad.Tensor(np.zeros((3, 2)), requires_grad=True)
        with ad.Graph() as g:
            loss = ad.tensor_sum(ad.gather_rows(table, [1, 1]))
        g.backward(loss)
        np.testing.assert_array_equal(table.grad, [[0.0, 0.0], [2.0, 2.0], [0.0, 0.0]])

    def test_out_of_range(self):
        table = ad.Tensor(np.zeros((3, 2)))
        with pytest.raises(IndexLookupError) as exc:
            ad.gather_rows(table, [5])
        assert exc.value.index == 5 and exc.value.size == 3


class TestBackwardContract:
    def test_sum_gradient_is_ones(self):
        x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with ad.Graph() as g:
            loss = ad.tensor_sum(x)
        g.backward(loss)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_sum_of_squares_gradient(self):
        x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with ad.Graph() as g:
            loss = ad.tensor_sum(ad.mul(x, x))
        g.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_loss_rejected(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        with ad.Graph() as g:
            y = ad.mul(x, x)
        with pytest.raises(DimensionError):
            g.backward(y)

    def test_second_backward_rejected(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        with ad.Graph() as g:
            loss = ad.tensor_sum(x)
        g.backward(loss)
        with pytest.raises(GraphConsumedError):
            g.backward(loss)

    def test_foreign_loss_rejected(self):
        x = ad.Tensor([1.0], requires_grad=True)
        with ad.Graph():
            ad.tensor_sum(x)
        with ad.Graph() as g2:
            ad.tensor_sum(x)
        stray = ad.Tensor(np.asarray(0.0), requires_grad=True)
        with pytest.raises(GraphStateError):
            g2.backward(stray)

    def test_grad_buffers_match_shapes(self):
        rng = np.random.default_rng(11)
        a = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = ad.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        with ad.Graph() as g:
            loss = ad.mean(ad.matmul(a, b))
        g.backward(loss)
        assert a.grad.shape == a.data.shape
        assert b.grad.shape == b.data.shape


class TestNumericGuards:
    def test_overflow_raises_numeric_error(self):
        big = ad.Tensor(np.full((2, 2), 1e300))
        with np.errstate(over="ignore"), pytest.raises(NumericError):
            ad.matmul(big, big)

    def test_finite_inputs_stay_finite(self):
        rng = np.random.default_rng(13)
        x = ad.Tensor(rng.normal(size=(4, 4)))
        out = ad.relu(ad.matmul(x, ad.transpose(x)))
        assert np.isfinite(out.data).all()


class TestStructureOps:
    def test_concat_and_split_gradient(self):
        a = ad.Tensor([1.0, 2.0], requires_grad=True)
        b = ad.Tensor([3.0], requires_grad=True)
        with ad.Graph() as g:
            out = ad.concat([a, b], axis=0)
            loss = ad.tensor_sum(ad.mul(out, out))
        g.backward(loss)
        np.testing.assert_array_equal(a.grad, [2.0, 4.0])
        np.testing.assert_array_equal(b.grad, [6.0])

    def test_reshape_roundtrip(self):
        x = ad.Tensor(np.arange(6.0))
        out = ad.reshape(x, (2, 3))
        np.testing.assert_array_equal(out.data, [[0, 1, 2], [3, 4, 5]])
        back = ad.flatten(out)
        np.testing.assert_array_equal(back.data, x.data)

    def test_mean_value(self):
        assert ad.mean(ad.Tensor([1.0, 2.0, 3.0])).item() == 2.0

    def test_transpose_default_swaps_last_two(self):
        x = ad.Tensor(np.arange(24.0).reshape(2, 3, 4))
        out = ad.transpose(x)
        assert out.shape == (2, 4, 3)
        np.testing.assert_array_equal(out.data, x.data.transpose(0, 2, 1))

    def test_add_broadcasts_bias(self):
        x = ad.Tensor(np.zeros((4, 3)))
        bias = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with ad.Graph() as g:
            loss = ad.tensor_sum(ad.add(x, bias))
        g.backward(loss)
        np.testing.assert_array_equal(bias.grad, [4.0, 4.0, 4.0])


def test_forward_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(99)
        x = ad.Tensor(rng.normal(size=(1, 6, 6)), requires_grad=True)
        k = ad.Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
        b = ad.Tensor(rng.normal(size=2), requires_grad=True)
        with ad.Graph() as g:
            loss = ad.mean(ad.maxpool2(ad.relu(ad.conv2d(x, k, b))))
        g.backward(loss)
        return loss.item(), x.grad.copy(), k.grad.copy(), b.grad.copy()

    first, second = run(), run()
    assert first[0] == second[0]
    for lhs, rhs in zip(first[1:], second[1:]):
        np.testing.assert_array_equal(lhs, rhs)
