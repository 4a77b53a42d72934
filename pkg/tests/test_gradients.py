"""Finite-difference checks for every differentiable op in the tensor core.

Central differences with step 1e-4 in float64, inputs capped at 64 elements,
relative tolerance 1e-4 (with a small absolute floor for near-zero entries).
"""

import numpy as np
import pytest

from aresnet_vit import tensor as T

from oracles import assert_close_to_fd, finite_difference

RNG = np.random.default_rng(2024)


def check_op(build_loss, arrays, entries=None, rng=None):
    """Compare tape gradients of scalar build_loss(tensors) to central FD."""
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        loss = build_loss(*tensors)
    grads = T.backward(loss, tape)

    def scalar():
        for tt, arr in zip(tensors, arrays):
            tt.data = arr
        return build_loss(*tensors).item()

    fd = finite_difference(scalar, arrays, entries=entries, rng=rng)
    for tt, fd_entries in zip(tensors, fd):
        assert tt in grads, "missing gradient for an input on the loss path"
        assert grads[tt].shape == tt.shape
        assert_close_to_fd(grads[tt], fd_entries)


def weighted(x):
    """Fixed random weighting so the loss depends on every output entry."""
    w = np.random.default_rng(99).standard_normal(x.shape)
    return T.sum(T.mul(x, T.Tensor(w)))


class TestElementwiseGrads:
    def test_add(self):
        check_op(lambda a, b: weighted(T.add(a, b)),
                 [RNG.standard_normal((3, 4)), RNG.standard_normal((3, 4))])

    def test_mul_broadcast(self):
        check_op(lambda a, b: weighted(T.mul(a, b)),
                 [RNG.standard_normal((2, 3, 4)), RNG.standard_normal((1, 3, 1))])

    def test_add_broadcast(self):
        check_op(lambda a, b: weighted(T.add(a, b)),
                 [RNG.standard_normal((2, 3, 4)), RNG.standard_normal((4,))])

    def test_div(self):
        check_op(lambda a, b: weighted(T.div(a, b)),
                 [RNG.standard_normal((3, 3)), RNG.uniform(0.5, 2.0, (3, 3))])

    def test_power(self):
        check_op(lambda a: weighted(T.power(a, 2.0)), [RNG.standard_normal((4, 4))])

    def test_sqrt(self):
        check_op(lambda a: weighted(T.power(a, 0.5)), [RNG.uniform(0.5, 3.0, (4, 4))])

    def test_exp_log(self):
        check_op(lambda a: weighted(T.log(T.exp(a))), [RNG.uniform(-1, 1, (3, 4))])

    def test_clip_interior(self):
        check_op(lambda a: weighted(T.clip(a, -10.0, 10.0)), [RNG.standard_normal((4, 4))])


class TestActivationGrads:
    def test_relu_away_from_kink(self):
        x = RNG.uniform(0.2, 1.5, (4, 4)) * RNG.choice([-1.0, 1.0], (4, 4))
        check_op(lambda a: weighted(T.relu(a)), [x])

    def test_sigmoid(self):
        check_op(lambda a: weighted(T.sigmoid(a)), [RNG.standard_normal((4, 4))])

    def test_gelu(self):
        check_op(lambda a: weighted(T.gelu(a)), [RNG.standard_normal((4, 4))])

    def test_softmax_rows(self):
        check_op(lambda a: weighted(T.softmax_rows(a)), [RNG.standard_normal((4, 5))])

    def test_layer_norm(self):
        check_op(
            lambda x, g, b: weighted(T.layer_norm(x, g, b)),
            [RNG.standard_normal((3, 6)), RNG.uniform(0.5, 1.5, 6), RNG.standard_normal(6)],
        )


class TestLinalgGrads:
    def test_matmul(self):
        check_op(lambda a, b: weighted(T.matmul(a, b)),
                 [RNG.standard_normal((3, 4)), RNG.standard_normal((4, 2))])

    def test_matmul_batched(self):
        check_op(lambda a, b: weighted(T.matmul(a, b)),
                 [RNG.standard_normal((2, 3, 4)), RNG.standard_normal((2, 4, 2))])

    def test_matmul_stacked_by_2d(self):
        check_op(lambda a, b: weighted(T.matmul(a, b)),
                 [RNG.standard_normal((2, 3, 4)), RNG.standard_normal((4, 2))])


class TestSpatialGrads:
    def test_conv2d(self):
        check_op(
            lambda x, k, b: weighted(T.conv2d(x, k, b, stride=1, pad=1)),
            [RNG.standard_normal((1, 2, 4, 4)), RNG.standard_normal((2, 2, 3, 3)),
             RNG.standard_normal(2)],
        )

    def test_conv2d_strided(self):
        check_op(
            lambda x, k, b: weighted(T.conv2d(x, k, b, stride=2, pad=1)),
            [RNG.standard_normal((1, 1, 6, 6)), RNG.standard_normal((2, 1, 3, 3)),
             RNG.standard_normal(2)],
        )

    def test_max_pool2d(self):
        check_op(lambda x: weighted(T.max_pool2d(x, kernel=2, stride=2)),
                 [RNG.standard_normal((1, 2, 4, 4))])

    def test_global_avg_pool(self):
        check_op(lambda x: weighted(T.global_avg_pool(x)), [RNG.standard_normal((2, 3, 3, 3))])

    def test_global_max_pool(self):
        check_op(lambda x: weighted(T.global_max_pool(x)), [RNG.standard_normal((2, 3, 3, 3))])

    def test_max_pool_tie_routes_to_first(self):
        x = T.Tensor(np.full((1, 1, 2, 2), 3.0), requires_grad=True)
        with T.Tape() as tape:
            loss = T.sum(T.global_max_pool(x))
        g = T.backward(loss, tape)[x]
        np.testing.assert_array_equal(g[0, 0], [[1.0, 0.0], [0.0, 0.0]])


class TestShapeGrads:
    def test_reshape_transpose_index(self):
        def build(a):
            b = T.transpose(a.reshape((2, 6)), (1, 0))
            return weighted(b[1:4, :])
        check_op(build, [RNG.standard_normal((3, 4))])

    def test_concat(self):
        check_op(lambda a, b: weighted(T.concat([a, b], axis=1)),
                 [RNG.standard_normal((2, 3)), RNG.standard_normal((2, 2))])

    def test_broadcast_to(self):
        check_op(lambda a: weighted(T.broadcast_to(a, (4, 3))), [RNG.standard_normal((1, 3))])

    def test_mean_axis(self):
        check_op(lambda a: weighted(T.mean(a, axis=(0, 2), keepdims=True)),
                 [RNG.standard_normal((2, 3, 4))])


class TestBackwardContract:
    def test_sum_gradient_is_ones(self):
        x = T.Tensor(RNG.standard_normal((3, 4)), requires_grad=True)
        with T.Tape() as tape:
            loss = T.sum(x)
        g = T.backward(loss, tape)[x]
        np.testing.assert_array_equal(g, np.ones((3, 4)))

    def test_disconnected_tensor_has_no_gradient(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        y = T.Tensor(np.ones(3), requires_grad=True)
        with T.Tape() as tape:
            loss = T.sum(x)
        grads = T.backward(loss, tape)
        assert y not in grads

    def test_tensor_used_twice_accumulates(self):
        x = T.Tensor(np.array([2.0]), requires_grad=True)
        with T.Tape() as tape:
            loss = T.sum(T.add(T.mul(x, x), x))  # d/dx (x^2 + x) = 2x + 1
        g = T.backward(loss, tape)[x]
        np.testing.assert_allclose(g, [5.0])

    def test_bce_on_single_logit_matches_fd(self):
        # sigmoid(w.x) through a one-sample binary cross entropy
        w = RNG.standard_normal((1, 4))
        x = RNG.standard_normal((4, 1))

        def build(wt):
            p = T.clip(T.sigmoid(T.matmul(wt, T.Tensor(x))), 1e-7, 1 - 1e-7)
            return T.neg(T.sum(T.log(p)))  # label y=1

        check_op(build, [w])
