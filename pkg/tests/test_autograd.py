"""Tensor-engine tests: brute-force convolution oracles, finite-difference
gradient checks, and tape/backward contracts."""

import numpy as np
import pytest

from sparsemim import autograd as ag


def conv2d_bruteforce(x, w, b=None, stride=1, pad=0):
    """Direct-summation cross-correlation, the independent oracle."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                iy, ix = oy * stride - pad + i, ox * stride - pad + j
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[ni, ci, iy, ix] * w[co, ci, i, j]
                    out[ni, co, oy, ox] = acc + (b[co] if b is not None else 0.0)
    return out


def tconv_bruteforce(x, w, b=None, stride=2, pad=1):
    """Direct-scatter transposed convolution oracle."""
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (wd - 1) * stride - 2 * pad + kw
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for ci in range(cin):
            for y in range(h):
                for xx in range(wd):
                    for co in range(cout):
                        for i in range(kh):
                            for j in range(kw):
                                oy, ox = y * stride - pad + i, xx * stride - pad + j
                                if 0 <= oy < ho and 0 <= ox < wo:
                                    out[ni, co, oy, ox] += x[ni, ci, y, xx] * w[ci, co, i, j]
    if b is not None:
        out += b[None, :, None, None]
    return out


class TestConv2d:
    def test_all_ones_center(self):
        x = ag.tensor(np.ones((1, 1, 3, 3)))
        w = ag.tensor(np.ones((1, 1, 3, 3)))
        y = ag.conv2d(x, w, stride=1, padding=1)
        assert y.data[0, 0, 1, 1] == 9.0
        ref = conv2d_bruteforce(x.data, w.data, stride=1, pad=1)
        np.testing.assert_array_equal(y.data, ref)

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = ag.tensor(rng.normal(size=(2, 3, 4, 4)))
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        y = ag.conv2d(x, ag.tensor(w))
        np.testing.assert_array_equal(y.data, x.data)

    def test_random_vs_bruteforce(self):
        rng = np.random.default_rng(1)
        for stride, pad, k in [(1, 0, 3), (1, 1, 3), (2, 0, 2), (4, 0, 4), (1, 2, 5)]:
            x = rng.normal(size=(2, 3, 8, 8))
            w = rng.normal(size=(4, 3, k, k))
            b = rng.normal(size=4)
            y = ag.conv2d(ag.tensor(x), ag.tensor(w), ag.tensor(b), stride=stride, padding=pad)
            ref = conv2d_bruteforce(x, w, b, stride=stride, pad=pad)
            np.testing.assert_allclose(y.data, ref, atol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(2)
        x = ag.tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
        w = ag.tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        b = ag.tensor(rng.normal(size=3), requires_grad=True)

        def f(t):
            return ag.mean_over(ag.square(ag.conv2d(t[0], t[1], t[2], stride=1, padding=1)))

        assert ag.grad_check(f, [x, w, b]) < 1e-6

    def test_one_hot_kernel_is_shift(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 1, 6, 6))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 0, 1] = 1.0  # offset (-1, 0): reads the pixel one row up
        y = ag.conv2d(ag.tensor(x), ag.tensor(w), stride=1, padding=1)
        shifted = np.zeros_like(x)
        shifted[0, 0, 1:, :] = x[0, 0, :-1, :]
        np.testing.assert_array_equal(y.data, shifted)

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x1, x2 = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(1, 2, 5, 5))
        w = ag.tensor(rng.normal(size=(3, 2, 3, 3)))
        a, b = 1.7, -0.3
        lhs = ag.conv2d(ag.tensor(a * x1 + b * x2), w, stride=1, padding=1).data
        rhs = a * ag.conv2d(ag.tensor(x1), w, stride=1, padding=1).data + \
            b * ag.conv2d(ag.tensor(x2), w, stride=1, padding=1).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_shape_errors_name_dimension(self):
        x = ag.tensor(np.zeros((1, 2, 4, 4)))
        w = ag.tensor(np.zeros((3, 5, 3, 3)))
        with pytest.raises(ValueError, match="channel"):
            ag.conv2d(x, w)
        with pytest.raises(ValueError, match="even kernel"):
            ag.conv2d(x, ag.tensor(np.zeros((3, 2, 2, 2))), stride=1)
        with pytest.raises(ValueError, match="bias"):
            ag.conv2d(x, ag.tensor(np.zeros((3, 2, 3, 3))), ag.tensor(np.zeros(4)), padding=1)

    def test_determinism(self):
        rng = np.random.default_rng(5)
        x, w = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, 3, 3))
        y1 = ag.conv2d(ag.tensor(x), ag.tensor(w), stride=1, padding=1).data
        y2 = ag.conv2d(ag.tensor(x.copy()), ag.tensor(w.copy()), stride=1, padding=1).data
        assert np.array_equal(y1, y2)


class TestConvTranspose2d:
    def test_single_pixel(self):
        v, c = 3.0, 2.0
        y = ag.conv_transpose2d(ag.tensor(np.full((1, 1, 1, 1), v)), ag.tensor(np.full((1, 1, 4, 4), c)))
        ref = tconv_bruteforce(np.full((1, 1, 1, 1), v), np.full((1, 1, 4, 4), c))
        assert y.data.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(y.data, ref)
        # each output entry collects exactly one tap here: v * c
        np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2), v * c))

    def test_zero_input_bias_broadcast(self):
        b = np.array([0.5, -1.0])
        y = ag.conv_transpose2d(ag.tensor(np.zeros((1, 3, 2, 2))), ag.tensor(np.zeros((3, 2, 4, 4))),
                                ag.tensor(b))
        np.testing.assert_array_equal(y.data, np.broadcast_to(b[None, :, None, None], (1, 2, 4, 4)))

    def test_random_vs_bruteforce(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 3, 3, 3))
        w = rng.normal(size=(3, 2, 4, 4))
        b = rng.normal(size=2)
        y = ag.conv_transpose2d(ag.tensor(x), ag.tensor(w), ag.tensor(b))
        np.testing.assert_allclose(y.data, tconv_bruteforce(x, w, b), atol=1e-12)

    def test_doubling_enforced(self):
        x = ag.tensor(np.zeros((1, 1, 4, 4)))
        w = ag.tensor(np.zeros((1, 1, 3, 3)))
        with pytest.raises(ValueError, match="doubl"):
            ag.conv_transpose2d(x, w, stride=1, padding=1)
        y = ag.conv_transpose2d(x, w, stride=1, padding=1, require_doubling=False)
        assert y.data.shape == (1, 1, 4, 4)

    def test_gradcheck(self):
        rng = np.random.default_rng(7)
        x = ag.tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
        w = ag.tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        b = ag.tensor(rng.normal(size=3), requires_grad=True)

        def f(t):
            return ag.mean_over(ag.square(ag.conv_transpose2d(t[0], t[1], t[2])))

        assert ag.grad_check(f, [x, w, b]) < 1e-6


class TestBatchNorm:
    def test_normalizes(self):
        rng = np.random.default_rng(8)
        x = ag.tensor(rng.normal(2.0, 3.0, size=(4, 3, 5, 5)))
        y = ag.batchnorm2d(x, ag.tensor(np.ones(3)), ag.tensor(np.zeros(3)), ag.BatchNormState(3))
        assert np.abs(y.data.mean(axis=(0, 2, 3))).max() < 1e-6
        assert np.abs(y.data.var(axis=(0, 2, 3)) - 1.0).max() < 1e-4

    def test_constant_channel(self):
        x = ag.tensor(np.full((2, 1, 3, 3), 7.0))
        y = ag.batchnorm2d(x, ag.tensor(np.ones(1)), ag.tensor(np.zeros(1)), ag.BatchNormState(1))
        np.testing.assert_allclose(y.data, 0.0, atol=1e-8)

    def test_eval_before_training_uses_init_stats(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(1, 2, 3, 3))
        y = ag.batchnorm2d(ag.tensor(x), ag.tensor(np.ones(2)), ag.tensor(np.zeros(2)),
                           ag.BatchNormState(2), mode="eval")
        np.testing.assert_allclose(y.data, x / np.sqrt(1.0 + 1e-5), atol=1e-12)

    def test_running_stats_update(self):
        rng = np.random.default_rng(10)
        x = rng.normal(1.0, 2.0, size=(2, 1, 4, 4))
        st = ag.BatchNormState(1)
        ag.batchnorm2d(ag.tensor(x), ag.tensor(np.ones(1)), ag.tensor(np.zeros(1)), st)
        m = x.size
        np.testing.assert_allclose(st.running_mean, 0.1 * x.mean(), atol=1e-12)
        np.testing.assert_allclose(st.running_var, 0.9 * 1.0 + 0.1 * x.var() * m / (m - 1), atol=1e-12)

    def test_gradcheck_both_modes(self):
        rng = np.random.default_rng(11)
        x = ag.tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        g = ag.tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
        b = ag.tensor(rng.normal(size=3), requires_grad=True)
        st = ag.BatchNormState(3)

        def f_train(t):
            return ag.mean_over(ag.square(ag.batchnorm2d(t[0], t[1], t[2], st, "train")))

        assert ag.grad_check(f_train, [x, g, b]) < 1e-4
        st.running_mean = rng.normal(size=3)
        st.running_var = rng.uniform(0.5, 2.0, 3)

        def f_eval(t):
            return ag.mean_over(ag.square(ag.batchnorm2d(t[0], t[1], t[2], st, "eval")))

        assert ag.grad_check(f_eval, [x, g, b]) < 1e-6


class TestActivations:
    def test_values(self):
        x = ag.tensor(np.array([-1.0, 0.0, 3.0, 6.0, 7.5]))
        np.testing.assert_array_equal(ag.relu(x).data, [0.0, 0.0, 3.0, 6.0, 7.5])
        np.testing.assert_array_equal(ag.relu6(x).data, [0.0, 0.0, 3.0, 6.0, 6.0])

    def test_gradcheck_away_from_kinks(self):
        x = ag.tensor(np.array([-2.0, -0.5, 0.5, 2.0, 5.5, 6.5, 8.0]), requires_grad=True)
        assert ag.grad_check(lambda t: ag.mean_over(ag.square(ag.relu(t[0]))), [x]) < 1e-6
        assert ag.grad_check(lambda t: ag.mean_over(ag.square(ag.relu6(t[0]))), [x]) < 1e-6

    def test_kink_subgradient_zero(self):
        x = ag.tensor(np.array([0.0, 6.0]), requires_grad=True)
        ag.backward(ag.sum_over(ag.relu6(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])


class TestElementwiseReductions:
    def test_add_zero(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(ag.add(ag.tensor(x), ag.tensor(np.zeros((3, 3)))).data, x)

    def test_mean(self):
        assert ag.mean_over(ag.tensor(np.array([1.0, 2.0, 3.0]))).item() == 2.0

    def test_masked_mean(self):
        x = ag.tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        mask = np.array([[True, False], [False, True]])
        assert ag.mean_over(x, mask).item() == 2.5
        with pytest.raises(ValueError, match="empty"):
            ag.mean_over(x, np.zeros((2, 2), dtype=bool))

    def test_gradchecks(self):
        rng = np.random.default_rng(13)
        x = ag.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        y = ag.tensor(rng.normal(size=(3, 4)), requires_grad=True)

        def f(t):
            z = ag.sub(ag.add(t[0], t[1]), ag.mul_scalar(ag.mul(t[0], t[1]), 0.5))
            return ag.mean_over(ag.square(z), over=(0, 1))

        assert ag.grad_check(f, [x, y]) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            ag.add(ag.tensor(np.zeros(3)), ag.tensor(np.zeros(4)))


class TestBackward:
    def test_sum_grad_ones(self):
        x = ag.tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ag.backward(ag.sum_over(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_sum_of_squares_analytic(self):
        x = ag.tensor(np.array([1.0, 2.0]), requires_grad=True)
        ag.backward(ag.sum_over(ag.square(x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_composite_chain_gradcheck(self):
        rng = np.random.default_rng(14)
        st = ag.BatchNormState(3)
        tgt = rng.normal(size=(2, 3, 5, 5))
        x = ag.tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
        w = ag.tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        g = ag.tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
        b = ag.tensor(rng.normal(size=3) * 0.1, requires_grad=True)

        def f(t):
            y = ag.relu6(ag.batchnorm2d(ag.conv2d(t[0], t[1], None, 1, 1), t[2], t[3], st, "train"))
            return ag.mean_over(ag.square(ag.sub(y, ag.tensor(tgt))))

        assert ag.grad_check(f, [x, w, g, b]) < 1e-5

    def test_non_scalar_rejected(self):
        x = ag.tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ag.backward(ag.square(x))
        ag.active_tape().clear()

    def test_no_grad_for_constant_leaves(self):
        x = ag.tensor(np.ones(3), requires_grad=True)
        c = ag.tensor(np.ones(3))
        ag.backward(ag.sum_over(ag.mul(x, c)))
        assert c.grad is None and x.grad is not None

    def test_grad_accumulates_across_reuse(self):
        x = ag.tensor(np.array([2.0]), requires_grad=True)
        ag.backward(ag.sum_over(ag.add(ag.square(x), ag.square(x))))
        np.testing.assert_array_equal(x.grad, [8.0])  # d/dx 2x^2

    def test_tape_cleared_after_backward(self):
        x = ag.tensor(np.ones(2), requires_grad=True)
        ag.backward(ag.sum_over(ag.square(x)))
        assert len(ag.active_tape()) == 0

    def test_no_grad_context_records_nothing(self):
        x = ag.tensor(np.ones(2), requires_grad=True)
        with ag.no_grad():
            y = ag.square(x)
        assert y.tape_node is None and not y.requires_grad

    def test_each_node_visited_exactly_once(self):
        # diamond graph: y = x^2 used twice; every backward_fn must fire once
        calls = []
        x = ag.tensor(np.array([3.0]), requires_grad=True)
        y = ag.square(x)
        z = ag.add(y, y)
        loss = ag.sum_over(z)
        for node in ag.active_tape().nodes:
            orig = node.backward_fn

            def wrapped(g, orig=orig, node=node):
                calls.append(node.index)
                orig(g)

            node.backward_fn = wrapped
        ag.backward(loss)
        assert calls == sorted(calls, reverse=True)  # reverse creation order
        assert len(calls) == len(set(calls)) == 3
        np.testing.assert_array_equal(x.grad, [12.0])  # d/dx 2x^2
