import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check, max_rel_error, numerical_grad
from lesion_attention import tensor as T
from lesion_attention.errors import ContractError, DimensionError, NumericError, ParameterError


def naive_conv(x, k, b, stride, pad):
    """Quadruple-loop cross-correlation oracle."""
    n, c, h, w = x.shape
    kk, _, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, kk, ho, wo))
    for i in range(n):
        for o in range(kk):
            for y in range(ho):
                for z in range(wo):
                    acc = b[o]
                    for ch in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[i, ch, y * stride + dy, z * stride + dx] * k[o, ch, dy, dx]
                    out[i, o, y, z] = acc
    return out


class TestConv2d:
    def test_worked_example(self):
        x = T.Tensor(np.arange(1, 10, dtype=float).reshape(1, 1, 3, 3))
        k = T.Tensor([[[[1.0, 0.0], [0.0, 1.0]]]])
        out = T.conv2d(x, k, T.Tensor([0.0]), stride=1, padding=0)
        np.testing.assert_array_equal(out.data, [[[[6, 8], [12, 14]]]])

    def test_zero_kernel_annihilates(self):
        x = T.Tensor(np.random.default_rng(0).normal(size=(2, 3, 5, 5)))
        out = T.conv2d(x, T.Tensor(np.zeros((4, 3, 3, 3))), T.Tensor(np.zeros(4)), padding=1)
        assert not out.data.any()

    def test_identity_1x1(self):
        x = np.random.default_rng(1).normal(size=(2, 1, 4, 6))
        out = T.conv2d(T.Tensor(x), T.Tensor(np.ones((1, 1, 1, 1))), T.Tensor([0.0]))
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("stride,pad,ksize", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 2), (3, 2, 4)])
    def test_matches_naive_loops(self, stride, pad, ksize):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.normal(size=(2, 3, 7, 6))
        k = rng.normal(size=(4, 3, ksize, ksize))
        b = rng.normal(size=4)
        out = T.conv2d(T.Tensor(x), T.Tensor(k), T.Tensor(b), stride=stride, padding=pad)
        np.testing.assert_allclose(out.data, naive_conv(x, k, b, stride, pad), rtol=0, atol=1e-12)

    def test_output_size_formula(self):
        out = T.conv2d(T.Tensor(np.zeros((1, 2, 9, 8))), T.Tensor(np.zeros((3, 2, 3, 2))), None, stride=2, padding=1)
        assert out.shape == (1, 3, (9 + 2 - 3) // 2 + 1, (8 + 2 - 2) // 2 + 1)

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(2, 1, 2, 6, 6))
        k = T.Tensor(rng.normal(size=(3, 2, 3, 3)))
        a, b = 1.7, -0.4

        def conv(v):
            return T.conv2d(T.Tensor(v), k, None, padding=1).data

        np.testing.assert_allclose(conv(a * x + b * y), a * conv(x) + b * conv(y), atol=1e-10)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(DimensionError, match="channel"):
            T.conv2d(T.Tensor(np.zeros((1, 2, 4, 4))), T.Tensor(np.zeros((1, 3, 3, 3))))

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError, match="H/W"):
            T.conv2d(T.Tensor(np.zeros((1, 1, 2, 2))), T.Tensor(np.zeros((1, 1, 3, 3))))

    def test_gradcheck_spec_case(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 2, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        assert check(lambda x, k, b: T.conv2d(x, k, b, 1, 1), [x, k, b]) < 1e-6


class TestElementwise:
    def test_relu_values(self):
        np.testing.assert_array_equal(T.relu(T.Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_relu_identity_on_positive(self):
        x = np.array([0.5, 3.0, 7.0])
        np.testing.assert_array_equal(T.relu(T.Tensor(x)).data, x)

    def test_relu_subgradient(self):
        x = T.Tensor([-1.0, 2.0], requires_grad=True)
        T.relu(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [0, 1])

    def test_relu_grad_zero_at_zero(self):
        x = T.Tensor([0.0], requires_grad=True)
        T.relu(x).sum().backward()
        assert x.grad[0] == 0.0

    def test_sigmoid_basic(self):
        assert T.sigmoid(T.Tensor([0.0])).data[0] == 0.5
        x = np.linspace(-8, 8, 33)
        np.testing.assert_allclose(T.sigmoid(T.Tensor(x)).data, 1 - T.sigmoid(T.Tensor(-x)).data, atol=1e-15)

    def test_sigmoid_large_input_stays_below_one(self):
        v = T.sigmoid(T.Tensor([40.0])).data[0]
        assert 1 - 1e-15 < v < 1

    def test_sigmoid_open_interval_extremes(self):
        out = T.sigmoid(T.Tensor(np.linspace(-700, 700, 2001))).data
        assert np.all(out > 0) and np.all(out < 1) and not np.isnan(out).any()

    def test_sigmoid_float32_open_interval(self):
        out = T.sigmoid(T.Tensor(np.array([-200.0, 30.0, 200.0], dtype=np.float32))).data
        assert out.dtype == np.float32 and np.all(out > 0) and np.all(out < 1)


class TestPooling:
    def test_maxpool_value(self):
        out = T.maxpool2(T.Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert out.data.item() == 4.0

    def test_maxpool_constant(self):
        out = T.maxpool2(T.Tensor(np.full((1, 2, 4, 6), 2.5)))
        assert out.shape == (1, 2, 2, 3)
        assert np.all(out.data == 2.5)

    def test_maxpool_tie_routes_to_first(self):
        x = T.Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
        T.maxpool2(x).sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])

    def test_maxpool_tie_second_row(self):
        x = T.Tensor([[[[0.0, 1.0], [1.0, 1.0]]]], requires_grad=True)
        T.maxpool2(x).sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[0, 1], [0, 0]])

    def test_maxpool_odd_side(self):
        with pytest.raises(DimensionError):
            T.maxpool2(T.Tensor(np.zeros((1, 1, 3, 4))))

    def test_gap_value(self):
        assert T.global_avg_pool(T.Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])).data.item() == 2.5

    def test_gap_constant(self):
        np.testing.assert_array_equal(T.global_avg_pool(T.Tensor(np.full((2, 3, 5, 5), 1.5))).data, 1.5)

    def test_gap_grad(self):
        x = T.Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        T.global_avg_pool(x).sum().backward()
        np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 0.25))


class TestLinear:
    def test_value(self):
        out = T.linear(T.Tensor([[1.0, 2.0]]), T.Tensor([[1.0, 1.0]]), T.Tensor([0.5]))
        assert out.data.item() == 3.5

    def test_zero_weight_gives_bias(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        out = T.linear(T.Tensor(x), T.Tensor(np.zeros((1, 3))), T.Tensor([-1.25]))
        np.testing.assert_array_equal(out.data, np.full((4, 1), -1.25))

    def test_weight_grad_is_input(self):
        w = T.Tensor([[0.3, -0.2]], requires_grad=True)
        T.linear(T.Tensor([[3.0, 4.0]]), w, T.Tensor([0.0])).sum().backward()
        np.testing.assert_array_equal(w.grad, [[3.0, 4.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(DimensionError):
            T.linear(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((1, 4))), T.Tensor([0.0]))


class TestDropout:
    def test_p_zero_identity(self):
        x = T.Tensor(np.arange(10.0))
        np.testing.assert_array_equal(T.dropout(x, 0.0, True, 1).data, x.data)

    def test_inference_identity(self):
        x = T.Tensor(np.arange(10.0))
        np.testing.assert_array_equal(T.dropout(x, 0.9, False, 1).data, x.data)

    def test_seeded_mask_is_reproducible(self):
        x = T.Tensor(np.ones((8, 64)))
        a = T.dropout(x, 0.5, True, 42).data
        b = T.dropout(x, 0.5, True, 42).data
        assert a.tobytes() == b.tobytes()
        assert set(np.unique(a)) <= {0.0, 2.0}
        assert not np.array_equal(a, T.dropout(x, 0.5, True, 43).data)

    def test_inverted_scaling_preserves_mean(self):
        out = T.dropout(T.Tensor(np.ones(200_000)), 0.5, True, 0).data
        assert abs(out.mean() - 1.0) < 0.01

    @pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
    def test_invalid_p(self, p):
        with pytest.raises(ParameterError):
            T.dropout(T.Tensor([1.0]), p, True, 0)

    def test_gradient_follows_mask(self):
        x = T.Tensor(np.ones(50), requires_grad=True)
        out = T.dropout(x, 0.5, True, 7)
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, out.data)


class TestBackward:
    def test_square(self):
        x = T.Tensor(3.0, requires_grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_power(self):
        x = T.Tensor(3.0, requires_grad=True)
        (x ** 2).backward()
        assert x.grad == 6.0

    def test_sum_gives_ones(self):
        x = T.Tensor(np.zeros((3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(x * 2.0)

    def test_two_consumers_accumulate(self):
        rng = np.random.default_rng(4)
        x0 = rng.normal(size=(1, 1, 4, 4))
        k1, k2 = rng.normal(size=(2, 1, 1, 3, 3))

        def build(x):
            a = T.relu(T.conv2d(x, T.Tensor(k1), None, padding=1))
            b = T.sigmoid(T.conv2d(x, T.Tensor(k2), None, padding=1))
            return (a * b).sum() + (x * x).sum()

        def f(raw):
            with T.no_grad():
                return float(build(T.Tensor(raw)).data)

        x = T.Tensor(x0, requires_grad=True)
        build(x).backward()
        assert max_rel_error(x.grad, numerical_grad(f, [x0], 0)) < 1e-6

    def test_grads_accumulate_across_calls(self):
        x = T.Tensor(2.0, requires_grad=True)
        (x * 3.0).backward()
        (x * 3.0).backward()
        assert x.grad == 6.0

    def test_reverse_execution_order(self):
        seen = []
        x = T.Tensor(1.0, requires_grad=True)
        a = x * 2.0
        b = a * 3.0
        c = b + a
        for t, name in ((a, "a"), (b, "b"), (c, "c")):
            fn = t._backward

            def wrapped(g, fn=fn, name=name):
                seen.append(name)
                return fn(g)

            t._backward = wrapped
        c.backward()
        assert seen == ["c", "b", "a"]
        assert x.grad == 8.0

    def test_no_grad_records_nothing(self):
        x = T.Tensor(1.0, requires_grad=True)
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_overflow_is_an_error(self):
        with pytest.raises(NumericError):
            T.Tensor([1e308]) * 10.0


RANDOM_CASES = range(20)


def _ops(rng):
    """(name, builder, inputs) for every differentiable tensor op."""
    x4 = rng.normal(size=(2, 2, 4, 4))
    # keep relu / maxpool inputs away from kinks so finite differences are valid
    kinked = rng.choice([-1, 1], size=(2, 2, 4, 4)) * rng.uniform(0.2, 1.0, size=(2, 2, 4, 4))
    return [
        ("conv2d", lambda x, k, b: T.conv2d(x, k, b, 1, 1),
         [x4, rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]),
        ("conv2d_stride2", lambda x, k: T.conv2d(x, k, None, 2, 0), [x4, rng.normal(size=(2, 2, 2, 2))]),
        ("relu", T.relu, [kinked]),
        ("maxpool2", T.maxpool2, [np.arange(32.0).reshape(2, 1, 4, 4) * 0.1 + rng.permutation(32).reshape(2, 1, 4, 4)]),
        ("gap", T.global_avg_pool, [x4]),
        ("linear", T.linear, [rng.normal(size=(3, 4)), rng.normal(size=(1, 4)), rng.normal(size=1)]),
        ("sigmoid", T.sigmoid, [rng.normal(scale=3, size=(3, 4))]),
        ("dropout", lambda x: T.dropout(x, 0.5, True, 5), [rng.normal(size=(4, 6))]),
    ]


@pytest.mark.parametrize("case", RANDOM_CASES)
def test_gradcheck_all_ops(case):
    rng = np.random.default_rng(100 + case)
    for name, build, inputs in _ops(rng):
        err = check(build, inputs, probe_seed=case)
        assert err < 1e-6, f"{name}: {err}"


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 7), st.integers(1, 3), st.integers(0, 2),
       st.integers(1, 2), st.integers(0, 2**31 - 1))
def test_conv_matches_naive_property(n, c, side, k, pad, stride, seed):
    rng = np.random.default_rng(seed)
    ks = min(3, side + 2 * pad)
    x = rng.normal(size=(n, c, side, side))
    w = rng.normal(size=(k, c, ks, ks))
    b = rng.normal(size=k)
    out = T.conv2d(T.Tensor(x), T.Tensor(w), T.Tensor(b), stride=stride, padding=pad)
    np.testing.assert_allclose(out.data, naive_conv(x, w, b, stride, pad), atol=1e-12)
