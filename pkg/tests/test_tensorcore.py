import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polarbev import tensorcore as tc
from polarbev.errors import ConfigurationError, DimensionError, NumericalError
from polarbev.tensorcore import Tape, Tensor, grad_check

from oracles import brute_conv2d, central_diff, naive_bilinear


def leaf(a, name=None):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True, name=name)


# -- matmul -------------------------------------------------------------------

def test_matmul_identity_and_projector():
    m = np.array([[1.0, 2], [3, 4]])
    np.testing.assert_array_equal(tc.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)
    out = tc.matmul(Tensor([[1.0, 0], [0, 0]]), Tensor([[5.0, 6], [7, 8]]))
    np.testing.assert_array_equal(out.data, [[5, 6], [0, 0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    a0, b0 = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    wts = rng.standard_normal((3, 2))
    a, b = leaf(a0), leaf(b0)
    with Tape() as tape:
        loss = tc.sum_reduce(tc.mul(tc.matmul(a, b), wts))
    tape.backward(loss)
    num_a = central_diff(lambda x: np.sum((x @ b0) * wts), a0)
    num_b = central_diff(lambda x: np.sum((a0 @ x) * wts), b0)
    assert np.max(np.abs(a.grad - num_a) / np.abs(num_a)) < 1e-5
    assert np.max(np.abs(b.grad - num_b) / np.abs(num_b)) < 1e-5


# -- conv2d -------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(1).standard_normal((1, 5, 7))
    out = tc.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("mode, expected", [
    ("circular", [1 / 3, 1 / 3, 0, 1 / 3]),
    ("zero", [1 / 3, 1 / 3, 0, 0]),
])
def test_conv_ring_example(mode, expected):
    x = np.array([[[1.0, 0, 0, 0]]])
    w = np.full((1, 1, 1, 3), 1 / 3)
    out = tc.conv2d(Tensor(x), Tensor(w), pad_mode_w=mode).data[0, 0]
    np.testing.assert_allclose(out, brute_conv2d(x, w, pad_w=mode)[0, 0], atol=1e-15)
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_conv_even_kernel_rejected():
    with pytest.raises(ConfigurationError):
        tc.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 3))))


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        tc.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


conv_case = st.tuples(
    st.integers(1, 4), st.integers(1, 4), st.integers(1, 6), st.integers(1, 8),
    st.sampled_from([1, 3, 5]), st.sampled_from([1, 3, 5]),
    st.sampled_from(["zero", "circular"]), st.sampled_from(["zero", "circular"]),
    st.integers(0, 2**31 - 1),
)


@settings(max_examples=60, deadline=None)
@given(conv_case)
def test_conv_matches_bruteforce_and_preserves_shape(case):
    ci, co, h, w, kh, kw, mh, mw, seed = case
    rng = np.random.default_rng(seed)
    x, k = rng.standard_normal((ci, h, w)), rng.standard_normal((co, ci, kh, kw))
    out = tc.conv2d(Tensor(x), Tensor(k), mh, mw).data
    assert out.shape == (co, h, w)
    np.testing.assert_allclose(out, brute_conv2d(x, k, mh, mw), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(conv_case, st.integers(-20, 20))
def test_conv_circular_shift_equivariance_is_exact(case, shift):
    ci, co, h, w, kh, kw, mh, mw, seed = case
    rng = np.random.default_rng(seed)
    x, k = rng.standard_normal((ci, h, w)), rng.standard_normal((co, ci, kh, kw))
    for axis, mode in ((1, mh), (2, mw)):
        if mode != "circular":
            continue
        a = tc.conv2d(Tensor(np.roll(x, shift, axis=axis)), Tensor(k), mh, mw).data
        b = np.roll(tc.conv2d(Tensor(x), Tensor(k), mh, mw).data, shift, axis=axis)
        assert np.array_equal(a, b)


def test_conv_bias_and_grads():
    rng = np.random.default_rng(3)
    x, k, bias = leaf(rng.standard_normal((2, 4, 5))), leaf(rng.standard_normal((3, 2, 3, 3))), leaf(
        rng.standard_normal(3))
    wts = rng.standard_normal((3, 4, 5))
    rep = grad_check(lambda: tc.sum_reduce(tc.mul(tc.conv2d(x, k, "zero", "circular", bias=bias), wts)),
                     [x, k, bias], tol=1e-6)
    assert rep.passed, rep.summary()


# -- bilinear sampling ----------------------------------------------------------

def test_bilinear_lattice_point():
    f = np.random.default_rng(2).standard_normal((3, 5, 6))
    out = tc.bilinear_sample(Tensor(f), Tensor([[2.0, 3.0]])).data
    np.testing.assert_array_equal(out[0], f[:, 3, 2])


def test_bilinear_midpoint():
    f = np.array([[[0.0, 1.0]]])
    assert tc.bilinear_sample(Tensor(f), Tensor([[0.5, 0.0]])).data[0, 0] == 0.5


def test_bilinear_matches_naive_oracle():
    rng = np.random.default_rng(4)
    f = rng.standard_normal((4, 9, 11))
    pts = np.stack([rng.uniform(0, 10, 500), rng.uniform(0, 8, 500)], axis=1)
    out = tc.bilinear_sample(Tensor(f), Tensor(pts)).data
    ref = np.stack([naive_bilinear(f, u, v) for u, v in pts])
    assert np.max(np.abs(out - ref)) < 1e-12


def test_bilinear_clamps_to_edge():
    f = np.arange(12.0).reshape(1, 3, 4)
    out = tc.bilinear_sample(Tensor(f), Tensor([[-0.4, -0.2], [3.3, 2.4], [3.0, 2.0]])).data[:, 0]
    np.testing.assert_array_equal(out, [f[0, 0, 0], f[0, 2, 3], f[0, 2, 3]])


def test_bilinear_gradients_features_and_points():
    rng = np.random.default_rng(5)
    f = leaf(rng.standard_normal((3, 6, 7)))
    p = leaf(np.stack([rng.uniform(0.2, 5.8, 20), rng.uniform(0.2, 4.8, 20)], axis=1))
    wts = rng.standard_normal((20, 3))
    rep = grad_check(lambda: tc.sum_reduce(tc.mul(tc.bilinear_sample(f, p), wts)), [f, p], tol=1e-6)
    assert rep.passed, rep.summary()


# -- elementwise suite ----------------------------------------------------------

def test_elementwise_examples():
    assert tc.sigmoid(Tensor(0.0)).data == 0.5
    assert tc.relu(Tensor(-3.0)).data == 0.0
    assert tc.sigmoid(Tensor(math.log(3))).data == pytest.approx(0.75, abs=1e-15)


def test_broadcast_add_tables():
    rng = np.random.default_rng(6)
    base, rows, cols = rng.standard_normal((3, 4, 2)), rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
    out = tc.broadcast_add(Tensor(base), Tensor(rows), Tensor(cols)).data
    np.testing.assert_allclose(out, base + rows[:, None] + cols[None], atol=0)
    with pytest.raises(DimensionError):
        tc.broadcast_add(Tensor(base), Tensor(cols), None)


def test_incompatible_broadcast_raises():
    with pytest.raises(DimensionError):
        tc.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_normalize_channels_statistics():
    x = np.random.default_rng(7).standard_normal((3, 5, 6)) * 4 + 2
    y = tc.normalize_channels(Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=(1, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(1, 2)), 1, atol=1e-5)


# -- grad_check -----------------------------------------------------------------

def test_gradcheck_sigmoid_sum():
    x = leaf(np.random.default_rng(8).standard_normal(10))
    rep = grad_check(lambda: tc.sum_reduce(tc.sigmoid(x)), [x], tol=1e-4)
    assert rep.passed
    s = 1 / (1 + np.exp(-x.data))
    np.testing.assert_allclose(x.grad, s * (1 - s), atol=1e-15)


def test_gradcheck_circular_conv_sum():
    rng = np.random.default_rng(9)
    x, k = leaf(rng.standard_normal((2, 4, 6))), leaf(rng.standard_normal((2, 2, 3, 3)))
    assert grad_check(lambda: tc.sum_reduce(tc.conv2d(x, k, "zero", "circular")), [x, k], tol=1e-4).passed


def test_gradcheck_excludes_relu_kink():
    x = leaf([0.0, 1.5, -2.0])
    rep = grad_check(lambda: tc.sum_reduce(tc.relu(x)), [x], tol=1e-6)
    assert rep.excluded == 1 and rep.checked == 2 and rep.passed
    assert x.grad[0] == 0.0  # subgradient at exactly zero


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gradcheck_reports_nonfinite_operand():
    x = leaf([1.0, 1e-4], name="x")
    with pytest.raises(NumericalError, match="operand x, element 1"):
        grad_check(lambda: tc.sum_reduce(tc.div(1.0, tc.mul(x, x))), [x], step=1e-4)
    y = leaf([0.0], name="y")
    with pytest.raises(NumericalError, match="operands y"):
        grad_check(lambda: tc.sum_reduce(tc.div(1.0, y)), [y])


OPS = {
    "add": lambda a, b: tc.add(a, b),
    "sub": lambda a, b: tc.sub(a, b),
    "mul": lambda a, b: tc.mul(a, b),
    "div": lambda a, b: tc.div(a, tc.add(tc.mul(b, b), 1.0)),
    "sigmoid": lambda a, b: tc.mul(tc.sigmoid(a), b),
    "relu": lambda a, b: tc.mul(tc.relu(a), b),
    "abs": lambda a, b: tc.mul(tc.abs_(a), b),
    "matmul": lambda a, b: tc.matmul(tc.reshape(a, (4, 6)), tc.reshape(b, (6, 4))),
    "normalize": lambda a, b: tc.mul(tc.normalize_channels(a), b),
    "transpose": lambda a, b: tc.mul(tc.transpose(a, (2, 0, 1)), tc.transpose(b, (2, 0, 1))),
    "concat": lambda a, b: tc.concat([a, b], axis=1),
    "pool": lambda a, b: tc.mul(tc.avg_pool2d(a), tc.avg_pool2d(b)),
    "upsample": lambda a, b: tc.mul(tc.upsample_nearest(a, (5, 9)), 2.0),
    "conv": lambda a, b: tc.conv2d(a, tc.reshape(tc.concat([b, b, b], axis=0), (4, 2, 3, 3)),
                                   "zero", "circular"),
    "broadcast_add": lambda a, b: tc.broadcast_add(None, tc.reshape(a, (2, 12)), tc.reshape(b, (2, 12))),
    "cross_entropy": lambda a, b: tc.cross_entropy(tc.mul(a, b), np.arange(12).reshape(3, 4) % 2),
    "cross_entropy_weighted": lambda a, b: tc.cross_entropy(tc.mul(a, b), np.arange(12).reshape(3, 4) % 2,
                                                            np.array([1.0, 4.0])),
    "scatter_rows": lambda a, b: tc.mul(tc.scatter_rows(tc.reshape(a, (6, 4)), np.array([0, 2, 2, 5, 1, 0]), 7), 3.0),
    "take_rows": lambda a, b: tc.mul(tc.take_rows(a, np.array([1, 0, 1])), tc.take_rows(b, np.array([0, 0, 1]))),
    "bilinear": lambda a, b: tc.bilinear_sample(a, tc.reshape(tc.sigmoid(b), (12, 2)) * 2.5),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_passes_gradcheck_over_seeds(name):
    f = OPS[name]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a, b = leaf(rng.standard_normal((2, 3, 4))), leaf(rng.standard_normal((2, 3, 4)))
        wts = None

        def objective():
            nonlocal wts
            out = f(a, b)
            if wts is None:
                wts = np.random.default_rng(1000 + seed).standard_normal(out.shape)
            return tc.sum_reduce(tc.mul(out, wts))

        rep = grad_check(objective, [a, b], step=1e-4, tol=1e-3)
        assert rep.passed, f"{name} seed {seed}: {rep.summary()}"


def test_forward_and_backward_are_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(11)
        x, k = leaf(rng.standard_normal((3, 8, 10))), leaf(rng.standard_normal((4, 3, 3, 3)))
        with Tape() as tape:
            y = tc.normalize_channels(tc.relu(tc.conv2d(x, k, "zero", "circular")))
            loss = tc.sum_reduce(tc.mul(y, y))
        tape.backward(loss)
        return y.data, x.grad, k.grad

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_no_tape_means_no_recording():
    x = leaf([1.0, 2.0])
    y = tc.mul(x, x)
    assert not y.requires_grad
    with Tape() as tape:
        z = tc.mul(x, x)
    assert z.requires_grad and len(tape) == 1


def test_every_reachable_leaf_gets_grad():
    a, b, c = leaf([1.0]), leaf([2.0]), leaf([3.0])
    with Tape() as tape:
        loss = tc.sum_reduce(tc.add(tc.mul(a, b), c))
    tape.backward(loss)
    assert all(t.grad is not None and t.grad.shape == t.shape for t in (a, b, c))


# -- serialization --------------------------------------------------------------

@pytest.mark.parametrize("dtype", [np.float64, np.float32, np.int64, np.int32, np.uint8])
def test_serialization_roundtrip(tmp_path, dtype):
    arr = (np.arange(24).reshape(2, 3, 4) * 3).astype(dtype)
    path = tc.save_tensor(tmp_path / "t.pbt", arr, name="feat")
    back = tc.load_tensor(path)
    assert back.dtype == arr.dtype and np.array_equal(back, arr)
    name, again = tc.load_named(path)
    assert name == "feat" and np.array_equal(again, arr)
    raw = path.read_bytes()
    assert raw[:4] == b"PBVT" and raw[5] in (1, 2, 3, 4, 5)
    assert int.from_bytes(raw[8:12], "little") == 3


def test_weighted_cross_entropy_oracle():
    logits = np.array([[[0.0, 2.0]], [[1.0, -1.0]]])        # 2 classes x 1 x 2
    target = np.array([[1, 0]])
    nll = -np.log(np.array([np.exp(1.0) / (1 + np.exp(1.0)), np.exp(2.0) / (np.exp(2.0) + np.exp(-1.0))]))
    got = tc.cross_entropy(Tensor(logits), target, np.array([1.0, 3.0])).data
    assert got == pytest.approx((3.0 * nll[0] + 1.0 * nll[1]) / 4.0, rel=1e-12)
    plain = tc.cross_entropy(Tensor(logits), target).data
    assert plain == pytest.approx(nll.mean(), rel=1e-12)
    with pytest.raises(DimensionError):
        tc.cross_entropy(Tensor(logits), target, np.ones(3))
