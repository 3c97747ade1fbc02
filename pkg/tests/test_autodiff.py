import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from changeforge.autodiff import (
    GraphError,
    NonFiniteGradientError,
    ParamStore,
    Tensor,
    add,
    add_scalar,
    adam_step,
    backward,
    conv2d,
    conv_transpose2d,
    grad,
    instance_norm,
    l1_distance,
    leaky_relu,
    load_checkpoint,
    log,
    mean_log,
    mean_reduce,
    mean_square_to_const,
    mul,
    no_grad,
    pad2d,
    relu,
    save_checkpoint,
    scalar_mul,
    sigmoid,
    square,
    square_distance,
    sub,
    sum_reduce,
    tanh,
)
from gradcheck import leaf, max_relative_error, projector

TOL = 1e-4


def _check(rng, fn, shapes, out_shape, scale=1.0):
    proj = projector(rng, out_shape)
    ts = [leaf(rng, s, scale) for s in shapes]
    return max_relative_error(lambda *a: proj(fn(*a)), ts)


# Finite-difference checks, one per op kind, 64-bit.

ELEMENTWISE = {
    "relu": relu,
    "leaky_relu": lambda x: leaky_relu(x, 0.2),
    "tanh": tanh,
    "sigmoid": sigmoid,
    "square": square,
    "scalar_mul": lambda x: scalar_mul(x, -2.5),
    "add_scalar": lambda x: add_scalar(x, 0.7),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_elementwise_gradients(rng, name):
    assert _check(rng, ELEMENTWISE[name], [(2, 3, 4)], (2, 3, 4)) < TOL


def test_log_gradient(rng):
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    proj = projector(rng, (3, 4))
    assert max_relative_error(lambda a: proj(log(a)), [x]) < TOL


@pytest.mark.parametrize("name,fn", [("add", add), ("sub", sub), ("mul", mul)])
def test_binary_gradients(rng, name, fn):
    assert _check(rng, fn, [(2, 5), (2, 5)], (2, 5)) < TOL


@pytest.mark.parametrize("name,fn", [
    ("mean_reduce", mean_reduce),
    ("sum_reduce", sum_reduce),
    ("mean_square_to_const", lambda x: mean_square_to_const(x, 1.0)),
])
def test_reduction_gradients(rng, name, fn):
    ts = [leaf(rng, (2, 3, 3))]
    assert max_relative_error(fn, ts) < TOL


def test_mean_log_gradient(rng):
    x = Tensor(rng.uniform(0.2, 0.9, size=(2, 6)), requires_grad=True)
    assert max_relative_error(mean_log, [x]) < TOL


@pytest.mark.parametrize("fn", [l1_distance, square_distance])
def test_distance_gradients(rng, fn):
    ts = [leaf(rng, (2, 3, 4)), leaf(rng, (2, 3, 4))]
    assert max_relative_error(fn, ts) < TOL


@pytest.mark.parametrize("stride,padding,mode", [
    (1, 0, "zeros"), (1, 1, "zeros"), (2, 1, "zeros"), (1, 1, "reflect"), (2, 1, "reflect"),
])
def test_conv2d_gradients(rng, stride, padding, mode):
    x, w, b = (2, 3, 7, 6), (4, 3, 3, 3), (4,)
    out = conv2d(Tensor(np.zeros(x)), Tensor(np.zeros(w)), None, stride, padding, mode).shape
    fn = lambda a, k, c: conv2d(a, k, c, stride=stride, padding=padding, padding_mode=mode)
    assert _check(rng, fn, [x, w, b], out) < TOL


def test_conv2d_large_kernel_gradients(rng):
    """7x7 stride-1 kernels take the frequency-domain path."""
    fn = lambda a, k, c: conv2d(a, k, c, stride=1, padding=3, padding_mode="reflect")
    assert _check(rng, fn, [(2, 2, 8, 9), (3, 2, 7, 7), (3,)], (2, 3, 8, 9)) < TOL


def test_conv2d_4x4_stride2_gradients(rng):
    fn = lambda a, k, c: conv2d(a, k, c, stride=2, padding=1)
    assert _check(rng, fn, [(1, 2, 8, 8), (3, 2, 4, 4), (3,)], (1, 3, 4, 4)) < TOL


def test_conv_transpose_gradients(rng):
    fn = lambda a, k, c: conv_transpose2d(a, k, c, stride=2, padding=1, output_padding=1)
    assert _check(rng, fn, [(2, 3, 4, 5), (3, 2, 3, 3), (2,)], (2, 2, 8, 10)) < TOL


def test_instance_norm_gradient(rng):
    assert _check(rng, instance_norm, [(2, 3, 4, 4)], (2, 3, 4, 4)) < TOL


def test_reflect_pad_gradient(rng):
    fn = lambda a: pad2d(a, 2, "reflect")
    assert _check(rng, fn, [(1, 2, 5, 4)], (1, 2, 9, 8)) < TOL


# Forward definitions against direct oracles.

def _direct_conv(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
    return out


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (4, 2, 1), (7, 1, 3), (1, 1, 0)])
def test_conv2d_matches_direct_sum(rng, k, stride, pad):
    x = rng.normal(size=(2, 3, 9, 10))
    w = rng.normal(size=(4, 3, k, k))
    got = conv2d(Tensor(x), Tensor(w), None, stride, pad).data
    np.testing.assert_allclose(got, _direct_conv(x, w, stride, pad), rtol=1e-10, atol=1e-10)


def test_conv_transpose_is_adjoint_of_conv(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3))
    y = rng.normal(size=(1, 3, 4, 4))
    lhs = np.sum(conv2d(Tensor(x), Tensor(w), None, 2, 1).data * y)
    rhs = np.sum(x * conv_transpose2d(Tensor(y), Tensor(w), None, 2, 1, output_padding=1).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_reflect_padding_values():
    x = Tensor(np.arange(12.0).reshape(1, 1, 3, 4))
    out = pad2d(x, 2, "reflect").data[0, 0]
    assert out[2].tolist() == [2.0, 1.0, 0.0, 1.0, 2.0, 3.0, 2.0, 1.0]
    assert out[:, 2].tolist() == [8.0, 4.0, 0.0, 4.0, 8.0, 4.0, 0.0]


def test_identity_kernel(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(w)).data, x)


def test_instance_norm_constant_plane():
    out = instance_norm(Tensor(np.full((1, 2, 4, 4), 3.5))).data
    assert np.all(out == 0.0)


def test_instance_norm_statistics(rng):
    out = instance_norm(Tensor(rng.normal(2.0, 3.0, size=(2, 3, 6, 6)))).data
    np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(2, 3)), 1.0, atol=1e-5)


def test_l1_of_identical_tensors_is_zero(rng):
    a = Tensor(rng.normal(size=(3, 3)))
    assert float(l1_distance(a, a).data) == 0.0


def test_conv_shape_errors(rng):
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 3, 3))), stride=0)


def test_binary_shape_mismatch():
    with pytest.raises(ValueError):
        add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


# Backward contract.

def test_mean_square_gradient_example():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    mean_reduce(square(x)).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 2.0])


def test_dead_branch_gets_zero_gradient(rng):
    x = leaf(rng, (3,))
    p = leaf(rng, (3,))
    gx, gp = grad(sum_reduce(square(x)), [x, p])
    assert np.all(gp == 0.0)
    np.testing.assert_allclose(gx, 2 * x.data)


def test_non_scalar_loss_rejected(rng):
    with pytest.raises(GraphError):
        backward(square(leaf(rng, (3,))))


def test_cycle_detected(rng):
    x = leaf(rng, (2,))
    y = square(x)
    x.parents = (y,)
    with pytest.raises(GraphError, match="cycle"):
        backward(sum_reduce(y))


def test_shared_node_visited_once(rng):
    x = leaf(rng, (4,))
    y = tanh(x)
    loss = sum_reduce(add(y, y))
    loss.backward()
    np.testing.assert_allclose(x.grad, 2 * (1 - np.tanh(x.data) ** 2), rtol=1e-14)


def test_backward_is_linear(rng):
    x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    f1 = lambda: mean_reduce(tanh(conv2d(x, w, padding=1)))
    f2 = lambda: l1_distance(instance_norm(conv2d(x, w, padding=1, padding_mode="reflect")),
                             Tensor(np.ones((1, 3, 6, 6))))
    g1 = grad(f1(), [x, w])
    g2 = grad(f2(), [x, w])
    g12 = grad(add(f1(), f2()), [x, w])
    for a, b, c in zip(g1, g2, g12):
        np.testing.assert_allclose(a + b, c, rtol=0, atol=1e-10)


def test_no_grad_builds_no_graph(rng):
    x = leaf(rng, (3,))
    with no_grad():
        y = square(x)
    assert not y.requires_grad and not y.parents


def test_forward_values_finite(rng):
    x = Tensor(rng.normal(size=(2, 3, 8, 8)) * 50)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)))
    out = tanh(instance_norm(conv2d(x, w, padding=1, padding_mode="reflect")))
    assert np.all(np.isfinite(out.data))


def test_determinism(rng):
    def run():
        r = np.random.default_rng(7)
        x = Tensor(r.normal(size=(2, 3, 8, 8)), requires_grad=True)
        w = Tensor(r.normal(size=(4, 3, 7, 7)), requires_grad=True)
        loss = mean_reduce(tanh(conv2d(x, w, padding=3, padding_mode="reflect")))
        return [loss.data.tobytes()] + [g.tobytes() for g in grad(loss, [x, w])]
    assert run() == run()


# Optimizer.

def _store(value, dtype=np.float64):
    ps = ParamStore(dtype)
    ps.add("w", np.asarray(value, dtype=dtype))
    return ps


def test_adam_zero_gradient_keeps_parameters():
    ps = _store([1.0, -2.0])
    adam_step(ps, {"w": np.zeros(2)}, lr=0.1)
    np.testing.assert_array_equal(ps["w"].data, [1.0, -2.0])


def test_adam_descends_on_square():
    ps = _store([1.0])
    adam_step(ps, {"w": 2 * ps["w"].data}, lr=0.1)
    assert ps["w"].data[0] < 1.0


def _scalar_adam(w, steps, lr, b1=0.5, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * (w - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return w


def test_adam_matches_scalar_reference_and_converges():
    ps = _store([0.0])
    for _ in range(200):
        ps.zero_grad()
        loss = square(add_scalar(ps["w"], -3.0))
        sum_reduce(loss).backward()
        adam_step(ps, lr=0.1)
    w = float(ps["w"].data[0])
    assert w == pytest.approx(_scalar_adam(0.0, 200, 0.1), abs=1e-12)
    assert abs(w - 3.0) < 1e-2


def test_adam_rejects_non_finite_gradient():
    ps = _store([1.0, 2.0])
    with pytest.raises(NonFiniteGradientError):
        adam_step(ps, {"w": np.array([np.nan, 0.0])})
    np.testing.assert_array_equal(ps["w"].data, [1.0, 2.0])
    assert ps.step == 0


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5))
def test_optimizer_state_shapes_follow_parameters(vals):
    ps = _store(vals)
    adam_step(ps, {"w": np.ones(len(vals))}, lr=0.01)
    assert ps.m["w"].shape == ps.v["w"].shape == ps["w"].shape


def test_checkpoint_round_trip(tmp_path, rng):
    ps = ParamStore(np.float32)
    ps.add("a.w", rng.normal(size=(2, 3)))
    ps.add("b.b", rng.normal(size=(4,)))
    ps.step = 17
    save_checkpoint(ps, tmp_path / "ck", {"role": "G"})
    back, meta = load_checkpoint(tmp_path / "ck")
    assert meta == {"role": "G"} and back.step == 17 and list(back) == ["a.w", "b.b"]
    for name in ps:
        assert back[name].data.tobytes() == ps[name].data.tobytes()
    raw = (tmp_path / "ck.bin").read_bytes()
    assert raw == ps["a.w"].data.astype("<f4").tobytes() + ps["b.b"].data.astype("<f4").tobytes()
