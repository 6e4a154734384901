import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slotfocus import autodiff as ad
from slotfocus.gradcheck import numeric_gradient, relative_error


def grad_of(fn, *arrays_):
    """Tape gradients of sum(fn(*tensors)) with respect to each input."""
    ts = [ad.tensor(a, requires_grad=True) for a in arrays_]
    ad.backward(ad.sum(fn(*ts)))
    return [t.grad for t in ts]


def fd_of(fn, *arrays_):
    out = []
    for k, a in enumerate(arrays_):
        def value():
            with ad.no_grad():
                return float(ad.sum(fn(*[ad.tensor(x) for x in arrays_])).data)
        out.append(numeric_gradient(value, a))
    return out


def assert_grads_match(fn, *arrays_):
    for g, n in zip(grad_of(fn, *arrays_), fd_of(fn, *arrays_)):
        assert relative_error(g, n).max() < 1e-4


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(np.eye(2), m).data, m)


def test_matmul_projector_selects_row():
    out = ad.matmul([[1.0, 0.0], [0.0, 0.0]], [[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(out.data, [[5, 6], [0, 0]])


def test_matmul_gradient_matches_finite_differences(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ga, _ = grad_of(ad.matmul, a, b)
    np.testing.assert_allclose(ga, np.ones((3, 2)) @ b.T, atol=1e-12)
    (fd_a, _) = fd_of(ad.matmul, a, b)
    assert relative_error(ga, fd_a).max() < 1e-4


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(np.zeros((2, 3)), np.zeros((2, 2)))


@pytest.mark.parametrize("shape_a, shape_b", [((3,), (3, 2)), ((2, 3), (3,)), ((3,), (3,))])
def test_matmul_vector_forms(rng, shape_a, shape_b):
    assert_grads_match(ad.matmul, rng.normal(size=shape_a), rng.normal(size=shape_b))


def test_sigmoid_tanh_at_zero():
    np.testing.assert_array_equal(ad.sigmoid(np.zeros(4)).data, 0.5)
    np.testing.assert_array_equal(ad.tanh(np.zeros(4)).data, 0.0)


def test_sigmoid_gradient_at_zero():
    (g,) = grad_of(ad.sigmoid, np.zeros(1))
    (n,) = fd_of(ad.sigmoid, np.zeros(1))
    assert g[0] == 0.25
    assert abs(n[0] - 0.25) < 1e-9


def test_sigmoid_is_finite_for_extreme_inputs():
    out = ad.sigmoid(np.array([-1e4, 0.0, 1e4])).data
    np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


@pytest.mark.parametrize("op", ["sigmoid", "tanh", "exp", "neg"])
def test_unary_gradients(rng, op):
    assert_grads_match(lambda x: ad.elementwise(op, x), rng.normal(size=5))


def test_log_gradient(rng):
    assert_grads_match(ad.log, rng.uniform(0.5, 2.0, size=5))


@pytest.mark.parametrize("op", ["add", "mul"])
def test_binary_gradients(rng, op):
    assert_grads_match(lambda a, b: ad.elementwise(op, a, b), rng.normal(size=4), rng.normal(size=4))


def test_scalar_broadcast_gradient(rng):
    assert_grads_match(ad.mul, rng.normal(size=()), rng.normal(size=3))


def test_no_general_broadcasting():
    with pytest.raises(ad.ShapeError):
        ad.add(np.zeros((2, 3)), np.zeros(3))


def test_unknown_elementwise_op():
    with pytest.raises(ValueError):
        ad.elementwise("relu", np.zeros(2))


def test_log_of_zero_surfaces_as_non_finite():
    assert not np.isfinite(ad.log(np.zeros(1)).data).any()


def test_softmax_uniform_and_single():
    np.testing.assert_array_equal(ad.softmax(np.zeros(2)).data, [0.5, 0.5])
    np.testing.assert_array_equal(ad.softmax(np.array([37.5])).data, [1.0])


def test_softmax_large_logits_against_mpmath():
    logits = [1000.0, 1000.5]
    mpmath.mp.dps = 50
    e = [mpmath.exp(mpmath.mpf(x)) for x in logits]
    ref = [float(v / sum(e)) for v in e]
    out = ad.softmax(np.array(logits)).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, ref, rtol=1e-14)
    assert abs(out.sum() - 1.0) < 1e-12


def test_softmax_rejects_non_finite():
    with pytest.raises(ad.NumericError):
        ad.softmax(np.array([0.0, np.inf]))


def test_softmax_mask_gives_zero_mass():
    p = ad.softmax(np.array([3.0, 1.0, 2.0]), mask=np.array([False, True, True])).data
    assert p[0] == 0.0
    assert abs(p.sum() - 1.0) < 1e-15


def test_softmax_gradient(rng):
    w = rng.normal(size=4)
    assert_grads_match(lambda z: ad.softmax(z) * ad.tensor(w), rng.normal(size=4))


def test_log_softmax_and_cross_entropy_agree(rng):
    z = rng.normal(size=5)
    ce = ad.cross_entropy(ad.tensor(z), 2).item()
    assert abs(ce + ad.log_softmax(z).data[2]) < 1e-12
    assert abs(ce + np.log(ad.softmax(z).data[2])) < 1e-12
    assert_grads_match(lambda x: ad.cross_entropy(x, 3), z)


def test_cross_entropy_does_not_underflow():
    z = np.array([0.0, -800.0])
    assert ad.cross_entropy(ad.tensor(z), 1).item() == pytest.approx(800.0)


def test_concat_forward_and_gradient():
    np.testing.assert_array_equal(ad.concat([1.0, 2.0], [3.0]).data, [1, 2, 3])
    ga, gb = grad_of(ad.concat, np.array([1.0, 2.0]), np.array([3.0]))
    np.testing.assert_array_equal(ga, [1, 1])
    np.testing.assert_array_equal(gb, [1])


def test_concat_rejects_empty_and_matrices():
    with pytest.raises(ad.ShapeError):
        ad.concat(np.array([1.0]), np.array([]))
    with pytest.raises(ad.ShapeError):
        ad.concat(np.zeros((2, 2)), np.zeros(2))


@pytest.mark.parametrize("fn", [
    lambda v: ad.stack([v, v * 2.0]),
    lambda v: ad.broadcast_rows(v, 3),
    lambda v: ad.reshape(v, (2, 2)),
    lambda v: ad.slice_(v, 1, 3),
    lambda v: ad.pick(v, 2),
    lambda v: ad.take_row(ad.reshape(v, (2, 2)), 1),
])
def test_structural_gradients(rng, fn):
    assert_grads_match(fn, rng.normal(size=4))


def test_backward_sum_and_square():
    w = ad.tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(ad.sum(w))
    np.testing.assert_array_equal(w.grad, 1.0)
    w = ad.tensor([1.0, 2.0], requires_grad=True)
    ad.backward(ad.sum(w * w))
    np.testing.assert_array_equal(w.grad, [2.0, 4.0])


def test_reuse_accumulates():
    x = ad.tensor([3.0], requires_grad=True)
    ad.backward(ad.sum(x + x))
    np.testing.assert_array_equal(x.grad, [2.0])
    ad.backward(ad.sum(x * 3.0))
    np.testing.assert_array_equal(x.grad, [5.0])


def test_non_participating_grad_stays_zero():
    used = ad.tensor([1.0], requires_grad=True)
    unused = ad.tensor([4.0, 5.0], requires_grad=True)
    ad.backward(ad.sum(used * used))
    np.testing.assert_array_equal(unused.grad, [0.0, 0.0])


def test_backward_requires_scalar():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(x * 2.0)


def test_no_grad_records_nothing():
    x = ad.tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert y.node is None and not y.requires_grad


def test_tape_replays_in_reverse_execution_order():
    x = ad.tensor([0.3, -0.2], requires_grad=True)
    a = ad.tanh(x)
    b = a * a
    c = ad.sum(b + a)
    assert a.node.seq < b.node.seq < c.node.seq
    ad.backward(c)
    t = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t), rtol=1e-14)


def test_lstm_cell_gradients(rng):
    H, n = 3, 2
    inputs = [rng.normal(size=s) for s in [(n,), (H,), (H,), (4 * H, n), (4 * H, H), (4 * H,), (3, H)]]

    def fn(*ts):
        h, c = ad.lstm_cell(*ts)
        return ad.concat(h, c * c)

    assert_grads_match(fn, *inputs)


def test_determinism(rng):
    a, b = rng.normal(size=(3, 3)), rng.normal(size=3)
    first = grad_of(lambda x, y: ad.tanh(ad.matmul(x, y)), a, b)
    second = grad_of(lambda x, y: ad.tanh(ad.matmul(x, y)), a, b)
    for g1, g2 in zip(first, second):
        assert g1.tobytes() == g2.tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3,), elements=st.floats(-3, 3)),
       arrays(np.float64, (3,), elements=st.floats(-3, 3)))
def test_random_composite_gradient(a, b):
    def fn(x, y):
        return ad.softmax(ad.tanh(x) * y + ad.sigmoid(y))
    g = grad_of(lambda x, y: ad.pick(fn(x, y), 0), a, b)
    n = fd_of(lambda x, y: ad.pick(fn(x, y), 0), a.copy(), b.copy())
    for gi, ni in zip(g, n):
        assert relative_error(gi, ni).max() < 1e-4


def test_float32_mode_roundtrip():
    ad.set_default_dtype(np.float32)
    try:
        assert ad.tensor([1.0]).data.dtype == np.float32
    finally:
        ad.set_default_dtype(np.float64)
