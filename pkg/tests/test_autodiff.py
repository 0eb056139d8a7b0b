import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evbridge import autodiff as ad
from evbridge.errors import DimensionError, UsageError
from evbridge.gradcheck import PRIMITIVES, check_primitive


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    assert check_primitive(name, n_points=5) < 1e-6


def _naive_conv(x, w, b, stride):
    bsz, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((bsz, cout, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[n, c, i * stride + di, j * stride + dj] * w[o, c, di, dj]
                    out[n, o, i, j] = acc
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loops_exactly_on_integers(rng, stride):
    # small integers make every partial sum exact, so summation order cannot matter
    x = rng.integers(-4, 5, size=(2, 3, 6, 5)).astype(float)
    w = rng.integers(-3, 4, size=(4, 3, 3, 3)).astype(float)
    b = rng.integers(-2, 3, size=4).astype(float)
    assert np.array_equal(ad.conv2d(x, w, b, stride).data, _naive_conv(x, w, b, stride))


def test_conv_matches_loops_on_floats(rng):
    x, w, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    assert np.allclose(ad.conv2d(x, w, b).data, _naive_conv(x, w, b, 1), rtol=1e-12, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(DimensionError):
        ad.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((3, 4, 3, 3)))


def test_backward_simple_values():
    x = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.sum_(x * x) + ad.mean(ad.relu(x))
    tape.backward(y)
    assert np.allclose(x.grad, 2 * x.data + np.array([1, 0, 1]) / 3)


def test_gradient_accumulates_over_reuse():
    x = ad.Tensor(2.0, requires_grad=True)
    with ad.Tape() as tape:
        y = x * x * x
    tape.backward(y)
    assert x.grad == pytest.approx(12.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_backward_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    w = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    x = rng.normal(size=(2, 3))

    def grads(f):
        w.grad = None
        with ad.Tape() as tape:
            out = f()
        tape.backward(out)
        return w.grad.copy()

    f1 = lambda: ad.sum_(ad.tanh(ad.matmul(x, w)))
    f2 = lambda: ad.mean(ad.matmul(x, w) * ad.matmul(x, w))
    combined = grads(lambda: f1() * a + f2() * b)
    assert np.allclose(combined, a * grads(f1) + b * grads(f2), atol=1e-12)


def test_non_scalar_root_rejected():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        y = x * 2.0
    with pytest.raises(UsageError):
        tape.backward(y)


def test_root_from_other_tape_rejected():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape():
        y = ad.sum_(x)
    with ad.Tape() as other:
        pass
    with pytest.raises(UsageError):
        other.backward(y)


def test_no_grad_records_nothing():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        with ad.no_grad():
            ad.sum_(x * 3.0)
    assert len(tape) == 0


def test_detach_blocks_gradient_and_is_visible():
    x = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.sum_(ad.detach(x) * x)
    tape.backward(y)
    assert "detach" in tape.ops()
    assert np.allclose(x.grad, [1.0, 2.0])


def test_grad_check_holds_detached_values():
    x = ad.Tensor(np.array([0.7, -1.3]), requires_grad=True)
    # d/dx of sum(stop(x) * x) is stop(x); naive differences would give 2x
    assert ad.grad_check(lambda: ad.sum_(ad.detach(x) * x), [x]) < 1e-8


def test_grad_check_detects_wrong_gradient():
    x = ad.Tensor(np.array([0.5, 1.5]), requires_grad=True)

    def bad():
        return ad._record(np.sum(x.data ** 2), (x,), lambda g: (g * x.data,), "bad")

    assert ad.grad_check(lambda: ad.sum_(bad()), [x]) > 0.1
    # smaller retry steps do not hide an error that is independent of the step
    assert ad.grad_check(lambda: ad.sum_(bad()), [x], retry_steps=(1e-6, 1e-7)) > 0.1


def test_grad_check_retry_resolves_kink_in_stencil():
    # relu kink 4e-6 away from the base point: inside the 1e-5 stencil, outside 1e-6
    x = ad.Tensor(np.array([4e-6]), requires_grad=True)
    f = lambda: ad.sum_(ad.relu(x))
    assert ad.grad_check(f, [x]) > 0.1
    assert ad.grad_check(f, [x], retry_steps=(1e-6,)) < 1e-9


def test_power_rejects_negative_base():
    with pytest.raises(UsageError):
        ad.power(ad.Tensor(np.array([-1.0])), 0.5)


def test_max_splits_ties():
    x = ad.Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.sum_(ad.max_(x, axis=1))
    tape.backward(y)
    assert x.grad.tolist() == [[0.0, 0.5, 0.5]]


def test_softmax_cross_entropy_value():
    logits = np.array([[0.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]])
    v = ad.softmax_cross_entropy(logits, np.array([1, 0])).item()
    expected = (np.log(4.0) + (np.log(np.exp(2.0) + 3.0) - 2.0)) / 2
    assert v == pytest.approx(expected, rel=1e-12)


def test_adam_first_step_identity():
    store = ad.ParamStore()
    p = store.add("p", np.array([0.5]))
    p.grad = np.array([1.0])
    ad.adam_step(store, lr=1e-3)
    # bias correction makes the first step exactly lr * g / (|g| + eps)
    assert p.data[0] == pytest.approx(0.5 - 1e-3 / (1.0 + 1e-8), rel=1e-14)


def test_adam_constant_gradient_steps_are_lr():
    store = ad.ParamStore()
    p = store.add("p", np.zeros(3))
    for _ in range(5):
        p.grad = np.array([2.0, -0.5, 7.0])
        ad.adam_step(store, lr=0.01, eps=0.0)
    assert np.allclose(p.data, [-0.05, 0.05, -0.05], rtol=1e-12)


def test_adam_zero_gradient_no_move_and_missing_grad():
    store = ad.ParamStore()
    p = store.add("p", np.ones(2))
    p.grad = np.zeros(2)
    ad.adam_step(store)
    assert np.array_equal(p.data, np.ones(2))
    p.grad = None
    with pytest.raises(UsageError):
        ad.adam_step(store)


def test_param_store_rules(rng):
    store = ad.ParamStore()
    store.add("a", rng.normal(size=(2, 2)))
    with pytest.raises(UsageError):
        store.add("a", np.zeros(1))
    arrays = store.arrays()
    other = ad.ParamStore()
    other.add("a", np.zeros((2, 2)))
    other.load_arrays(arrays)
    assert np.array_equal(other["a"].data, store["a"].data)
    with pytest.raises(UsageError):
        other.load_arrays({"b": np.zeros(1)})
    with pytest.raises(DimensionError):
        other.load_arrays({"a": np.zeros(3)})


def test_backward_with_store_zero_fills_unused():
    store = ad.ParamStore()
    a = store.add("a", np.ones(2))
    store.add("unused", np.ones(3))
    with ad.Tape() as tape:
        y = ad.sum_(a * 2.0)
    tape.backward(y, store)
    assert np.array_equal(store["unused"].grad, np.zeros(3))
    assert np.array_equal(a.grad, [2.0, 2.0])
