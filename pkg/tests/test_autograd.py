import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prefpoe import autograd as ag
from prefpoe.autograd import DomainError, ShapeError
from prefpoe.verify import finite_diff


def grad_of(fn, *arrays):
    leaves = [ag.tensor(a, requires_grad=True) for a in arrays]
    fn(*leaves).backward()
    return [l.grad for l in leaves]


def numeric(fn, *arrays):
    out = []
    for i, a in enumerate(arrays):
        def f(x, i=i):
            args = [ag.tensor(x if j == i else b) for j, b in enumerate(arrays)]
            return float(fn(*args).data)
        out.append(finite_diff(f, a))
    return out


UNARY = {
    "tanh": ag.tanh,
    "exp": ag.exp,
    "square": ag.square,
    "log_of_shifted": lambda x: ag.log(ag.exp(x) + 1.0),
    "sqrt_of_shifted": lambda x: ag.sqrt(ag.square(x) + 1.0),
    "neg": ag.neg,
    "softmax": ag.softmax,
    "log_softmax": ag.log_softmax,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name, rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    fn = lambda t: ag.tsum(UNARY[name](t) * w)
    np.testing.assert_allclose(grad_of(fn, x)[0], numeric(fn, x)[0], rtol=1e-6, atol=1e-8)


def test_binary_and_reduction_gradients(rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    fn = lambda x, y: ag.mean(ag.matmul(x, y) * 2.0 - 1.0) + ag.tsum(ag.logsumexp(ag.matmul(x, y)))
    for g, n in zip(grad_of(fn, a, b), numeric(fn, a, b)):
        np.testing.assert_allclose(g, n, rtol=1e-6, atol=1e-8)


def test_linear_matches_matmul_plus_bias(rng):
    x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
    out = ag.linear(ag.tensor(x), ag.tensor(w), ag.tensor(b))
    np.testing.assert_allclose(out.data, x @ w + b)
    fn = lambda x, w, b: ag.tsum(ag.tanh(ag.linear(x, w, b)))
    for g, n in zip(grad_of(fn, x, w, b), numeric(fn, x, w, b)):
        np.testing.assert_allclose(g, n, rtol=1e-6, atol=1e-8)


def test_division_and_minmax(rng):
    a, b = rng.normal(size=5), rng.uniform(1, 2, size=5)
    fn = lambda x, y: ag.tsum(ag.div(x, y) + ag.minimum(x, y) * 3 + ag.maximum(x, y))
    for g, n in zip(grad_of(fn, a, b), numeric(fn, a, b)):
        np.testing.assert_allclose(g, n, rtol=1e-6, atol=1e-8)


def test_gather_stack_concat_reshape(rng):
    a = rng.normal(size=(4, 3))
    idx = np.array([0, 2, 1, 2])
    fn = lambda x: ag.tsum(ag.square(ag.gather(x, idx))) + ag.tsum(
        ag.reshape(ag.concat([x, ag.stack([x[0] if False else ag.gather(x, idx)], axis=1)], axis=1), (-1,))
    )
    np.testing.assert_allclose(grad_of(fn, a)[0], numeric(fn, a)[0], atol=1e-8)


def test_clamp_has_zero_gradient_outside_bounds():
    x = ag.tensor([-2.0, 0.0, 2.0], requires_grad=True)
    ag.tsum(ag.clamp(x, -1.0, 1.0)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_gradients_accumulate_and_reuse_of_node():
    x = ag.tensor(3.0, requires_grad=True)
    y = x * x + x  # x used three times
    y.backward()
    assert x.grad == pytest.approx(7.0)
    (x * 2.0).backward()
    assert x.grad == pytest.approx(9.0)


def test_no_grad_records_nothing():
    x = ag.tensor([1.0, 2.0], requires_grad=True)
    with ag.no_grad():
        y = ag.tsum(x * x)
    assert not y.requires_grad
    assert ag.is_grad_enabled()


def test_detach_blocks_gradient():
    x = ag.tensor(2.0, requires_grad=True)
    (ag.detach(x) * x).backward()
    assert x.grad == pytest.approx(2.0)


def test_backward_requires_scalar_root():
    x = ag.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\[2, 3\].*\[4, 5\]"):
        ag.matmul(ag.tensor(np.zeros((2, 3))), ag.tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        ag.tensor(np.zeros(3)) + ag.tensor(np.zeros(4))


def test_domain_errors():
    with pytest.raises(DomainError):
        ag.log(ag.tensor([1.0, -1.0]))
    with pytest.raises(DomainError):
        ag.div(ag.tensor(1.0), ag.tensor(0.0))
    with pytest.raises(DomainError):
        ag.gather(ag.tensor(np.zeros((2, 3))), [0, 3])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
def test_log_softmax_is_normalised_and_shift_invariant(x):
    lp = ag.log_softmax(ag.tensor(x)).data
    np.testing.assert_allclose(np.exp(lp).sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ag.log_softmax(ag.tensor(x + 7.5)).data, lp, atol=1e-10)
