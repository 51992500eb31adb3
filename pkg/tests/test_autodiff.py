import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from czsl_stagewise import autodiff as ad
from czsl_stagewise.autodiff import Tensor, grad_check, no_grad
from czsl_stagewise.errors import DimensionError


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def test_matmul_values():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal(ad.matmul(Tensor(np.eye(2)), x).data, x.data)
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad_matches_fd(rng):
    a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((4, 2)))
    rep = grad_check(lambda: ad.sum(ad.matmul(a, b)), {"a": a, "b": b}, tolerance=1e-6)
    assert rep.passed, rep.failures


def test_softmax_values():
    assert np.allclose(ad.softmax(Tensor(np.zeros(4))).data, 0.25, atol=0, rtol=1e-15)
    assert np.allclose(ad.softmax(Tensor([math.log(3), 0.0])).data, [0.75, 0.25], atol=1e-15)


def test_softmax_jacobian_row():
    x = leaf([0.3, -1.2, 0.8])
    out = ad.softmax(x)[1]
    out.backward()
    p = ad.softmax(Tensor(x.data)).data
    expected = -p[1] * p
    expected[1] = p[1] * (1 - p[1])
    assert np.allclose(x.grad, expected, atol=1e-15)


def test_softmax_grad(rng):
    x = leaf(rng.uniform(-1, 1, (3, 5)))
    w = Tensor(rng.standard_normal((3, 5)))
    assert grad_check(lambda: ad.sum(ad.softmax(x) * w), {"x": x}, tolerance=1e-6).passed


def test_layer_norm_cases(rng):
    const = ad.layer_norm(Tensor(np.full((2, 4), 3.0)))
    assert np.array_equal(const.data, np.zeros((2, 4)))
    two = ad.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert np.allclose(two.data, [-1, 1], atol=1e-5)
    x, g, b = leaf(rng.uniform(-1, 1, (2, 6))), leaf(rng.standard_normal(6)), leaf(rng.standard_normal(6))
    w = Tensor(rng.standard_normal((2, 6)))
    assert grad_check(lambda: ad.sum(ad.layer_norm(x, g, b) * w), {"x": x, "g": g, "b": b},
                      tolerance=1e-5).passed


def test_dropout_zero_is_identity(rng):
    x = Tensor(rng.standard_normal((5, 7)))
    assert np.array_equal(ad.dropout(x, 0.0, True, ad.make_rng(0)).data, x.data)
    assert np.array_equal(ad.dropout(x, 0.5, False).data, x.data)


def test_dropout_rate_binomial():
    x = Tensor(np.ones(20000))
    out = ad.dropout(x, 0.1, True, ad.make_rng(3)).data
    zeros = int((out == 0).sum())
    sigma = math.sqrt(20000 * 0.1 * 0.9)
    assert abs(zeros - 2000) < 3 * sigma
    assert np.allclose(out[out != 0], 1 / 0.9)


def test_cross_entropy_cases():
    assert ad.cross_entropy_from_probs(Tensor([[0.0, 1.0]]), [1]).item() == 0.0
    u = ad.cross_entropy_from_probs(Tensor(np.full((1, 5), 0.2)), [0]).item()
    assert abs(u - 1.6094379124341003) < 1e-12
    floored = ad.cross_entropy_from_probs(Tensor([[1.0, 0.0]]), [1]).item()
    assert abs(floored - -math.log(1e-12)) < 1e-9


def test_concat_then_slice_recovers(rng):
    a, b = Tensor(rng.standard_normal((2, 3, 4))), Tensor(rng.standard_normal((2, 3, 5)))
    c = ad.concat_last_axis([a, b]).data
    assert np.array_equal(c[..., :4], a.data) and np.array_equal(c[..., 4:], b.data)


def test_grad_check_linear_function(rng):
    x = leaf(rng.standard_normal((3, 3)))
    rep = grad_check(lambda: ad.sum(x), {"x": x}, tolerance=1e-10)
    assert rep.passed and rep.max_rel_error < 1e-10


def test_backward_twice_rejected(rng):
    x = leaf(rng.standard_normal(3))
    y = ad.sum(x * x)
    y.backward()
    with pytest.raises(RuntimeError):
        y.backward()


def test_grads_accumulate_until_zeroed():
    x = leaf([1.0, 2.0])
    ad.sum(x * x).backward()
    ad.sum(x * x).backward()
    assert np.array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with no_grad():
        y = x * x
    assert not y.requires_grad


def test_reverse_schedule_visits_each_once(rng):
    x = leaf(rng.standard_normal(4))
    h = x * x
    y = ad.sum(h + h * x)
    order = ad.reverse_schedule(y)
    assert len(order) == len({id(t) for t in order})
    seqs = [t._seq for t in order]
    assert seqs == sorted(seqs, reverse=True)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    p = ad.softmax(Tensor(x), axis=-1).data
    assert np.all(np.abs(p.sum(axis=-1) - 1) < 1e-12)
    assert np.all(np.isfinite(p))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_composite_gradients_random_inputs(seed):
    r = np.random.default_rng(seed)
    x, W = leaf(r.uniform(-1, 1, (3, 4))), leaf(r.uniform(-1, 1, (4, 4)))
    g, b = leaf(r.uniform(-1, 1, 4)), leaf(r.uniform(-1, 1, 4))
    lab = r.integers(0, 4, 3)

    def f():
        h = ad.layer_norm(ad.matmul(x, W), g, b)
        return ad.cross_entropy_from_probs(ad.softmax(ad.l2_normalize(h) * 3.0 + h), lab)

    rep = grad_check(f, {"x": x, "W": W, "g": g, "b": b}, tolerance=1e-4)
    assert rep.passed, rep.failures
