import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unitface import numerics as nx
from unitface.numerics import DeterminismError, Parameter, ShapeError
from unitface.verify import GRADIENT_CHECKS

finite = st.floats(-20, 20, allow_nan=False)


def test_linear_examples():
    I = Parameter(np.eye(2))
    np.testing.assert_array_equal(nx.linear([[1.0, 2.0]], I), [[1.0, 2.0]])
    W = Parameter(np.diag([2.0, 3.0]))
    b = Parameter(np.array([1.0, 1.0]))
    np.testing.assert_array_equal(nx.linear(np.eye(2), W, b), [[3.0, 1.0], [1.0, 4.0]])


def test_linear_shape_mismatch():
    with pytest.raises(ShapeError):
        nx.linear(np.zeros((3, 4)), Parameter(np.zeros((5, 2))))


def test_softmax_example():
    np.testing.assert_allclose(nx.softmax([0.0, math.log(3.0)]), [0.25, 0.75], rtol=0, atol=1e-15)


@given(arrays(np.float64, (3, 7), elements=st.floats(-500, 500)))
def test_softmax_rows_sum_to_one(x):
    y = nx.softmax(x)
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_layer_norm_limit():
    g, b = Parameter(np.ones(2)), Parameter(np.zeros(2))
    np.testing.assert_allclose(nx.layer_norm(np.array([[1.0, 3.0]]), g, b, eps=0.0), [[-1.0, 1.0]])
    np.testing.assert_allclose(nx.layer_norm(np.array([[1.0, 3.0]]), g, b), [[-1.0, 1.0]], atol=1e-5)


def test_cross_entropy_example():
    ce = nx.cross_entropy(np.array([[0.0, math.log(3.0)]]), [1])
    assert ce == pytest.approx(-math.log(0.75), abs=1e-15)


@pytest.mark.parametrize("V", [2, 64, 65, 128])
def test_uniform_cross_entropy_is_log_vocab(V):
    assert abs(nx.cross_entropy(np.zeros((4, V)), [0, 1, V - 1, V // 2]) - math.log(V)) <= 1e-12


def test_cross_entropy_mask_and_range():
    logits = np.random.default_rng(0).normal(size=(3, 5))
    full = nx.cross_entropy(logits[[0, 2]], [1, 4])
    assert nx.cross_entropy(logits, [1, 0, 4], mask=[True, False, True]) == pytest.approx(full, abs=1e-15)
    with pytest.raises(IndexError):
        nx.cross_entropy(logits, [1, 5, 0])


def test_attention_example():
    out = nx.scaled_dot_attention([[1.0, 0.0]], [[0.0, 2.0]], [[0.0, 2.0]])
    np.testing.assert_array_equal(out, [[0.0, 2.0]])


def test_attention_uniform_when_keys_equal():
    rng = np.random.default_rng(3)
    q = rng.normal(size=(2, 4))
    k = np.ones((3, 4))
    v = rng.normal(size=(3, 4))
    np.testing.assert_allclose(nx.scaled_dot_attention(q, k, v), np.tile(v.mean(0), (2, 1)), atol=1e-14)


def test_sigmoid_extremes_do_not_overflow():
    y = nx.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(y, [0.0, 0.5, 1.0])


@given(arrays(np.float64, 6, elements=finite))
@settings(max_examples=50)
def test_sigmoid_matches_reference(x):
    np.testing.assert_allclose(nx.sigmoid(x), [1.0 / (1.0 + math.exp(-v)) for v in x], rtol=1e-14)


def test_embedding_rejects_out_of_range():
    with pytest.raises(IndexError):
        nx.embed(Parameter(np.zeros((4, 2))), [0, 4])


def test_finite_diff_check_on_square_sum():
    theta = Parameter(np.random.default_rng(1).normal(size=(3, 4)))

    def f():
        theta.grad += 2.0 * theta.value
        return float((theta.value ** 2).sum())

    rep = nx.finite_diff_check(f, [theta])
    assert rep.passed and rep.checked == 12
    assert rep.max_error < 1e-8


def test_finite_diff_check_catches_wrong_gradient():
    theta = Parameter(np.ones(3))

    def f():
        theta.grad += 3.0 * theta.value
        return float((theta.value ** 2).sum())

    assert not nx.finite_diff_check(f, [theta]).passed


def test_finite_diff_check_rejects_nondeterminism():
    theta = Parameter(np.ones(2))
    calls = iter(range(100))

    def f():
        return float(next(calls))

    with pytest.raises(DeterminismError):
        nx.finite_diff_check(f, [theta])


def test_make_rng_is_keyed():
    a = nx.make_rng(5, 1, 2).normal(size=4)
    np.testing.assert_array_equal(a, nx.make_rng(5, 1, 2).normal(size=4))
    assert not np.array_equal(a, nx.make_rng(5, 2, 1).normal(size=4))


@pytest.mark.parametrize("fault", nx.FAULTABLE)
def test_injected_fault_is_detected(fault):
    check = GRADIENT_CHECKS[fault]
    assert check(0).passed
    with nx.inject_fault(fault):
        assert not check(0).passed
    assert check(0).passed


def test_unknown_fault_name():
    with pytest.raises(ValueError):
        with nx.inject_fault("nope"):
            pass
