import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from bmnet import tensor


def test_zeros_shapes():
    assert tensor.zeros([2, 2]).tolist() == [[0, 0], [0, 0]]
    assert tensor.zeros([1]).tolist() == [0.0]
    z = tensor.zeros([3, 1, 2])
    assert z.shape == (3, 1, 2) and z.sum() == 0.0


def test_zeros_rejects_bad_shapes():
    with pytest.raises(tensor.ShapeError):
        tensor.zeros([])
    with pytest.raises(tensor.ShapeError):
        tensor.zeros([2, 0])


def test_elementwise_examples():
    assert tensor.add(np.array([1.0, 2.0]), np.array([3.0, 4.0])).tolist() == [4.0, 6.0]
    assert tensor.reduce_max(np.array([3.0, -1.0, 7.0])) == 7.0
    assert tensor.ln(np.array([1.0])).tolist() == [0.0]


def test_ln_negative_is_domain_error():
    with pytest.raises(tensor.DomainError):
        tensor.ln(np.array([1.0, -0.5]))


def test_broadcast_leading_axes():
    a = np.ones((2, 3, 4))
    b = np.arange(4.0)
    assert tensor.add(a, b).shape == (2, 3, 4)
    with pytest.raises(tensor.ShapeError):
        tensor.add(np.ones((2, 3)), np.ones((2, 4)))


finite = st.floats(allow_nan=False, allow_infinity=False, width=64, min_value=-1e12, max_value=1e12)
pair_arrays = array_shapes(min_dims=1, max_dims=3, max_side=4).flatmap(
    lambda s: st.tuples(arrays(np.float64, s, elements=finite), arrays(np.float64, s, elements=finite))
)


@settings(max_examples=60)
@given(pair_arrays)
def test_add_mul_commute_bitwise(ab):
    a, b = ab
    assert np.array_equal(tensor.add(a, b), tensor.add(b, a))
    assert np.array_equal(tensor.mul(a, b), tensor.mul(b, a))


@settings(max_examples=60)
@given(array_shapes(min_dims=1, max_dims=2, max_side=4).flatmap(
    lambda s: st.tuples(*([arrays(np.float64, s, elements=finite)] * 3))))
def test_max_associative_bitwise(abc):
    a, b, c = abc
    lhs = tensor.maximum(tensor.maximum(a, b), c)
    rhs = tensor.maximum(a, tensor.maximum(b, c))
    assert np.array_equal(lhs, rhs)


@settings(max_examples=80)
@given(array_shapes(min_dims=1, max_dims=4, max_side=5), st.data())
def test_row_major_round_trip(shape, data):
    idx = tuple(data.draw(st.integers(0, e - 1)) for e in shape)
    off = tensor.flat_index(shape, idx)
    assert tensor.unflatten_index(shape, off) == idx
    t = np.arange(np.prod(shape), dtype=np.float64).reshape(shape)
    assert t[idx] == t.ravel()[off]


def test_flat_index_bounds():
    with pytest.raises(tensor.ShapeError):
        tensor.flat_index((2, 2), (2, 0))
    with pytest.raises(tensor.ShapeError):
        tensor.flat_index((2, 2), (0,))
