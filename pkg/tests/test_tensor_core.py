import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tansens.tensor_core import (DTYPE, as_matrix, euclidean_norm, frobenius_norm, gaussian_vector, make_rng,
                                 matmul, spawn)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_matmul_hand_example():
    out = matmul([[1, 2], [3, 4]], [[5], [6]])
    assert out.tolist() == [[17.0], [39.0]]
    assert out.dtype == DTYPE


def test_matmul_identity_and_zero():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), A), A)
    assert np.array_equal(matmul(A, np.zeros((2, 2))), np.zeros((2, 2)))


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        matmul(np.ones(3), np.ones((3, 1)))


def test_as_matrix_rejects_nonfinite():
    assert as_matrix([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(ValueError):
        as_matrix(np.ones((2, 2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_associative(n, k, l, m, seed):
    r = make_rng(seed)
    A, B, C = r.standard_normal((n, k)), r.standard_normal((k, l)), r.standard_normal((l, m))
    left = matmul(matmul(A, B), C)
    right = matmul(A, matmul(B, C))
    assert np.linalg.norm(left - right) <= 1e-10 * max(np.linalg.norm(left), 1e-300)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite))
def test_frobenius_equals_row_sums(A):
    rows = sum(euclidean_norm(r) ** 2 for r in A)
    f2 = frobenius_norm(A) ** 2
    assert abs(f2 - rows) <= 1e-12 * max(rows, 1e-300)


def test_norm_examples():
    assert frobenius_norm(np.zeros((3, 4))) == 0.0
    assert frobenius_norm(np.eye(5)) == pytest.approx(np.sqrt(5), rel=1e-15)
    assert frobenius_norm([[3, 4]]) == 5.0


def test_gaussian_degenerate_and_errors():
    assert np.array_equal(gaussian_vector(make_rng(1), 3, 0.0, 0.0), np.zeros(3))
    with pytest.raises(ValueError):
        gaussian_vector(make_rng(1), 3, 0.0, -1.0)


def test_gaussian_seeded_reproducible():
    a = gaussian_vector(make_rng(7), 2)
    b = gaussian_vector(make_rng(7), 2)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gaussian_vector(make_rng(8), 2))


def test_gaussian_moments():
    z = gaussian_vector(make_rng(3), 100_000)
    assert abs(z.mean()) < 0.02
    assert 0.98 <= z.var() <= 1.02


def test_stream_is_philox_and_pinned():
    # pinned values guard against a silent generator change
    r = make_rng(0)
    assert type(r.bit_generator).__name__ == "Philox"
    first = make_rng(0).standard_normal(3)
    assert first.tolist() == [-0.2059740286292238, -0.12884495093462758, -0.28978987549091256]


def test_spawn_independent_children():
    kids = spawn(make_rng(5), 3)
    draws = [k.standard_normal(4) for k in kids]
    assert not np.array_equal(draws[0], draws[1])
    again = [k.standard_normal(4) for k in spawn(make_rng(5), 3)]
    assert all(np.array_equal(a, b) for a, b in zip(draws, again))


def test_make_rng_passthrough():
    r = make_rng(1)
    assert make_rng(r) is r
