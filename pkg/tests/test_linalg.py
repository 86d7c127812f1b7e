import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cloak.linalg import (
    cond,
    is_lifted,
    lift_affine,
    nullspace,
    numerical_rank,
    observability_matrix,
    reachability_matrix,
    snap_lifted,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_lift_affine_layout():
    L = lift_affine([[1.0, 2.0], [3.0, 4.0]], [5.0, 6.0])
    np.testing.assert_array_equal(L, [[1, 2, 5], [3, 4, 6], [0, 0, 1]])
    assert is_lifted(L)


def test_lift_affine_rectangular():
    L = lift_affine(np.ones((1, 3)), [2.0])
    assert L.shape == (2, 4)
    np.testing.assert_array_equal(L[-1], [0, 0, 0, 1])


def test_snap_lifted_restores_exact_row():
    M = np.eye(3)
    M[-1, 0] = 1e-17
    M[-1, -1] = 1 + 1e-16
    assert not is_lifted(M)
    assert is_lifted(snap_lifted(M))


def test_rank_of_zero_operator_with_scale():
    # roundoff-sized entries count as zero once an absolute scale is given
    Z = 1e-17 * np.random.default_rng(0).standard_normal((6, 4))
    assert numerical_rank(Z) == 4
    assert numerical_rank(Z, scale=1.0) == 0
    assert nullspace(Z, scale=1.0).shape == (4, 4)


@given(arrays(float, (5, 3), elements=finite))
def test_nullspace_is_orthonormal_kernel(M):
    N = nullspace(M)
    assert N.shape[1] == 3 - numerical_rank(M)
    if N.size:
        np.testing.assert_allclose(N.T @ N, np.eye(N.shape[1]), atol=1e-10)
        assert np.max(np.abs(M @ N)) <= 1e-8 * max(1.0, np.abs(M).max())


def test_reachability_and_observability_shapes():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    C = np.array([[1.0, 0.0]])
    R = reachability_matrix(A, B, 1)
    np.testing.assert_array_equal(R, [[0, 1], [1, 0]])
    O = observability_matrix(A, C, 2)
    np.testing.assert_array_equal(O, [[1, 0], [0, 1]])


def test_cond_of_singular_is_inf():
    assert cond(np.zeros((2, 2))) == np.inf
    assert cond(np.eye(3)) == pytest.approx(1.0)
