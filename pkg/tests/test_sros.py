import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bintreegp import sros
from oracle import cell_constant_values, random_nested_partitions


def test_lin_transform_all_ones_rank_one():
    P = np.array([[1], [1], [1]])
    U = np.ones((3, 1))
    x = np.array([1.0, 2.0, 3.0])
    y = sros.lin_transform(P, P, U, U, x)
    assert np.array_equal(y, [6.0, 6.0, 6.0])


def test_lin_transform_block_diagonal():
    P = np.array([[1], [2], [1]])
    U = np.ones((3, 1))
    x = np.array([1.0, 2.0, 3.0])
    y = sros.lin_transform(P, P, U, U, x)
    assert np.array_equal(y, [4.0, 2.0, 4.0])


def test_lin_transform_zero_input():
    rng = np.random.default_rng(0)
    P = random_nested_partitions(rng, 8, 3)
    U = rng.normal(size=(8, 3))
    y = sros.lin_transform(P, P, U, U, np.zeros(8))
    assert np.array_equal(y, np.zeros(8))


def test_lin_transform_rectangular_matches_dense():
    rng = np.random.default_rng(1)
    for _ in range(10):
        joint = random_nested_partitions(rng, 16, 3)
        P, Pp = joint[:8], joint[8:]
        U = rng.normal(size=(8, 3))
        Up = rng.normal(size=(8, 3))
        x = rng.normal(size=8)
        got = sros.lin_transform(P, Pp, U, Up, x)
        want = sros.to_dense(P, Pp, U, Up) @ x
        assert np.allclose(got, want, rtol=1e-10, atol=1e-12)


def test_lin_transform_shape_errors():
    P = np.array([[1], [2]])
    U = np.ones((2, 1))
    with pytest.raises(ValueError):
        sros.lin_transform(P, P, U, U, np.zeros(3))
    with pytest.raises(ValueError):
        sros.lin_transform(P, P, np.ones((3, 1)), U, np.zeros(2))


def test_invert_zero_c_is_identity():
    rng = np.random.default_rng(2)
    P = random_nested_partitions(rng, 10, 4)
    C = np.zeros((10, 4))
    U = rng.normal(size=(10, 4))
    res = sros.invert(P, C, U)
    assert np.array_equal(res.Cp, np.zeros((10, 4)))
    assert res.logdet == 0.0


def test_invert_scalar_sherman_morrison():
    P = np.array([[1]])
    res = sros.invert(P, np.array([[1.0]]), np.array([[1.0]]))
    assert res.Cp[0, 0] == pytest.approx(-0.5, abs=1e-15)
    assert res.logdet == pytest.approx(np.log(2.0), abs=1e-15)


def test_invert_matches_dense_inverse():
    rng = np.random.default_rng(3)
    P = random_nested_partitions(rng, 6, 3)
    C = cell_constant_values(rng, P)
    U = rng.normal(size=(6, 3))
    res = sros.invert(P, C, U)
    A = np.eye(6) + sros.to_dense_symmetric(P, C, U)
    Ainv = np.eye(6) + sros.to_dense_symmetric(P, res.Cp, res.Up)
    assert np.max(np.abs(Ainv - np.linalg.inv(A))) < 1e-8
    _, want_logdet = np.linalg.slogdet(A)
    assert abs(res.logdet - want_logdet) < 1e-10


def test_invert_rejects_non_nested():
    P = np.array([[1, 1], [1, 2], [2, 2]])  # column 2 merges across cells
    C = np.ones((3, 2))
    U = np.ones((3, 2))
    with pytest.raises(sros.NotNestedError):
        sros.invert(P, C, U)


def test_invert_rejects_non_cell_constant_c():
    P = np.array([[1], [1]])
    C = np.array([[1.0], [2.0]])
    U = np.ones((2, 1))
    with pytest.raises(sros.CellConstantError):
        sros.invert(P, C, U)


def test_invert_indefinite_pivot_raises():
    P = np.array([[1]])
    with pytest.raises(sros.IndefiniteOperatorError) as info:
        sros.invert(P, np.array([[-2.0]]), np.array([[1.0]]))
    assert info.value.column == 0
    assert info.value.pivot == pytest.approx(-1.0)


def test_invert_shared_u_q1_bit_identical_to_invert():
    rng = np.random.default_rng(4)
    P = random_nested_partitions(rng, 12, 1)
    C = cell_constant_values(rng, P)
    u = rng.normal(size=12)
    a = sros.invert(P, C, np.tile(u[:, None], (1, 1)))
    b = sros.invert_shared_u(P, C, u)
    assert np.array_equal(a.Cp, b.Cp)
    assert np.array_equal(a.Up, b.Up)
    assert a.logdet == b.logdet


def test_invert_shared_u_matches_general_path():
    rng = np.random.default_rng(5)
    P = random_nested_partitions(rng, 8, 4)
    lam = 0.1
    w = rng.dirichlet(np.ones(4))
    C = np.tile(w / lam, (8, 1))
    u = np.ones(8)
    a = sros.invert(P, C, np.tile(u[:, None], (1, 4)))
    b = sros.invert_shared_u(P, C, u)
    assert np.max(np.abs(a.Cp - b.Cp)) <= 1e-12
    assert np.max(np.abs(a.Up - b.Up)) <= 1e-12
    assert abs(a.logdet - b.logdet) <= 1e-12


def test_invert_shared_u_dense_residual():
    rng = np.random.default_rng(6)
    P = random_nested_partitions(rng, 6, 3)
    C = cell_constant_values(rng, P)
    u = rng.normal(size=6)
    res = sros.invert_shared_u(P, C, u)
    U = np.tile(u[:, None], (1, 3))
    A = np.eye(6) + sros.to_dense_symmetric(P, C, U)
    Ainv = np.eye(6) + sros.to_dense_symmetric(P, res.Cp, res.Up)
    assert np.max(np.abs(Ainv @ A - np.eye(6))) < 1e-8


def test_trace_part_two_cells_by_hand():
    p = np.array([1, 1, 2])
    c = np.array([2.0, 2.0, 3.0])
    u = np.ones(3)
    assert sros.trace_part(p, c, u) == pytest.approx(11.0)


def test_trace_part_zero_u():
    p = np.array([1, 2, 2, 3])
    c = np.array([1.0, -4.0, -4.0, 2.0])
    assert sros.trace_part(p, c, np.zeros(4)) == 0.0


def test_trace_part_matches_dense_element_sum():
    rng = np.random.default_rng(7)
    for _ in range(10):
        p = random_nested_partitions(rng, 10, 1)[:, 0]
        c = cell_constant_values(rng, p[:, None], low=-1.0, high=1.0)[:, 0]
        u = rng.normal(size=10)
        dense = sros.to_dense_symmetric(p[:, None], c[:, None], u[:, None])
        assert sros.trace_part(p, c, u) == pytest.approx(dense.sum(),
                                                         abs=1e-12)


def test_to_dense_singleton_cells_are_diagonal():
    P = np.array([[1], [2]])
    U = np.ones((2, 1))
    assert np.array_equal(sros.to_dense(P, P, U, U), np.eye(2))


def test_to_dense_single_cell_is_outer_product():
    P = np.array([[1], [1]])
    U = np.array([[2.0], [3.0]])
    Up = np.array([[5.0], [7.0]])
    assert np.array_equal(
        sros.to_dense(P, P, U, Up), np.outer([2.0, 3.0], [5.0, 7.0])
    )


def test_to_dense_two_cells_block_pattern():
    p = np.array([1, 1, 1, 2, 2])
    U = np.ones((5, 1))
    dense = sros.to_dense(p[:, None], p[:, None], U, U)
    assert np.array_equal(dense[:3, 3:], np.zeros((3, 2)))
    assert np.array_equal(dense[:3, :3], np.ones((3, 3)))
    assert np.array_equal(dense[3:, 3:], np.ones((2, 2)))


def test_to_dense_symmetric_is_exactly_symmetric():
    rng = np.random.default_rng(8)
    P = random_nested_partitions(rng, 12, 3)
    C = cell_constant_values(rng, P).round(1)
    U = rng.integers(-3, 4, size=(12, 3)).astype(np.float64)
    A = sros.to_dense_symmetric(P, C, U)
    assert np.max(np.abs(A - A.T)) == 0.0


def test_refines_examples():
    assert sros.refines([1, 2, 3], [1, 1, 1]) is True
    assert sros.refines([1, 1, 2], [1, 2, 2]) is False


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=5), min_size=1,
                max_size=20))
def test_refines_is_reflexive(ids):
    assert sros.refines(ids, ids) is True


def test_refines_length_mismatch():
    with pytest.raises(ValueError):
        sros.refines([1, 2], [1, 2, 3])


def test_canonicalize_first_occurrence_order():
    assert np.array_equal(sros.canonicalize([7, 3, 7, 9]), [1, 2, 1, 3])
    assert np.array_equal(sros.canonicalize([2, 2, 2]), [1, 1, 1])
