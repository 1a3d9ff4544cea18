import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from biotprec.sparse import (
    BlockOperator,
    CsrMatrix,
    ShapeError,
    block_apply,
    read_matrix_market,
    spmv,
    transpose_apply,
    write_matrix_market,
)

LAP3 = CsrMatrix.from_dense([[2, -1, 0], [-1, 2, -1], [0, -1, 2]])


def test_spmv_examples():
    np.testing.assert_array_equal(spmv(CsrMatrix.identity(3), [1, 2, 3]), [1, 2, 3])
    np.testing.assert_array_equal(spmv(CsrMatrix.from_dense([[2, 0], [0, 3]]), [1, 1]), [2, 3])
    np.testing.assert_array_equal(spmv(LAP3, [1, 1, 1]), [1, 0, 1])


def test_transpose_apply_examples():
    np.testing.assert_array_equal(transpose_apply(CsrMatrix.from_dense([[0, 1], [0, 0]]), [1, 0]), [0, 1])
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(transpose_apply(LAP3, x), spmv(LAP3, x))


def test_shape_errors():
    with pytest.raises(ShapeError):
        spmv(LAP3, np.ones(2))
    with pytest.raises(ShapeError):
        transpose_apply(CsrMatrix.from_dense(np.ones((2, 3))), np.ones(3))


def test_from_coo_sums_duplicates():
    a = CsrMatrix.from_coo([0, 0, 1], [1, 1, 0], [1.0, 2.0, 5.0], (2, 2))
    assert a.nnz == 2
    np.testing.assert_array_equal(a.toarray(), [[0, 3], [5, 0]])
    assert list(a.row_ptr) == [0, 1, 2]


@settings(max_examples=40, deadline=None)
@given(
    a=arrays(np.float64, (5, 3), elements=st.floats(-10, 10)),
    u=arrays(np.float64, 3, elements=st.floats(-10, 10)),
    v=arrays(np.float64, 5, elements=st.floats(-10, 10)),
)
def test_adjoint_identity(a, u, v):
    a[np.abs(a) < 5] = 0.0  # make it sparse
    A = CsrMatrix.from_dense(a)
    lhs = spmv(A, u) @ v
    rhs = u @ transpose_apply(A, v)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)
    np.testing.assert_allclose(spmv(A, u), a @ u, rtol=1e-13, atol=1e-12)


def test_spmv_deterministic():
    rng = np.random.default_rng(1)
    A = CsrMatrix(sps.random(50, 50, density=0.2, random_state=2))
    x = rng.standard_normal(50)
    assert np.array_equal(spmv(A, x), spmv(A, x))


def _small_block(alpha=1.0):
    rng = np.random.default_rng(0)
    Au = rng.standard_normal((4, 4))
    Au = CsrMatrix.from_dense(Au @ Au.T + 4 * np.eye(4))
    B = CsrMatrix.from_dense(rng.standard_normal((2, 4)))
    C = CsrMatrix.from_dense(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    blocks = {(0, 0): [(1.0, Au, False)], (0, 1): [(alpha, B, True)],
              (1, 0): [(alpha, B, False)], (1, 1): [(-0.5, C, False)]}
    return BlockOperator((4, 2), blocks), Au, B, C


def test_block_apply_matches_dense():
    op, Au, B, C = _small_block(0.7)
    dense = np.block([[Au.toarray(), 0.7 * B.toarray().T], [0.7 * B.toarray(), -0.5 * C.toarray()]])
    x = np.random.default_rng(3).standard_normal(6)
    np.testing.assert_allclose(block_apply(op, x), dense @ x, rtol=1e-13)
    np.testing.assert_allclose(op.toarray(), dense, rtol=1e-15)
    np.testing.assert_allclose(op.negated().apply(x)[4:], -(dense @ x)[4:], rtol=1e-13)


def test_block_apply_zero_and_decoupled():
    op, Au, _, _ = _small_block(0.0)
    np.testing.assert_array_equal(block_apply(op, np.zeros(6)), np.zeros(6))
    u = np.arange(4.0)
    y = block_apply(op, np.concatenate([u, np.zeros(2)]))
    np.testing.assert_allclose(y[:4], Au.toarray() @ u)
    np.testing.assert_array_equal(y[4:], 0.0)


def test_block_operator_symmetric():
    op, *_ = _small_block()
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((2, 6))
    assert op(x) @ y == pytest.approx(x @ op(y), rel=1e-12)


def test_block_shape_errors():
    op, Au, B, _ = _small_block()
    with pytest.raises(ShapeError):
        op.apply(np.ones(5))
    with pytest.raises(ShapeError):
        BlockOperator((4, 2), {(0, 1): [(1.0, B, False)]})


def test_matrix_market_roundtrip(tmp_path):
    A = CsrMatrix(sps.random(30, 20, density=0.1, random_state=4) * np.pi)
    write_matrix_market(A, tmp_path / "a.mtx")
    back = read_matrix_market(tmp_path / "a.mtx")
    assert back.shape == A.shape
    np.testing.assert_array_equal(back.toarray(), A.toarray())
