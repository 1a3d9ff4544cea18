import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st

from biotprec.assembly import PhysicalParams, assemble_biot_system
from biotprec.krylov import (
    DefinitenessError,
    SolveConfig,
    as_operator,
    fgmres,
    gmres_left,
    pcg,
    pminres,
    richardson,
    write_history_csv,
)
from biotprec.mesh import footing_mesh
from biotprec.precond import build_preconditioner, preset
from biotprec.sparse import CsrMatrix


def _spd(n, seed, cond=10.0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1, cond, n)) @ Q.T


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolveConfig(maxit=0)


@pytest.mark.parametrize("solver", [pminres, fgmres, gmres_left, pcg])
def test_identity_one_iteration(solver):
    b = np.array([1.0, -2.0, 3.0])
    x, rep = solver(np.eye(3), None, b, SolveConfig(1e-12))
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(x, b)


def test_two_distinct_eigenvalues():
    b = np.array([1.0, 1.0])
    for solver in (pminres, pcg, fgmres):
        x, rep = solver(np.diag([1.0, 2.0]), None, b, SolveConfig(1e-12))
        assert rep.iterations <= 2
        np.testing.assert_allclose(x, [1.0, 0.5], rtol=1e-12)
    _, rep = pcg(np.diag([1.0, 4.0]), None, b, SolveConfig(1e-12))
    assert rep.iterations <= 2


def test_exact_preconditioner_one_step():
    L = np.array([[1.0, 0.0], [1.0, 1.0]])
    _, rep = fgmres(L, np.linalg.inv(L), np.array([1.0, 2.0]), SolveConfig(1e-12))
    assert rep.iterations == 1
    A = _spd(6, 0)
    _, rep = gmres_left(A, np.linalg.inv(A), np.ones(6), SolveConfig(1e-12))
    assert rep.iterations == 1


def test_minres_rejects_indefinite_preconditioner():
    with pytest.raises(DefinitenessError):
        pminres(np.eye(2), -np.eye(2), np.ones(2))


def test_pcg_rejects_indefinite_operator():
    with pytest.raises(DefinitenessError):
        pcg(np.diag([1.0, -1.0, 2.0]), None, np.ones(3))


def test_maxit_reported_unconverged():
    A = _spd(40, 1, cond=1e4)
    for solver in (pminres, fgmres, pcg):
        _, rep = solver(A, None, np.ones(40), SolveConfig(1e-12, maxit=3))
        assert not rep.converged and rep.iterations == 3


def test_zero_rhs():
    for solver in (pminres, fgmres, gmres_left, pcg, richardson):
        x, rep = solver(np.eye(3), None, np.zeros(3))
        assert rep.converged and not x.any()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 30))
def test_solvers_agree_on_spd(seed, n):
    A = _spd(n, seed, cond=100.0)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    ref = np.linalg.solve(A, b)
    cfg = SolveConfig(1e-10, maxit=4 * n)
    for solver in (pminres, fgmres, gmres_left, pcg):
        x, rep = solver(A, None, b, cfg)
        assert rep.converged
        np.testing.assert_allclose(x, ref, rtol=1e-6, atol=1e-8 * np.abs(ref).max())
        assert rep.true_residual <= 10 * cfg.tol


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_minres_residuals_monotone_on_indefinite(seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
    A = Q @ np.diag(np.concatenate([-np.geomspace(1, 5, 5), np.geomspace(1, 20, 7)])) @ Q.T
    b = rng.standard_normal(12)
    x, rep = pminres(A, None, b, SolveConfig(1e-10, 50))
    assert rep.converged
    assert np.all(np.diff(rep.residuals) <= 1e-12)
    np.testing.assert_allclose(A @ x, b, atol=1e-8 * np.linalg.norm(b))


def test_restarted_gmres_converges():
    rng = np.random.default_rng(7)
    A = np.eye(60) + 0.3 * rng.standard_normal((60, 60)) / np.sqrt(60)
    b = rng.standard_normal(60)
    x, rep = fgmres(A, None, b, SolveConfig(1e-10, 300, restart=5))
    assert rep.converged
    np.testing.assert_allclose(A @ x, b, atol=1e-8)


def test_flexible_preconditioner():
    A = _spd(30, 3, cond=1e3)
    b = np.ones(30)
    calls = []

    def varying(r):
        calls.append(1)
        # a different Jacobi scaling on every call
        return r / np.diag(A) * (1.0 + 0.1 * (len(calls) % 2))

    x, rep = fgmres(A, varying, b, SolveConfig(1e-10, 100))
    assert rep.converged
    np.testing.assert_allclose(A @ x, b, atol=1e-8)


def test_weighted_inner_product():
    A = _spd(10, 4)
    W = _spd(10, 5)
    b = np.ones(10)
    x, rep = fgmres(A, None, b, SolveConfig(1e-10), inner=W)
    assert rep.converged
    np.testing.assert_allclose(A @ x, b, atol=1e-8)
    with pytest.raises(DefinitenessError):
        fgmres(A, None, b, inner=-np.eye(10))


def test_richardson_contraction():
    A = np.diag([1.0, 2.0, 3.0])
    x, rep = richardson(A, np.diag([1.0, 0.5, 0.3]), np.ones(3), SolveConfig(1e-10, 200))
    assert rep.converged
    np.testing.assert_allclose(x, [1, 0.5, 1 / 3], rtol=1e-9)


def test_as_operator_variants():
    M = np.array([[2.0, 0.0], [0.0, 3.0]])
    x = np.array([1.0, 1.0])
    for op in (M, sps.csr_matrix(M), CsrMatrix.from_dense(M), lambda v: M @ v):
        np.testing.assert_array_equal(as_operator(op)(x), [2.0, 3.0])
    np.testing.assert_array_equal(as_operator(None)(x), x)


@pytest.mark.parametrize("n", [4, 8, 16])
@pytest.mark.parametrize("name", ["BL", "BU"])
def test_left_right_counts_close(name, n):
    # each side measured in its natural norm: D on the left, D^{-1} on the right
    s = assemble_biot_system(footing_mesh(2, n), PhysicalParams(), 0.01)
    D = sps.block_diag([s.A_u.scipy, s.pressure_block().scipy]).tocsr()
    Dinv = build_preconditioner(s, preset("BD"))
    P = build_preconditioner(s, preset(name))
    op, b = P.system_operator(), P.system_rhs(s.rhs())
    _, right = fgmres(op, P, b, SolveConfig(1e-6), inner=Dinv)
    _, left = gmres_left(op, P, b, SolveConfig(1e-6), inner=D)
    assert right.converged and left.converged
    assert abs(right.iterations - left.iterations) <= 1


def test_unpreconditioned_minres_on_biot():
    s = assemble_biot_system(footing_mesh(2, 4), PhysicalParams(), 0.01)
    x, rep = pminres(s.operator(), None, s.rhs(), SolveConfig(1e-8, 2000))
    assert rep.converged
    assert np.all(np.diff(rep.residuals) <= 1e-12)


def test_history_csv(tmp_path):
    _, rep = pcg(_spd(5, 0), None, np.ones(5), SolveConfig(1e-10))
    write_history_csv(rep, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,relative_residual"
    assert len(lines) == len(rep.residuals) + 1
