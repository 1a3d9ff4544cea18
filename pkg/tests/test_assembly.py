import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from biotprec.acceptance import rigid_modes
from biotprec.assembly import (
    AssemblyError,
    BoundaryConfig,
    ConfigurationError,
    LameParams,
    ParameterError,
    PhysicalParams,
    assemble_biot_system,
    assemble_divdiv,
    assemble_divergence,
    assemble_elasticity,
    assemble_pressure_matrices,
    assemble_strain_gram,
    assemble_vector_h1,
    body_force_vector,
    lame_from_engineering,
    source_vector,
    step_rhs,
    traction_vector,
)
from biotprec.mesh import BoundaryTag, build_box_mesh, footing_mesh, mesh_from_arrays
from biotprec.sparse import read_matrix_market

TRI = mesh_from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


def test_lame_formula_modes():
    lame = lame_from_engineering(PhysicalParams(E=3e4, nu=0.2), 3)
    assert lame.lam == pytest.approx(25000 / 3, rel=1e-14)
    assert lame.mu == pytest.approx(3e4 / 1.4, rel=1e-14)


def test_lame_nu_zero_modes():
    p = PhysicalParams(E=1.0, nu=0.0)
    alt = lame_from_engineering(p, 2, "paper")
    std = lame_from_engineering(p, 2, "standard")
    assert alt.lam == 0 and std.lam == 0
    assert alt.mu == 1.0 and std.mu == 0.5


def test_zeta_definition():
    assert LameParams(0.0, 1.0, 2).zeta == 1.0
    assert LameParams(3.0, 1.5, 3).zeta_sq == 4.0


def test_incompressible_limit_rejected():
    with pytest.raises(ParameterError):
        lame_from_engineering(PhysicalParams(nu=0.5), 2)
    with pytest.raises(ParameterError):
        lame_from_engineering(PhysicalParams(), 2, "other")


def test_element_pressure_matrices():
    _, L, M = assemble_pressure_matrices(TRI, 1.0)
    np.testing.assert_allclose(L.toarray(), 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-14)
    np.testing.assert_allclose(M.toarray(), np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24, atol=1e-14)


def test_permeability_scales_laplacian():
    A, L, _ = assemble_pressure_matrices(TRI, 1e-3)
    np.testing.assert_allclose(A.toarray(), 1e-3 * L.toarray(), rtol=1e-15)


@pytest.mark.parametrize("dim", [2, 3])
def test_pressure_partition_of_unity(dim):
    m = build_box_mesh((0,) * dim, (2.0,) * dim, 3, dim)
    _, L, M = assemble_pressure_matrices(m, 1.0)
    np.testing.assert_allclose(L @ np.ones(m.num_vertices), 0.0, atol=1e-13)
    assert M.toarray().sum() == pytest.approx(2.0 ** dim, rel=1e-13)


def _field(mesh, f):
    return np.asarray([f(*x) for x in mesh.vertices]).ravel()


def test_elasticity_hand_values():
    A = assemble_elasticity(TRI, LameParams(0.0, 1.0, 2))
    u = _field(TRI, lambda x, y: (x, 0.0))
    assert u @ (A @ u) == pytest.approx(1.0, rel=1e-14)
    A = assemble_elasticity(TRI, LameParams(1.0, 1e-300, 2))
    u = _field(TRI, lambda x, y: (x, y))
    assert u @ (A @ u) == pytest.approx(2.0, rel=1e-14)


def test_divergence_hand_value():
    B = assemble_divergence(TRI)
    u = _field(TRI, lambda x, y: (x, y))
    # (div u, 1) = 2 * area, B carries the minus sign
    assert np.ones(3) @ (B @ u) == pytest.approx(-1.0, rel=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
def test_rigid_modes_in_kernels(dim):
    m = footing_mesh(dim, 2)
    A = assemble_elasticity(m, lame_from_engineering(PhysicalParams(), dim))
    B = assemble_divergence(m)
    R = rigid_modes(m.vertices)
    assert np.abs(A.scipy @ R).max() <= 1e-10 * np.abs(A.scipy).max() * np.abs(R).max()
    assert np.abs(B.scipy @ R).max() <= 1e-10 * np.abs(B.scipy).max() * np.abs(R).max()
    # translations in the kernel of the strain and divergence forms as well
    t = R[:, 0]
    assert np.abs(assemble_strain_gram(m) @ t).max() < 1e-12
    assert np.abs(assemble_divdiv(m) @ t).max() < 1e-12


def test_vector_h1_is_componentwise_gram():
    m = build_box_mesh((0, 0), (1, 1), 2)
    H = assemble_vector_h1(m).toarray()
    _, L, M = assemble_pressure_matrices(m, 1.0)
    np.testing.assert_allclose(H[0::2, 0::2], L.toarray() + M.toarray(), atol=1e-14)
    np.testing.assert_allclose(H[0::2, 1::2], 0.0, atol=1e-14)


def test_degenerate_cell_named():
    m = mesh_from_arrays([[0, 0], [1, 0], [0, 1], [2, 0]], [[0, 1, 2], [1, 3, 2]])
    from dataclasses import replace

    flat = replace(m, vertices=np.array([[0, 0], [1, 0], [0, 1], [2.0, -1.0]]))
    with pytest.raises(AssemblyError, match="cell 1"):
        assemble_elasticity(flat, LameParams(1.0, 1.0, 2))


def test_traction_total_load():
    for dim, total in ((3, -102.4), (2, -3.2)):
        m = footing_mesh(dim, 4)
        f = traction_vector(m, 0.1)
        assert f[dim - 1::dim].sum() == pytest.approx(total, rel=1e-13)
        assert np.all(f[: dim - 1] == 0)
        s = assemble_biot_system(m, PhysicalParams(), 0.01)
        # loaded vertices are never on the fixed base
        assert s.rhs_u.sum() == pytest.approx(total, rel=1e-13)


def test_body_force_and_source():
    m = build_box_mesh((0, 0), (2, 3), 3)
    g = body_force_vector(m, (0.0, -9.81))
    assert g[1::2].sum() == pytest.approx(-9.81 * 6, rel=1e-13)
    assert source_vector(m, 2.0).sum() == pytest.approx(12.0, rel=1e-13)


def test_eta_examples():
    m = footing_mesh(2, 2)
    params = PhysicalParams(E=1.0, nu=0.0)
    s = assemble_biot_system(m, params, 0.1, formula_mode="standard")
    # lambda = 0, mu = 1/2: zeta^2 = mu = 1/2 in 2D
    assert s.eta == pytest.approx(0.25 / 0.5)
    sys2 = assemble_biot_system(m, PhysicalParams(E=1.0, nu=0.0, alpha=2.0), 0.1, formula_mode="standard")
    assert sys2.eta == pytest.approx(4 * s.eta)


def test_eta_unit_example():
    lame = LameParams(0.0, 1.0, 2)
    assert 0.25 * 1.0 ** 2 / lame.zeta_sq == 0.25


def test_footing_3d_eta_and_stab():
    s = assemble_biot_system(footing_mesh(3, 4), PhysicalParams(), 0.01)
    lame = lame_from_engineering(PhysicalParams(), 3)
    assert s.eta == pytest.approx(0.25 / (lame.lam + 2 * lame.mu / 3), rel=1e-14)
    assert s.stab == pytest.approx(s.eta * 768.0, rel=1e-14)


def test_system_errors():
    untagged = build_box_mesh((0, 0), (1, 1), 2)
    with pytest.raises(ConfigurationError):
        assemble_biot_system(untagged, PhysicalParams(), 0.1)
    m = footing_mesh(2, 2)
    with pytest.raises(ParameterError):
        assemble_biot_system(m, PhysicalParams(), 0.0)
    with pytest.raises(ParameterError):
        assemble_biot_system(m, PhysicalParams(), 0.1, delta=0.0)
    with pytest.raises(ParameterError):
        PhysicalParams(K=0.0)


@pytest.mark.parametrize("dim,n", [(2, 4), (3, 2)])
def test_block_structure(dim, n):
    s = assemble_biot_system(footing_mesh(dim, n), PhysicalParams(), 0.01)
    A = s.operator().toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    assert s.B.shape == (s.n_p, s.n_u)
    assert np.linalg.eigvalsh(s.A_u.toarray()).min() > 0
    assert np.linalg.eigvalsh(s.M_p.toarray()).min() > 0
    assert np.linalg.eigvalsh(s.L_p.toarray()).min() > 0  # drained boundary pins the constant
    S = s.pressure_block().toarray()
    expected = s.tau * s.A_p.toarray() + s.stab * s.L_p.toarray() + s.alpha ** 2 / s.zeta_sq * s.M_p.toarray()
    np.testing.assert_allclose(S, expected, rtol=1e-14, atol=1e-300)


def test_two_cell_symmetry():
    m = footing_mesh(2, 1)
    bc = BoundaryConfig(fixed=(BoundaryTag.LATERAL,), drained=(BoundaryTag.BASE,))
    s = assemble_biot_system(m, PhysicalParams(), 0.1, bc=bc)
    A = s.operator().toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()


def test_homogeneous_problem_has_zero_solution():
    m = footing_mesh(2, 4)
    s = assemble_biot_system(m, PhysicalParams(), 0.01, bc=BoundaryConfig(traction=0.0))
    b = step_rhs(s, np.zeros(s.n_u), np.zeros(s.n_p))
    assert not b.any()
    x = spla.spsolve(s.operator().to_scipy().tocsc(), b)
    assert not x.any()


def test_step_rhs_pure_traction_and_tau_independence():
    m = footing_mesh(2, 4)
    s = assemble_biot_system(m, PhysicalParams(), 0.01)
    b = step_rhs(s, np.zeros(s.n_u), np.zeros(s.n_p))
    np.testing.assert_array_equal(b[: s.n_u], s.rhs_u)
    assert not b[s.n_u:].any()
    rng = np.random.default_rng(0)
    u, p = rng.standard_normal(s.n_u), rng.standard_normal(s.n_p)
    b1 = step_rhs(s, u, p)
    b2 = step_rhs(s.with_tau(0.02), u, p)
    np.testing.assert_array_equal(b1[: s.n_u], b2[: s.n_u])
    np.testing.assert_allclose(step_rhs(s, u, p, negated=True)[s.n_u:], -b1[s.n_u:])
    with pytest.raises(ValueError):
        step_rhs(s, u[:-1], p)


def test_steady_state_is_fixed_point():
    s = assemble_biot_system(footing_mesh(2, 4), PhysicalParams(), 0.01)
    solve = spla.factorized(s.operator().to_scipy().tocsc())
    # the steady state carries no pore pressure
    u_inf = spla.spsolve(s.A_u.scipy.tocsc(), s.rhs_u)
    x = solve(step_rhs(s, u_inf, np.zeros(s.n_p)))
    np.testing.assert_allclose(x[: s.n_u], u_inf, rtol=1e-10, atol=1e-14)
    assert np.abs(x[s.n_u:]).max() <= 1e-10 * np.abs(u_inf).max() * s.zeta_sq


@settings(max_examples=10, deadline=None)
@given(nu=st.sampled_from([0.0, 0.2, 0.45, 0.499]), seed=st.integers(0, 1000), dim=st.sampled_from([2, 3]))
def test_korn_and_divergence_bounds(nu, seed, dim):
    m = footing_mesh(dim, 2)
    lame = lame_from_engineering(PhysicalParams(nu=nu), dim)
    A = assemble_elasticity(m, lame).scipy
    E = assemble_strain_gram(m).scipy
    D = assemble_divdiv(m).scipy
    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    a, e, d = v @ A @ v, v @ E @ v, v @ D @ v
    assert 2 * lame.mu * e <= a * (1 + 1e-12)
    assert a <= (2 * lame.mu + dim * lame.lam) * e * (1 + 1e-12)
    assert d <= dim * e * (1 + 1e-12)
    assert lame.zeta_sq * d <= a * (1 + 1e-12)


def test_export(tmp_path):
    s = assemble_biot_system(footing_mesh(2, 2), PhysicalParams(), 0.01)
    s.export(tmp_path)
    B = read_matrix_market(tmp_path / "B.mtx")
    np.testing.assert_array_equal(B.toarray(), s.B.toarray())
    lines = (tmp_path / "dofmap.txt").read_text().splitlines()
    assert len(lines) == 1 + s.n_u + s.n_p


def test_expand_roundtrip():
    s = assemble_biot_system(footing_mesh(2, 3), PhysicalParams(), 0.01)
    u = np.arange(s.n_u, dtype=float) + 1
    U = s.expand_u(u)
    assert not U[s.dirichlet_u].any()
    np.testing.assert_array_equal(U[s.free_u], u)
