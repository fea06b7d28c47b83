import numpy as np
import pytest
import scipy.sparse as sp

from conftest import make_pair
from penfem.assembly import assemble_convection, assemble_stiffness
from penfem.solver import (LinearSolveError, ParameterError, PenalizedSystem,
                           PicardConfig, PicardDivergenceError, linear_solve,
                           nonlinear_solve)


def blocked_boundary_dofs(vspace):
    scalar = vspace.boundary_scalar_dofs()
    return np.concatenate([vspace.component_dofs(scalar, 0),
                           vspace.component_dofs(scalar, 1)])


def test_linear_solve_matches_dense(rng):
    A = sp.random(60, 60, density=0.2, random_state=7, format="csr")
    A = A + sp.eye(60) * 10
    b = rng.standard_normal(60)
    x = linear_solve(A, b)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b),
                               rtol=0, atol=1e-10)


def test_linear_solve_rejects_singular():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(LinearSolveError):
        linear_solve(A, np.ones(2))


def test_parameter_validation():
    vspace, pspace = make_pair("p2p1", 1)
    with pytest.raises(ParameterError, match="eps=0"):
        PenalizedSystem(vspace, pspace, nu=1.0, eps=0.0)
    with pytest.raises(ParameterError, match="penalty"):
        PenalizedSystem(vspace, pspace, nu=1.0, eps=-1e-6)
    with pytest.raises(ParameterError, match="viscosity"):
        PenalizedSystem(vspace, pspace, nu=0.0, eps=1e-6)
    with pytest.raises(ParameterError, match="mass_coeff"):
        PenalizedSystem(vspace, pspace, nu=1.0, eps=1e-6, mass_coeff=-1.0)
    with pytest.raises(ParameterError, match="path"):
        PenalizedSystem(vspace, pspace, nu=1.0, eps=1e-6, path="direct")
    with pytest.raises(ParameterError, match="piecewise-constant"):
        PenalizedSystem(vspace, pspace, nu=1.0, eps=1e-6, path="schur")


def test_unconstrained_stokes_operator_is_singular():
    vspace, pspace = make_pair("crp0", 1)
    system = PenalizedSystem(vspace, pspace, nu=1.0, eps=1e-2)
    with pytest.raises(LinearSolveError):
        system.solve_linearized(None, np.ones(system.ndof_v))


def test_coupled_solve_matches_dense_block_oracle(rng):
    # independent oracle: assemble the block matrix from the public
    # operators and solve densely
    vspace, pspace = make_pair("crp0", 1)
    nu, eps, mass_coeff = 0.7, 1e-3, 2.0
    system = PenalizedSystem(vspace, pspace, nu=nu, eps=eps,
                             mass_coeff=mass_coeff)
    w = rng.standard_normal(system.ndof_v)
    b_u = rng.standard_normal(system.ndof_v)
    U, P = system.solve_linearized(w, b_u)

    N = assemble_convection(vspace, w)
    K = assemble_stiffness(vspace)
    A_uu = (mass_coeff * system.mass + nu * K + N).toarray()
    B = system.divergence.toarray()
    Mq = system.pressure_mass.toarray()
    top = np.hstack([A_uu, -B.T])
    bottom = np.hstack([nu * B, eps * Mq])
    x = np.linalg.solve(np.vstack([top, bottom]),
                        np.concatenate([b_u, np.zeros(system.ndof_p)]))
    np.testing.assert_allclose(U, x[:system.ndof_v], rtol=0, atol=1e-9)
    np.testing.assert_allclose(P, x[system.ndof_v:], rtol=0, atol=1e-9)


def test_schur_path_matches_coupled(rng):
    vspace, pspace = make_pair("crp0", 2)
    bc = blocked_boundary_dofs(vspace)
    results = {}
    for path in ("coupled", "schur"):
        system = PenalizedSystem(vspace, pspace, nu=0.5, eps=1e-4,
                                 mass_coeff=1.0, bc_dofs=bc,
                                 bc_values=np.zeros(len(bc)), path=path)
        rng_local = np.random.default_rng(42)
        b_u = rng_local.standard_normal(system.ndof_v)
        w = rng_local.standard_normal(system.ndof_v) * 0.1
        results[path] = system.solve_linearized(w, b_u)
    np.testing.assert_allclose(results["schur"][0], results["coupled"][0],
                               rtol=0, atol=1e-9)
    np.testing.assert_allclose(results["schur"][1], results["coupled"][1],
                               rtol=0, atol=1e-9)


def test_penalty_residual_vanishes_at_solution(rng):
    vspace, pspace = make_pair("p2p1", 2)
    bc = blocked_boundary_dofs(vspace)
    system = PenalizedSystem(vspace, pspace, nu=1.0, eps=1e-8,
                             mass_coeff=1.0, bc_dofs=bc,
                             bc_values=np.zeros(len(bc)))
    b_u = rng.standard_normal(system.ndof_v)
    U, P = system.solve_linearized(None, b_u)
    assert system.penalty_residual(U, P) < 1e-9 * np.linalg.norm(U)


def test_dirichlet_values_enforced_and_updatable():
    vspace, pspace = make_pair("p2p1", 2)
    bc = blocked_boundary_dofs(vspace)
    values = 0.25 * np.ones(len(bc))
    system = PenalizedSystem(vspace, pspace, nu=1.0, eps=1e-6,
                             mass_coeff=1.0, bc_dofs=bc, bc_values=values)
    U, _ = system.solve_linearized(None, np.zeros(system.ndof_v))
    np.testing.assert_array_equal(U[bc], values)
    system.set_bc_values(2 * values)
    U2, _ = system.solve_linearized(None, np.zeros(system.ndof_v))
    np.testing.assert_array_equal(U2[bc], 2 * values)
    with pytest.raises(ParameterError, match="bc_values"):
        system.set_bc_values(np.ones(3))


def test_picard_converges_and_reports(rng):
    vspace, pspace = make_pair("p2p1", 2)
    bc = blocked_boundary_dofs(vspace)
    system = PenalizedSystem(vspace, pspace, nu=1.0, eps=1e-6,
                             mass_coeff=10.0, bc_dofs=bc,
                             bc_values=np.zeros(len(bc)))
    b_u = rng.standard_normal(system.ndof_v) * 0.1
    U, P, stats = nonlinear_solve(system, b_u, seed=np.zeros(system.ndof_v))
    assert stats.converged
    assert stats.increments[-1] < PicardConfig().tol
    # solution is a fixed point: one more linearized solve changes nothing
    U2, P2 = system.solve_linearized(U, b_u)
    assert np.linalg.norm(U2 - U) <= 1e-9 * np.linalg.norm(U)


def test_picard_exhaustion_raises():
    vspace, pspace = make_pair("p2p1", 1)
    bc = blocked_boundary_dofs(vspace)
    system = PenalizedSystem(vspace, pspace, nu=1e-3, eps=1e-6,
                             mass_coeff=1.0, bc_dofs=bc,
                             bc_values=np.zeros(len(bc)))
    rng = np.random.default_rng(5)
    b_u = rng.standard_normal(system.ndof_v)
    with pytest.raises(PicardDivergenceError, match="iteration"):
        nonlinear_solve(system, b_u, seed=np.zeros(system.ndof_v),
                        config=PicardConfig(tol=1e-16, max_iter=2))


def test_picard_config_validation():
    with pytest.raises(ParameterError):
        PicardConfig(tol=-1.0)
    with pytest.raises(ParameterError):
        PicardConfig(max_iter=0)
