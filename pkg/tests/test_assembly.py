import numpy as np
import pytest
import scipy.sparse as sp
import sympy
from scipy.integrate import dblquad

from magros.assembly import (CoefficientField, NonEllipticError, apply_dirichlet, assemble_boundary_load,
                             assemble_mass, assemble_robin, assemble_stiffness, dump_coo, l2_error, l2_norm,
                             load_vector, lump, make_lift, project_l2, triangle_rule)
from magros.mesh import Dirichlet, Mesh, Neumann, Robin, build_rect_mesh, tag_boundary
from magros.problems import adr_problem, cellular_velocity, inlet_boundary_rule

LAPLACE = CoefficientField(lambda x, y, t: np.ones_like(x), None, time_dependent=False)


def unit_right_triangle() -> Mesh:
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return Mesh(nodes, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]), 1.0, 1.0, 1, 1,
                float(np.sqrt(2)))


def symbolic_reference_matrices():
    """Exact P1 mass and Laplacian element matrices on the unit right triangle."""
    x, y = sympy.symbols("x y")
    phis = [1 - x - y, x, y]
    integrate = lambda expr: sympy.integrate(sympy.integrate(expr, (y, 0, 1 - x)), (x, 0, 1))  # noqa: E731
    mass = [[integrate(a * b) for b in phis] for a in phis]
    grads = [(sympy.diff(p, x), sympy.diff(p, y)) for p in phis]
    stiff = [[integrate(ga[0] * gb[0] + ga[1] * gb[1]) for gb in grads] for ga in grads]
    return np.array(mass, dtype=float), np.array(stiff, dtype=float)


def test_element_matrices_match_symbolic_integration():
    mass_exact, stiff_exact = symbolic_reference_matrices()
    # the symbolic oracle reproduces the closed forms quoted for the reference element
    np.testing.assert_allclose(mass_exact, (0.5 / 12) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-15)
    np.testing.assert_allclose(stiff_exact, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)
    mesh = unit_right_triangle()
    np.testing.assert_allclose(assemble_mass(mesh).toarray(), mass_exact, atol=1e-15)
    np.testing.assert_allclose(assemble_stiffness(mesh, LAPLACE, 0.0).toarray(), stiff_exact, atol=1e-15)


@pytest.mark.parametrize("nx, ny", [(1, 1), (3, 2), (8, 8)])
def test_mass_partition_of_unity(nx, ny):
    M = assemble_mass(build_rect_mesh(1, 1, nx, ny))
    assert M.sum() == pytest.approx(1.0, abs=1e-14)
    ones = np.ones(M.shape[0])
    assert ones @ M @ ones == pytest.approx(1.0, abs=1e-14)
    assert l2_norm(M, ones) == pytest.approx(1.0, abs=1e-14)
    assert (M - M.T).nnz == 0
    assert np.all(np.linalg.eigvalsh(M.toarray()) > 0)


def test_neumann_laplacian_kernel():
    mesh = build_rect_mesh(1, 1, 5, 4)
    K = assemble_stiffness(mesh, LAPLACE, 0.0)
    np.testing.assert_allclose(K @ np.ones(mesh.n_nodes), 0.0, atol=1e-13)


def test_diffusion_scales_linearly_in_time_coefficient():
    mesh = build_rect_mesh(1, 1, 4, 4)
    K_lap = assemble_stiffness(mesh, LAPLACE, 0.0).toarray()
    coeff = CoefficientField(lambda x, y, t: (1 + np.exp(-t)) * np.ones_like(x))
    for t in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(assemble_stiffness(mesh, coeff, t).toarray(), (1 + np.exp(-t)) * K_lap,
                                   rtol=1e-14, atol=1e-14)


def test_stiffness_symmetry_both_directions():
    mesh = build_rect_mesh(1, 1, 4, 4)
    K_sym = assemble_stiffness(mesh, LAPLACE, 0.0).toarray()
    np.testing.assert_array_equal(K_sym, K_sym.T)
    vel = cellular_velocity()
    adv = CoefficientField(lambda x, y, t: np.ones_like(x), lambda x, y, t: vel(x, y))
    K_adv = assemble_stiffness(mesh, adv, 0.0).toarray()
    assert np.abs(K_adv - K_adv.T).max() > 1e-6


def test_sparsity_within_mesh_adjacency():
    mesh = build_rect_mesh(1, 1, 4, 3)
    vel = cellular_velocity()
    coeff = CoefficientField(lambda x, y, t: np.ones_like(x), lambda x, y, t: vel(x, y))
    K = sp.coo_matrix(assemble_stiffness(mesh, coeff, 0.2))
    adjacency = {(i, i) for i in range(mesh.n_nodes)}
    for tri in mesh.elements:
        adjacency |= {(a, b) for a in tri for b in tri}
    assert set(zip(K.row.tolist(), K.col.tolist())) <= adjacency


def test_galerkin_consistency_constant_advection():
    # affine element and x-constant coefficients: closed forms are exact
    mesh = unit_right_triangle()
    b = np.array([0.3, -0.7])
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    coeff = CoefficientField(lambda x, y, t: np.broadcast_to(Q, x.shape + (2, 2)),
                             lambda x, y, t: np.broadcast_to(b, x.shape + (2,)))
    K = assemble_stiffness(mesh, coeff, 0.0).toarray()
    grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    area = 0.5
    # a(phi_j, phi_i) = area grad_i Q grad_j + (b . grad_j) * area/3
    expected = area * grads @ Q @ grads.T + np.outer(np.ones(3), grads @ b) * area / 3
    np.testing.assert_allclose(K, expected, rtol=0, atol=1e-13)


def test_non_spd_diffusion_rejected():
    mesh = build_rect_mesh(1, 1, 2, 2)
    with pytest.raises(NonEllipticError):
        assemble_stiffness(mesh, CoefficientField(lambda x, y, t: -np.ones_like(x)), 0.0)
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(NonEllipticError):
        assemble_stiffness(mesh, CoefficientField(lambda x, y, t: np.broadcast_to(bad, x.shape + (2, 2))), 0.0)


def test_coercivity_after_shift_on_adr_operator():
    problem = adr_problem(nx=8)
    system = problem.system()
    rng = np.random.default_rng(0)
    for t in (0.0, 0.5, 1.0):
        K_ff = system.lift.block(system.stiffness(t))
        for _ in range(100):
            v = rng.standard_normal(system.dim)
            assert v @ (K_ff @ v) >= 0


def test_gaarding_shift_adds_mass():
    mesh = build_rect_mesh(1, 1, 3, 3)
    shifted = CoefficientField(LAPLACE.q_diff, None, gaarding_shift=0.7)
    diff = assemble_stiffness(mesh, shifted, 0.0) - assemble_stiffness(mesh, LAPLACE, 0.0)
    np.testing.assert_allclose(diff.toarray(), 0.7 * assemble_mass(mesh).toarray(), atol=1e-15)


def test_robin_with_zero_alpha_equals_neumann():
    base = build_rect_mesh(1, 1, 3, 3)
    robin = tag_boundary(base, lambda x, y: Robin(0.0))
    neumann = tag_boundary(base, lambda x, y: Neumann(0.0))
    np.testing.assert_array_equal(assemble_stiffness(robin, LAPLACE, 0.0).toarray(),
                                  assemble_stiffness(neumann, LAPLACE, 0.0).toarray())


def test_robin_boundary_mass_total():
    mesh = tag_boundary(build_rect_mesh(2, 1, 4, 3), lambda x, y: Robin(1.5))
    R = assemble_robin(mesh)
    ones = np.ones(mesh.n_nodes)
    assert ones @ R @ ones == pytest.approx(1.5 * 6.0)  # alpha * perimeter
    load = assemble_boundary_load(tag_boundary(build_rect_mesh(2, 1, 4, 3), lambda x, y: Neumann(2.0)))
    assert load.sum() == pytest.approx(2.0 * 6.0)


def test_triangle_rule_exactness():
    bary, w = triangle_rule(6)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    xi, eta = bary[:, 1], bary[:, 2]
    # int_T xi^a eta^b = a! b! / (a+b+2)!, relative to area 1/2
    from math import factorial
    for a, b in [(0, 0), (3, 2), (5, 5), (10, 0)]:
        exact = 2 * factorial(a) * factorial(b) / factorial(a + b + 2)
        assert np.sum(w * xi**a * eta**b) == pytest.approx(exact, rel=1e-13)


def test_projection_reproduces_constants_and_linears():
    mesh = build_rect_mesh(1, 1, 6, 6)
    M = assemble_mass(mesh)
    np.testing.assert_allclose(project_l2(mesh, M, lambda x, y: 3.5 * np.ones_like(x)), 3.5, atol=1e-13)
    np.testing.assert_allclose(project_l2(mesh, M, lambda x, y: x), mesh.nodes[:, 0], atol=1e-13)


def test_projection_idempotent_on_fe_functions():
    mesh = build_rect_mesh(1, 1, 5, 5)
    M = assemble_mass(mesh)
    rng = np.random.default_rng(1)
    c = rng.standard_normal(mesh.n_nodes)
    # the P1 interpolant of nodal values c, evaluated exactly by barycentric lookup
    def fe_function(x, y):
        out = np.empty(x.shape)
        # quadrature points arrive element by element, (nE, nq)
        p = mesh.nodes[mesh.elements]
        for e in range(mesh.n_elements):
            T = np.column_stack([p[e, 1] - p[e, 0], p[e, 2] - p[e, 0]])
            lam = np.linalg.solve(T, np.vstack([x[e] - p[e, 0, 0], y[e] - p[e, 0, 1]]))
            bary = np.vstack([1 - lam.sum(axis=0), lam])
            out[e] = c[mesh.elements[e]] @ bary
        return out
    np.testing.assert_allclose(project_l2(mesh, M, fe_function), c, atol=1e-12)


def test_projection_matches_adaptive_quadrature_oracle():
    mesh = build_rect_mesh(1, 1, 8, 8)
    g = lambda x, y: np.sin(np.pi * x)  # noqa: E731
    # brute-force load vector by adaptive 2D quadrature over each triangle
    b = np.zeros(mesh.n_nodes)
    for tri in mesh.elements:
        p = mesh.nodes[tri]
        T = np.column_stack([p[1] - p[0], p[2] - p[0]])
        det = abs(np.linalg.det(T))
        for k in range(3):
            def integrand(s, r, k=k):
                x, y = p[0] + T @ np.array([r, s])
                lam = (1 - r - s, r, s)[k]
                return np.sin(np.pi * x) * lam
            val, _ = dblquad(integrand, 0, 1, 0, lambda r: 1 - r, epsabs=1e-14, epsrel=1e-13)
            b[tri[k]] += det * val
    oracle = np.linalg.solve(assemble_mass(mesh).toarray(), b)
    np.testing.assert_allclose(project_l2(mesh, assemble_mass(mesh), g), oracle, atol=1e-10)
    np.testing.assert_allclose(load_vector(mesh, g), b, atol=1e-13)


def test_l2_norm_examples():
    mesh = build_rect_mesh(1, 1, 32, 32)
    M = assemble_mass(mesh)
    assert l2_norm(M, np.zeros(mesh.n_nodes)) == 0.0
    interp = np.sin(np.pi * mesh.nodes[:, 0])
    assert abs(l2_norm(M, interp) - np.sqrt(0.5)) < 2e-3
    with pytest.raises(ValueError):
        l2_norm(M, np.zeros(3))


def test_l2_error_of_exact_linear_is_zero():
    mesh = build_rect_mesh(1, 1, 4, 4)
    assert l2_error(mesh, mesh.nodes[:, 0] + 2 * mesh.nodes[:, 1], lambda x, y: x + 2 * y) < 1e-14


def test_homogeneous_dirichlet_is_deletion():
    mesh = tag_boundary(build_rect_mesh(1, 1, 3, 3), lambda x, y: Dirichlet(0.0))
    K = assemble_stiffness(mesh, LAPLACE, 0.0)
    M = assemble_mass(mesh)
    K_ff, M_ff, forcing, lift = apply_dirichlet(mesh, K, M)
    np.testing.assert_array_equal(forcing, 0.0)
    np.testing.assert_array_equal(lift.lift_vector(), 0.0)
    free = lift.free
    np.testing.assert_array_equal(K_ff.toarray(), K.toarray()[np.ix_(free, free)])
    assert lift.n_free == 4
    u = np.arange(4.0)
    np.testing.assert_array_equal(lift.restrict(lift.prolong(u)), u)


def test_constant_dirichlet_data_gives_constant_steady_state():
    mesh = tag_boundary(build_rect_mesh(1, 1, 4, 4), lambda x, y: Dirichlet(1.0))
    K_ff, _, forcing, lift = apply_dirichlet(mesh, assemble_stiffness(mesh, LAPLACE, 0.0), assemble_mass(mesh))
    u = np.linalg.solve(K_ff.toarray(), forcing)
    np.testing.assert_allclose(lift.prolong(u), 1.0, atol=1e-13)


def test_saturating_lifted_steady_problem_against_row_replacement_solve():
    problem = adr_problem(nx=8, diffusion="constant")
    mesh = problem.build_mesh()
    K = assemble_stiffness(mesh, problem.coefficients(), 0.0)
    K_ff, _, forcing, lift = apply_dirichlet(mesh, K, assemble_mass(mesh))
    u = lift.prolong(np.linalg.solve(K_ff.toarray(), forcing))
    # oracle: full system with Dirichlet rows replaced by identity rows
    A = K.toarray()
    rhs = np.zeros(mesh.n_nodes)
    for i, val in zip(lift.fixed, lift.values):
        A[i] = 0.0
        A[i, i] = 1.0
        rhs[i] = val
    oracle = np.linalg.solve(A, rhs)
    assert mesh.n_nodes <= 81
    assert np.max(np.abs(u - oracle)) < 1e-10
    np.testing.assert_allclose(u, 1.0, atol=1e-10)


def test_all_dirichlet_mesh_without_free_dofs_rejected():
    mesh = tag_boundary(build_rect_mesh(1, 1, 1, 1), lambda x, y: Dirichlet(0.0))
    with pytest.raises(ValueError):
        make_lift(mesh)


def test_lumped_mass_preserves_total():
    M = assemble_mass(build_rect_mesh(1, 1, 5, 5))
    L = lump(M)
    assert L.sum() == pytest.approx(1.0)
    assert L.nnz == M.shape[0]


def test_dump_coo(tmp_path):
    M = assemble_mass(build_rect_mesh(1, 1, 1, 1))
    path = tmp_path / "m.txt"
    dump_coo(path, M)
    rows = [line.split() for line in path.read_text().splitlines()]
    assert len(rows) == M.nnz
    i, j, v = rows[0]
    assert (int(i), int(j)) == (0, 0) and float(v) == pytest.approx(M[0, 0])


def test_inlet_boundary_rule_is_total():
    mesh = tag_boundary(build_rect_mesh(2, 1, 3, 3), inlet_boundary_rule(2.0))
    assert len(mesh.tags) == len(mesh.facets)
