import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from gmsfem import fem
from gmsfem.coeff import CoeffField, constant_field, gen_model1_like
from gmsfem.errors import CoercivityError, InvalidArgument
from gmsfem.grid import build_grid

from conftest import cg_errors, dg_errors, observed_rates


def oracle_element(lam, mu, hx, hy):
    """Element stiffness by 3x3 Gauss quadrature with explicit shape functions."""
    pts, wts = np.polynomial.legendre.leggauss(3)
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    D = np.array([[lam + 2 * mu, lam, 0], [lam, lam + 2 * mu, 0], [0, 0, mu]])
    K = np.zeros((8, 8))
    for xa, wa in zip(pts, wts):
        for yb, wb in zip(pts, wts):
            s, t = (xa + 1) / 2, (yb + 1) / 2
            B = np.zeros((3, 8))
            for a, (i, j) in enumerate(corners):
                dx = (1 if i else -1) * (t if j else 1 - t) / hx
                dy = (1 if j else -1) * (s if i else 1 - s) / hy
                B[:, 2 * a:2 * a + 2] = [[dx, 0], [0, dy], [dy, dx]]
            K += 0.25 * wa * wb * hx * hy * B.T @ D @ B
    return K


def test_element_stiffness_matches_quadrature_oracle():
    lam, mu, hx, hy = 2.0, 0.7, 0.3, 0.2
    A = fem.assemble_rect_stiffness(np.full((1, 1), lam), np.full((1, 1), mu), hx, hy).toarray()
    assert np.allclose(A, oracle_element(lam, mu, hx, hy), rtol=1e-13, atol=1e-13)


def test_element_has_three_rigid_modes():
    A = fem.assemble_rect_stiffness(np.ones((1, 1)), np.ones((1, 1)), 1.0, 1.0).toarray()
    w = np.linalg.eigvalsh(A)
    assert np.sum(w < 1e-12 * w.max()) == 3


def test_patch_test_affine_field():
    g = build_grid(1, 1, 2, 2, 3)
    c = gen_model1_like(g, contrast=100, seed=0)
    A = fem.assemble_stiffness(g, c).stiffness
    # constant strain is only an equilibrium for homogeneous media
    c0 = constant_field(g, 1.3, 0.4)
    A0 = fem.assemble_stiffness(g, c0).stiffness
    xy = g.node_coords()
    u = np.column_stack([0.3 * xy[:, 0] - 0.2 * xy[:, 1] + 1, 0.5 * xy[:, 0] + 0.1 * xy[:, 1]]).ravel()
    assert np.abs((A0 @ u)[g.free_dofs()]).max() < 1e-12
    rigid = np.column_stack([-xy[:, 1] + 2, xy[:, 0] - 1]).ravel()
    assert np.abs(A @ rigid).max() < 1e-9 * abs(A).max()


def test_load_vector_integrates_constant_force():
    g = build_grid(2, 1, 2, 1, 3)
    F = fem.load_vector(g, (1.5, -2.0))
    assert F[0::2].sum() == pytest.approx(3.0)
    assert F[1::2].sum() == pytest.approx(-4.0)
    Fc = fem.load_vector(g, lambda x, y: (1.5 + 0 * x, -2.0 + 0 * y))
    assert np.allclose(F, Fc)


def test_broken_load_gathers_to_continuous_load():
    g = build_grid(1, 1, 3, 2, 4)
    f = lambda x, y: (np.sin(x), x * y)
    space = fem.BrokenSpace(g)
    Fb = fem.broken_load(g, f, space)
    gathered = np.zeros(g.n_dofs)
    np.add.at(gathered, np.repeat(2 * space.node_map(), 2) + np.tile([0, 1], len(space.node_map())), Fb)
    assert np.allclose(gathered, fem.load_vector(g, f))


def test_cg_rates(manufactured):
    e = cg_errors([4, 8, 16], manufactured)
    assert np.all(np.abs(observed_rates(e[:, 0]) - 2) < 0.2)
    assert np.all(np.abs(observed_rates(e[:, 1]) - 1) < 0.2)


def test_dg_rates(manufactured):
    e = dg_errors([4, 8, 16], manufactured)
    assert np.all(np.abs(observed_rates(e[:, 0]) - 2) < 0.3)


def test_dg_schur_flux_converges(manufactured):
    exact, grad, force = manufactured
    errs = []
    for nf in (4, 8):
        g = build_grid(1, 1, 2, 2, nf)
        c = constant_field(g)
        op = fem.assemble_dg(g, c, 8.0, flux="schur")
        u = fem.solve_fine_dg(g, c, fem.broken_load(g, force), op=op)
        errs.append(fem.exact_errors(g, u, exact, grad, broken=True)[0])
    assert errs[1] < errs[0]


@pytest.fixture(scope="module")
def dg_setup():
    g = build_grid(1, 1, 3, 3, 4)
    c = gen_model1_like(g, contrast=1e3, seed=1)
    return g, c, fem.assemble_dg(g, c, 8.0)


def test_dg_operator_symmetric_and_norm(dg_setup):
    g, c, op = dg_setup
    M = op.matrix
    assert abs(M - M.T).max() < 1e-12 * abs(M).max()
    assert abs(op.norm - (op.volume + (op.gamma / op.penalty_h) * op.penalty)).max() < 1e-10 * abs(op.norm).max()
    assert op.penalty_h == g.h


def test_dg_reduces_to_cg_on_continuous_fields(dg_setup):
    g, c, op = dg_setup
    rng = np.random.default_rng(0)
    A = fem.assemble_stiffness(g, c).stiffness
    u, v = rng.standard_normal((2, g.n_dofs))
    u[g.dirichlet_dofs()] = v[g.dirichlet_dofs()] = 0
    space = fem.BrokenSpace(g)
    ub, vb = space.from_continuous(u), space.from_continuous(v)
    assert np.abs(op.jump @ ub).max() < 1e-12
    assert ub @ (op.matrix @ vb) == pytest.approx(u @ (A @ v), rel=1e-10)


def test_two_block_translation_penalty_by_hand():
    # domain 2 x 1, two unit blocks, homogeneous lambda + 2 mu = 3
    g = build_grid(2, 1, 2, 1, 4)
    c = constant_field(g, 1.0, 1.0)
    gamma = 8.0
    op = fem.assemble_dg(g, c, gamma)
    space = fem.BrokenSpace(g)
    t0 = np.zeros(space.n_dofs)
    t1 = np.zeros(space.n_dofs)
    t0[space.block_dofs(0)[0::2]] = 1.0
    t1[space.block_dofs(1)[0::2]] = 1.0
    pen = gamma / g.h * 3.0
    assert t0 @ op.volume @ t0 == pytest.approx(0, abs=1e-12)
    assert t0 @ op.matrix @ t0 == pytest.approx(pen * 4.0)
    assert t0 @ op.matrix @ t1 == pytest.approx(-pen * 1.0)


def test_single_block_weak_boundary_close_to_conforming():
    g = build_grid(1, 1, 1, 1, 32)
    c = constant_field(g)
    u_cg = fem.solve_fine_cg(g, c, fem.load_vector(g, (1.0, 1.0)))
    u_dg = fem.solve_fine_dg(g, c, fem.broken_load(g, (1.0, 1.0)), gamma=8.0)
    A = fem.assemble_stiffness(g, c).stiffness
    e_cg, e_dg = u_cg @ A @ u_cg, u_dg @ A @ u_dg
    assert abs(e_dg - e_cg) <= 0.05 * e_cg


def test_coercivity_and_small_gamma():
    g = build_grid(1, 1, 2, 2, 4)
    c = constant_field(g)
    assert fem.check_coercive(fem.assemble_dg(g, c, 8.0)) > 0
    weak = fem.assemble_dg(g, c, 1e-3)
    assert np.linalg.eigvalsh(weak.matrix.toarray()).min() < 0
    with pytest.raises(CoercivityError):
        fem.check_coercive(dataclasses.replace(weak, matrix=-weak.norm))
    with pytest.raises(InvalidArgument):
        fem.assemble_dg(g, c, 0.0)
    with pytest.raises(InvalidArgument):
        fem.assemble_dg(g, c, 8.0, flux="upwind")


def test_penalty_grows_continuity():
    # the coarse solution of a fixed problem becomes more continuous as gamma grows
    g = build_grid(1, 1, 2, 2, 4)
    c = gen_model1_like(g, contrast=10, seed=0)
    f = fem.broken_load(g, (1.0, 1.0))
    jumps = []
    for gamma in (8.0, 80.0, 800.0):
        op = fem.assemble_dg(g, c, gamma)
        u = fem.solve_fine_dg(g, c, f, op=op)
        jumps.append(np.linalg.norm(op.jump @ u))
    assert jumps[0] > jumps[1] > jumps[2]


def test_error_norms():
    g = build_grid(1, 1, 2, 2, 3)
    c = gen_model1_like(g, contrast=10, seed=0)
    u = fem.solve_fine_cg(g, c, fem.load_vector(g, (1.0, 0.0)))
    assert fem.error_norms(u, u, c, g) == (0.0, 0.0)
    assert fem.error_norms(0 * u, u, c, g) == pytest.approx((1.0, 1.0))
    assert fem.error_norms(1.5 * u, u, c, g) == pytest.approx((0.5, 0.5))
    with pytest.raises(InvalidArgument):
        fem.error_norms(u, u, c, g, mode="XX")


def test_edges_and_segment_modulus():
    g = build_grid(1, 1, 2, 3, 2)
    edges = fem.coarse_edges(g)
    assert len(edges) == (g.ncx + 1) * g.ncy + (g.ncy + 1) * g.ncx
    assert sum(e.on_boundary for e in edges) == 2 * (g.ncx + g.ncy)
    lam = np.arange(1, g.n_cells + 1, dtype=float).reshape(g.ny, g.nx)
    c = CoeffField(lam, np.ones_like(lam))
    e = next(e for e in edges if e.vertical and not e.on_boundary)
    m = fem.edge_segment_modulus(g, c, e)
    p = c.p_modulus
    assert np.allclose(m, 0.5 * (p[:g.nf, g.nf - 1] + p[:g.nf, g.nf]))
    avg, jump = fem.edge_average_jump(e, np.ones((3, 2)), np.zeros((3, 2)))
    assert np.allclose(avg, 0.5) and np.allclose(jump, 1.0)


def test_shape_errors():
    g = build_grid(1, 1, 2, 2, 2)
    c = constant_field(g)
    with pytest.raises(InvalidArgument):
        fem.solve_fine_cg(g, c, np.zeros(3))
    with pytest.raises(InvalidArgument):
        fem.solve_fine_dg(g, c, np.zeros(3))
    with pytest.raises(InvalidArgument):
        fem.assemble_stiffness(g, CoeffField(np.ones((2, 2)), np.ones((2, 2))))
    assert not np.any(fem.solve_fine_cg(g, c, np.zeros(g.n_dofs)))


def test_sparse_assembly_is_symmetric_psd():
    g = build_grid(1, 1, 2, 2, 3)
    c = gen_model1_like(g, contrast=1e4, seed=0)
    A = fem.assemble_stiffness(g, c).stiffness
    assert sp.issparse(A) and abs(A - A.T).max() < 1e-10 * abs(A).max()
    assert np.linalg.eigvalsh(A.toarray()).min() > -1e-8 * abs(A).max()
