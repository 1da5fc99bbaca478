"""Q1 vector elasticity on the fine grid: assembly, reference solvers, norms.

Local node order inside a cell is lexicographic: (0,0), (1,0), (0,1), (1,1);
local dof ``2*a + comp``.  Coefficients are constant per cell, so 2x2 Gauss
quadrature integrates every bilinear-form entry exactly.

The DG machinery works in the space broken across coarse edges: each coarse
block carries its own copy of its ``(nf+1)^2`` fine nodes, blocks in
lexicographic order, local numbering as in :func:`grid.block`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import linalg
from .coeff import CoeffField
from .errors import CoercivityError, InvalidArgument, NumericalError
from .grid import GridHierarchy, Region, block

GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)
GAUSS3_PTS = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
GAUSS3_WTS = np.array([5.0, 8.0, 5.0]) / 9.0
_CORNERS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])


def _shape(xi, eta):
    """Q1 shape values and reference derivatives at a point of [0,1]^2."""
    N = np.array([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta])
    dN = np.array([[-(1 - eta), -(1 - xi)],
                   [(1 - eta), -xi],
                   [-eta, (1 - xi)],
                   [eta, xi]])
    return N, dN


def gauss_points_2x2():
    p = 0.5 * (GAUSS2 + 1.0)
    return [(x, y) for y in p for x in p]


def strain_matrix(dNdx) -> np.ndarray:
    """3x8 map to (e_xx, e_yy, 2 e_xy)."""
    B = np.zeros((3, 8))
    B[0, 0::2] = dNdx[:, 0]
    B[1, 1::2] = dNdx[:, 1]
    B[2, 0::2] = dNdx[:, 1]
    B[2, 1::2] = dNdx[:, 0]
    return B


@lru_cache(maxsize=64)
def element_matrices(hx: float, hy: float):
    """Unit-coefficient element matrices ``(K_lambda, K_mu, M_scalar)``."""
    D_lam = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    D_mu = np.diag([2.0, 2.0, 1.0])
    Kl = np.zeros((8, 8))
    Km = np.zeros((8, 8))
    M = np.zeros((4, 4))
    w = 0.25 * hx * hy
    for xi, eta in gauss_points_2x2():
        N, dN = _shape(xi, eta)
        dNdx = dN / np.array([hx, hy])
        B = strain_matrix(dNdx)
        Kl += w * B.T @ D_lam @ B
        Km += w * B.T @ D_mu @ B
        M += w * np.outer(N, N)
    for a in (Kl, Km, M):
        a.setflags(write=False)
    return Kl, Km, M


def rect_connectivity(ncx_cells: int, ncy_cells: int) -> np.ndarray:
    """(ncells, 4) local node ids of a structured rectangle of cells."""
    i = np.arange(ncx_cells)
    j = np.arange(ncy_cells)
    n0 = (j[:, None] * (ncx_cells + 1) + i[None, :]).ravel()
    return np.column_stack([n0, n0 + 1, n0 + ncx_cells + 1, n0 + ncx_cells + 2])


def _cell_dofs(conn):
    return np.stack([2 * conn, 2 * conn + 1], axis=2).reshape(len(conn), 8)


def _assemble(conn_dofs, elems, n):
    ne, k = conn_dofs.shape
    rows = np.repeat(conn_dofs, k, axis=1).ravel()
    cols = np.tile(conn_dofs, (1, k)).ravel()
    A = sp.coo_matrix((elems.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_rect_stiffness(lam: np.ndarray, mu: np.ndarray, hx: float, hy: float) -> sp.csr_matrix:
    """Stiffness on a rectangle of cells with coefficient arrays of shape (ny, nx)."""
    ny, nx = lam.shape
    Kl, Km, _ = element_matrices(hx, hy)
    elems = lam.ravel()[:, None, None] * Kl + mu.ravel()[:, None, None] * Km
    dofs = _cell_dofs(rect_connectivity(nx, ny))
    return _assemble(dofs, elems, 2 * (nx + 1) * (ny + 1))


def assemble_rect_mass(weight: np.ndarray, hx: float, hy: float) -> sp.csr_matrix:
    """Vector mass matrix weighted by a cellwise constant field."""
    ny, nx = weight.shape
    _, _, M = element_matrices(hx, hy)
    Mv = np.kron(M, np.eye(2))
    elems = weight.ravel()[:, None, None] * Mv
    dofs = _cell_dofs(rect_connectivity(nx, ny))
    return _assemble(dofs, elems, 2 * (nx + 1) * (ny + 1))


def _region_coeffs(g: GridHierarchy, c: CoeffField, region: Region | None):
    c.check_grid(g)
    if region is None:
        return c.lam, c.mu
    rs, cs = region.cell_slices()
    return c.lam[rs, cs], c.mu[rs, cs]


@dataclass(frozen=True, eq=False)
class FineOperator:
    stiffness: sp.csr_matrix = field(repr=False)
    region: Region | None
    dirichlet: np.ndarray = field(repr=False)

    def free(self) -> np.ndarray:
        mask = np.ones(self.stiffness.shape[0], dtype=bool)
        mask[self.dirichlet] = False
        return np.flatnonzero(mask)


def assemble_stiffness(g: GridHierarchy, c: CoeffField, region: Region | None = None) -> FineOperator:
    """Elasticity stiffness on the whole domain (``region=None``) or a region.

    Region matrices use the region's local dof numbering and carry no
    boundary condition; the whole-domain operator records the Dirichlet dofs.
    """
    lam, mu = _region_coeffs(g, c, region)
    A = assemble_rect_stiffness(lam, mu, g.hx, g.hy)
    dirichlet = g.dirichlet_dofs() if region is None else np.zeros(0, dtype=int)
    return FineOperator(A, region, dirichlet)


def weighted_mass(g: GridHierarchy, weight: np.ndarray, region: Region | None = None) -> sp.csr_matrix:
    if region is not None:
        rs, cs = region.cell_slices()
        weight = weight[rs, cs]
    return assemble_rect_mass(np.asarray(weight, dtype=float), g.hx, g.hy)


def load_vector(g: GridHierarchy, force) -> np.ndarray:
    """Load vector for a constant force ``(f1, f2)`` or a callable ``f(x, y) -> (f1, f2)``.

    Callables are integrated with 3x3 Gauss points per cell.
    """
    conn = rect_connectivity(g.nx, g.ny)
    F = np.zeros(g.n_dofs)
    ci = np.tile(np.arange(g.nx), g.ny)
    cj = np.repeat(np.arange(g.ny), g.nx)
    x0 = ci * g.hx
    y0 = cj * g.hy
    w0 = g.hx * g.hy
    if not callable(force):
        fx, fy = (float(v) for v in force)
        force_fn = None
    else:
        force_fn = force
    pts = 0.5 * (GAUSS3_PTS + 1.0)
    wts = 0.5 * GAUSS3_WTS
    for a, xi in enumerate(pts):
        for b, eta in enumerate(pts):
            N, _ = _shape(xi, eta)
            wq = w0 * wts[a] * wts[b]
            if force_fn is None:
                f1 = np.full(len(conn), fx)
                f2 = np.full(len(conn), fy)
            else:
                f1, f2 = force_fn(x0 + xi * g.hx, y0 + eta * g.hy)
                f1 = np.broadcast_to(f1, (len(conn),))
                f2 = np.broadcast_to(f2, (len(conn),))
            for k in range(4):
                np.add.at(F, 2 * conn[:, k], wq * N[k] * f1)
                np.add.at(F, 2 * conn[:, k] + 1, wq * N[k] * f2)
    return F


def _spd_solve(A, b, solver: str, tol: float):
    if solver == "direct":
        return linalg.solve_direct(A, b)
    if solver == "pcg":
        return linalg.solve_spd(A, b, tol=tol)
    raise InvalidArgument(f"unknown solver {solver!r}")


def solve_fine_cg(g: GridHierarchy, c: CoeffField, f: np.ndarray, solver: str = "direct",
                  tol: float = 1e-10, op: FineOperator | None = None) -> np.ndarray:
    """Conforming fine solution with ``u = 0`` on the domain boundary."""
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n_dofs,):
        raise InvalidArgument(f"load vector has shape {f.shape}, expected ({g.n_dofs},)")
    op = op or assemble_stiffness(g, c)
    free = g.free_dofs()
    u = np.zeros(g.n_dofs)
    if not np.any(f[free]):
        return u
    u[free] = _spd_solve(linalg.submatrix(op.stiffness, free), f[free], solver, tol)
    return u


# ---------------------------------------------------------------- DG machinery

@dataclass(frozen=True)
class EdgeTrace:
    """A coarse edge with its fine nodes and adjacent blocks.

    ``normal`` points from ``plus`` into ``minus``; on the domain boundary
    ``minus`` is None and the normal points outward.  ``local_plus`` and
    ``local_minus`` give the edge nodes' positions in each block's local
    node numbering, ordered along the edge.
    """

    id: int
    nodes: np.ndarray = field(repr=False)
    normal: tuple[float, float]
    plus: int
    minus: int | None
    local_plus: np.ndarray = field(repr=False)
    local_minus: np.ndarray | None = field(repr=False)
    seg_length: float
    vertical: bool

    @property
    def on_boundary(self) -> bool:
        return self.minus is None

    def node_weights(self) -> np.ndarray:
        """Trapezoid weights of the edge nodes."""
        w = np.full(len(self.nodes), self.seg_length)
        w[0] = w[-1] = 0.5 * self.seg_length
        return w


def coarse_edges(g: GridHierarchy) -> list[EdgeTrace]:
    """All coarse edges: vertical ones first (x fastest), then horizontal."""
    nf = g.nf
    n1 = nf + 1
    t = np.arange(n1)
    left_col = t * n1            # local nodes with i = 0
    right_col = t * n1 + nf
    bottom_row = t
    top_row = nf * n1 + t
    edges = []
    eid = 0
    for by in range(g.ncy):
        for bx in range(g.ncx + 1):
            nodes = g.node_index(bx * nf, by * nf + t)
            if bx == 0:
                e = EdgeTrace(eid, nodes, (-1.0, 0.0), by * g.ncx, None, left_col, None, g.hy, True)
            elif bx == g.ncx:
                e = EdgeTrace(eid, nodes, (1.0, 0.0), by * g.ncx + bx - 1, None, right_col, None, g.hy, True)
            else:
                e = EdgeTrace(eid, nodes, (1.0, 0.0), by * g.ncx + bx - 1, by * g.ncx + bx,
                              right_col, left_col, g.hy, True)
            edges.append(e)
            eid += 1
    for by in range(g.ncy + 1):
        for bx in range(g.ncx):
            nodes = g.node_index(bx * nf + t, by * nf)
            if by == 0:
                e = EdgeTrace(eid, nodes, (0.0, -1.0), bx, None, bottom_row, None, g.hx, False)
            elif by == g.ncy:
                e = EdgeTrace(eid, nodes, (0.0, 1.0), (by - 1) * g.ncx + bx, None, top_row, None, g.hx, False)
            else:
                e = EdgeTrace(eid, nodes, (0.0, 1.0), (by - 1) * g.ncx + bx, by * g.ncx + bx,
                              top_row, bottom_row, g.hx, False)
            edges.append(e)
            eid += 1
    return edges


def edge_average_jump(e: EdgeTrace, u_plus, u_minus=None):
    """Average and jump of traces sampled at the edge nodes.

    On a boundary edge both equal the single trace.
    """
    u_plus = np.asarray(u_plus, dtype=float)
    if e.on_boundary:
        if u_minus is not None:
            raise InvalidArgument("boundary edge takes a single trace")
        if u_plus.shape[0] != len(e.nodes):
            raise InvalidArgument(f"trace length {u_plus.shape[0]} != {len(e.nodes)} edge nodes")
        return u_plus.copy(), u_plus.copy()
    u_minus = np.asarray(u_minus, dtype=float)
    if u_plus.shape != u_minus.shape or u_plus.shape[0] != len(e.nodes):
        raise InvalidArgument("trace length mismatch")
    return 0.5 * (u_plus + u_minus), u_plus - u_minus


def edge_segment_modulus(g: GridHierarchy, c: CoeffField, e: EdgeTrace) -> np.ndarray:
    """Average of lambda + 2 mu over the cells on both sides of each fine segment."""
    p = c.p_modulus
    nf = g.nf
    bx, by = g.block_ij(e.plus)
    s = np.arange(nf)
    if e.vertical:
        rows = by * nf + s
        if e.on_boundary:
            col = 0 if e.normal[0] < 0 else g.nx - 1
            return p[rows, col].copy()
        col = (bx + 1) * nf
        return 0.5 * (p[rows, col - 1] + p[rows, col])
    cols = bx * nf + s
    if e.on_boundary:
        row = 0 if e.normal[1] < 0 else g.ny - 1
        return p[row, cols].copy()
    row = (by + 1) * nf
    return 0.5 * (p[row - 1, cols] + p[row, cols])


def boundary_node_weights(region: Region, hx: float, hy: float) -> np.ndarray:
    """Lumped (trapezoid) boundary mass of each boundary node of a region."""
    ny1, nx1 = region.node_shape
    wmap = np.zeros((ny1, nx1))
    wmap[0, :-1] += 0.5 * hx
    wmap[0, 1:] += 0.5 * hx
    wmap[-1, :-1] += 0.5 * hx
    wmap[-1, 1:] += 0.5 * hx
    wmap[:-1, 0] += 0.5 * hy
    wmap[1:, 0] += 0.5 * hy
    wmap[:-1, -1] += 0.5 * hy
    wmap[1:, -1] += 0.5 * hy
    return wmap.ravel()[region.boundary_local]


def schur_complement(A: sp.csr_matrix, bdofs: np.ndarray, idofs: np.ndarray) -> np.ndarray:
    """Dense ``A_bb - A_bi A_ii^{-1} A_ib``."""
    A = sp.csr_matrix(A)
    Abb = A[bdofs][:, bdofs].toarray()
    if len(idofs) == 0:
        return Abb
    Aii = sp.csc_matrix(A[idofs][:, idofs])
    Aib = A[idofs][:, bdofs].toarray()
    X = spla.splu(Aii).solve(Aib)
    S = Abb - A[bdofs][:, idofs] @ X
    return 0.5 * (S + S.T)


def harmonic_extension_operator(A: sp.csr_matrix, bdofs: np.ndarray, idofs: np.ndarray) -> np.ndarray:
    """Dense map from boundary dofs to all region dofs (discrete harmonic extension)."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    E = np.zeros((n, len(bdofs)))
    E[bdofs, np.arange(len(bdofs))] = 1.0
    if len(idofs):
        Aii = sp.csc_matrix(A[idofs][:, idofs])
        E[idofs] = -spla.splu(Aii).solve(A[idofs][:, bdofs].toarray())
    return E


def region_boundary_dofs(region: Region):
    from .grid import interleave
    return interleave(region.boundary_local), interleave(region.interior_local)


def flux_operator(g: GridHierarchy, c: CoeffField, K: Region, A_K=None) -> np.ndarray:
    """Matrix mapping boundary dofs of ``K`` to nodal outward traction values.

    The traction is the element of the boundary trace space defined by
    ``int_dK t . v = a_K(u, v_hat)`` with ``v_hat`` the discrete harmonic
    extension of ``v``, using the lumped boundary mass.
    """
    if A_K is None:
        A_K = assemble_stiffness(g, c, K).stiffness
    bd, idf = region_boundary_dofs(K)
    S = schur_complement(A_K, bd, idf)
    w = np.repeat(boundary_node_weights(K, g.hx, g.hy), 2)
    return S / w[:, None]


def boundary_flux(g: GridHierarchy, c: CoeffField, K: Region, u: np.ndarray, A_K=None) -> np.ndarray:
    """Outward traction at each boundary node of ``K``, shape (n_boundary_nodes, 2).

    ``u`` holds values on all dofs of ``K`` (local numbering).
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (K.n_dofs,):
        raise InvalidArgument(f"u has shape {u.shape}, expected ({K.n_dofs},)")
    T = flux_operator(g, c, K, A_K)
    bd, _ = region_boundary_dofs(K)
    return (T @ u[bd]).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class DGOperator:
    """IPDG operators on the broken fine space.

    ``matrix`` is a_DG, ``norm`` the DG-norm Gram matrix
    ``a_H + (gamma/h) * penalty``; ``volume`` is a_H alone.
    """

    matrix: sp.csr_matrix = field(repr=False)
    norm: sp.csr_matrix = field(repr=False)
    volume: sp.csr_matrix = field(repr=False)
    consistency: sp.csr_matrix = field(repr=False)
    penalty: sp.csr_matrix = field(repr=False)
    gamma: float
    penalty_h: float
    jump: sp.csr_matrix = field(repr=False)


class BrokenSpace:
    """Index bookkeeping for the space broken across coarse edges."""

    def __init__(self, g: GridHierarchy):
        self.g = g
        self.blocks = [block(g, k) for k in range(g.n_blocks)]
        self.n_local = 2 * (g.nf + 1) ** 2
        self.n_dofs = g.n_blocks * self.n_local

    def block_dofs(self, k: int) -> np.ndarray:
        return np.arange(k * self.n_local, (k + 1) * self.n_local)

    def from_continuous(self, u: np.ndarray) -> np.ndarray:
        return np.concatenate([u[K.dofs] for K in self.blocks])

    def node_map(self) -> np.ndarray:
        """Global fine node of every broken node."""
        return np.concatenate([K.nodes for K in self.blocks])

    def cell_block_order(self) -> np.ndarray:
        """Global cell index of every broken cell, block by block."""
        return np.concatenate([K.cells for K in self.blocks])

    def to_cells(self, u: np.ndarray) -> np.ndarray:
        """Cell averages (ny, nx, 2) of a broken field."""
        g = self.g
        nf = g.nf
        conn = rect_connectivity(nf, nf)
        out = np.zeros((g.n_cells, 2))
        for K in self.blocks:
            loc = u[self.block_dofs(K.owner)].reshape(-1, 2)
            out[K.cells] = loc[conn].mean(axis=1)
        return out.reshape(g.ny, g.nx, 2)


def block_stiffness(g: GridHierarchy, c: CoeffField, space: BrokenSpace) -> list[sp.csr_matrix]:
    return [assemble_stiffness(g, c, K).stiffness for K in space.blocks]


def _traction_rows(g: GridHierarchy, c: CoeffField, e: EdgeTrace, k: int, loc: np.ndarray,
                   outward: tuple[float, float], t: float):
    """Traction ``sigma(u) n`` at parameter ``t`` of every fine segment of ``e``,
    taken from the cells of block ``k`` along the edge (block-local nodes ``loc``).

    Returns (nseg, 2, 8) coefficients and (nseg, 8) block-local dof indices.
    """
    nf = g.nf
    bx, by = g.block_ij(k)
    n1 = nf + 1
    s = np.arange(nf)
    if e.vertical:
        far = loc[0] % n1 == nf
        ci = np.full(nf, nf - 1 if far else 0)
        cj = s
        xi, eta = (1.0 if far else 0.0), t
    else:
        far = loc[0] // n1 == nf
        ci = s
        cj = np.full(nf, nf - 1 if far else 0)
        xi, eta = t, (1.0 if far else 0.0)
    _, dN = _shape(xi, eta)
    B = strain_matrix(dN / np.array([g.hx, g.hy]))
    rows = by * nf + cj
    cols = bx * nf + ci
    lam = c.lam[rows, cols]
    mu = c.mu[rows, cols]
    nx_, ny_ = outward
    Nn = np.array([[nx_, 0.0, ny_], [0.0, ny_, nx_]])
    D = np.zeros((nf, 3, 3))
    D[:, 0, 0] = D[:, 1, 1] = lam + 2 * mu
    D[:, 0, 1] = D[:, 1, 0] = lam
    D[:, 2, 2] = mu
    coef = np.einsum("ij,sjk,kl->sil", Nn, D, B)
    n0 = cj * n1 + ci
    conn = np.column_stack([n0, n0 + 1, n0 + n1, n0 + n1 + 1])
    return coef, _cell_dofs(conn)


def assemble_dg(g: GridHierarchy, c: CoeffField, gamma: float = 8.0, penalty_h: float | None = None,
                space: BrokenSpace | None = None, flux: str = "pointwise") -> DGOperator:
    """Symmetric interior penalty form on the broken fine space.

    ``flux="pointwise"`` takes ``sigma(u) n`` from the adjacent cell's
    gradient with two Gauss points per fine segment.  ``flux="schur"`` uses
    the trace-space traction of :func:`flux_operator` with trapezoid edge
    quadrature.  ``penalty_h`` defaults to the fine mesh size.
    """
    c.check_grid(g)
    if gamma <= 0:
        raise InvalidArgument(f"penalty gamma must be positive, got {gamma}")
    if flux not in ("pointwise", "schur"):
        raise InvalidArgument(f"flux must be 'pointwise' or 'schur', got {flux!r}")
    space = space or BrokenSpace(g)
    h = g.h if penalty_h is None else float(penalty_h)
    Ablocks = block_stiffness(g, c, space)
    A_H = sp.block_diag(Ablocks, format="csr")
    if flux == "schur":
        J, Avg, W, P = _edge_ops_schur(g, c, space, Ablocks)
    else:
        J, Avg, W, P = _edge_ops_pointwise(g, c, space)
    C = (J.T @ sp.diags(W) @ Avg).tocsr()
    C = (C + C.T).tocsr()
    Pen = (J.T @ sp.diags(P) @ J).tocsr()
    norm = (A_H + (gamma / h) * Pen).tocsr()
    M = (norm - C).tocsr()
    M = (0.5 * (M + M.T)).tocsr()
    return DGOperator(M, norm, A_H, C, Pen, float(gamma), h, J)


def _edge_ops_pointwise(g, c, space):
    gp = 0.5 * (GAUSS2 + 1.0)
    edges = coarse_edges(g)
    nf = g.nf
    jr, jc, jv, ar, ac, av = [], [], [], [], [], []
    W, P = [], []
    row = 0
    for e in edges:
        kap = edge_segment_modulus(g, c, e)
        sides = [(e.plus, e.local_plus, 1.0)]
        if not e.on_boundary:
            sides.append((e.minus, e.local_minus, -1.0))
        avg = 1.0 if e.on_boundary else 0.5
        for t in gp:
            rows = row + np.arange(2 * nf).reshape(nf, 2)
            W.append(np.full(2 * nf, 0.5 * e.seg_length))
            P.append(np.repeat(0.5 * e.seg_length * kap, 2))
            for k, loc, sign in sides:
                base = k * space.n_local
                a = loc[:-1]
                b = loc[1:]
                for comp in range(2):
                    r = rows[:, comp]
                    jr += [r, r]
                    jc += [base + 2 * a + comp, base + 2 * b + comp]
                    jv += [np.full(nf, sign * (1 - t)), np.full(nf, sign * t)]
                outward = (sign * e.normal[0], sign * e.normal[1])
                coef, ldofs = _traction_rows(g, c, e, k, loc, outward, t)
                for comp in range(2):
                    ar.append(np.repeat(rows[:, comp], 8))
                    ac.append((base + ldofs).ravel())
                    av.append((sign * avg * coef[:, comp, :]).ravel())
            row += 2 * nf
    n = space.n_dofs
    J = sp.csr_matrix((np.concatenate(jv), (np.concatenate(jr), np.concatenate(jc))), shape=(row, n))
    Avg = sp.csr_matrix((np.concatenate(av), (np.concatenate(ar), np.concatenate(ac))), shape=(row, n))
    return J, Avg, np.concatenate(W), np.concatenate(P)


def _edge_ops_schur(g, c, space, Ablocks):
    K0 = space.blocks[0]
    bd_loc, _ = region_boundary_dofs(K0)
    bpos = -np.ones(K0.n_nodes, dtype=int)
    bpos[K0.boundary_local] = np.arange(len(K0.boundary_local))
    T = [flux_operator(g, c, K, Ablocks[k]) for k, K in enumerate(space.blocks)]
    edges = coarse_edges(g)
    nrows = sum(2 * len(e.nodes) for e in edges)
    jr, jc, jv, ar, ac, av = [], [], [], [], [], []
    W = np.zeros(nrows)
    P = np.zeros(nrows)
    row = 0
    for e in edges:
        m = len(e.nodes)
        rows = row + np.arange(2 * m)
        kap = edge_segment_modulus(g, c, e)
        pw = np.zeros(m)
        pw[:-1] += 0.5 * e.seg_length * kap
        pw[1:] += 0.5 * e.seg_length * kap
        W[rows] = np.repeat(e.node_weights(), 2)
        P[rows] = np.repeat(pw, 2)
        sides = [(e.plus, e.local_plus, 1.0)]
        if not e.on_boundary:
            sides.append((e.minus, e.local_minus, -1.0))
        avg = 1.0 if e.on_boundary else 0.5
        for k, loc, sign in sides:
            ldofs = np.column_stack([2 * loc, 2 * loc + 1]).ravel()
            jr.append(rows)
            jc.append(k * space.n_local + ldofs)
            jv.append(np.full(2 * m, sign))
            # outward normal of block k is sign * n_E
            bp = bpos[loc]
            trow = np.column_stack([2 * bp, 2 * bp + 1]).ravel()
            blk = T[k][trow, :] * (sign * avg)
            ar.append(np.repeat(rows, blk.shape[1]))
            ac.append(np.tile(k * space.n_local + bd_loc, len(rows)))
            av.append(blk.ravel())
        row += 2 * m
    n = space.n_dofs
    J = sp.csr_matrix((np.concatenate(jv), (np.concatenate(jr), np.concatenate(jc))), shape=(nrows, n))
    Avg = sp.csr_matrix((np.concatenate(av), (np.concatenate(ar), np.concatenate(ac))), shape=(nrows, n))
    return J, Avg, W, P


def solve_fine_dg(g: GridHierarchy, c: CoeffField, f_broken: np.ndarray, gamma: float = 8.0,
                  op: DGOperator | None = None) -> np.ndarray:
    """Fine IPDG solution on the broken space.

    ``f_broken`` is the load in broken numbering (see :func:`broken_load`).
    """
    op = op or assemble_dg(g, c, gamma)
    f_broken = np.asarray(f_broken, dtype=float)
    if f_broken.shape != (op.matrix.shape[0],):
        raise InvalidArgument(f"load has shape {f_broken.shape}, expected ({op.matrix.shape[0]},)")
    if not np.any(f_broken):
        return np.zeros_like(f_broken)
    u = linalg.solve_direct(op.matrix, f_broken)
    energy = u @ (op.matrix @ u)
    if not energy > 0:
        raise CoercivityError(f"IPDG system is not positive definite for gamma={op.gamma}; increase gamma")
    return u


def check_coercive(op: DGOperator, samples: int = 20, seed: int = 0) -> float:
    """Smallest sampled ratio a_DG(u,u)/||u||_DG^2 over random broken fields.

    Raises CoercivityError when a non-positive value is found.
    """
    rng = np.random.default_rng(seed)
    n = op.matrix.shape[0]
    worst = np.inf
    for _ in range(samples):
        u = rng.standard_normal(n)
        a = u @ (op.matrix @ u)
        b = u @ (op.norm @ u)
        worst = min(worst, a / b)
    if not worst > 0:
        raise CoercivityError(f"a_DG not coercive for gamma={op.gamma} (ratio {worst:.3e})")
    return worst


def broken_load(g: GridHierarchy, force, space: BrokenSpace | None = None) -> np.ndarray:
    """Load vector in broken numbering; each block integrates its own cells."""
    space = space or BrokenSpace(g)
    nf = g.nf
    out = np.zeros(space.n_dofs)
    conn = rect_connectivity(nf, nf)
    pts = 0.5 * (GAUSS3_PTS + 1.0)
    wts = 0.5 * GAUSS3_WTS
    ci = np.tile(np.arange(nf), nf)
    cj = np.repeat(np.arange(nf), nf)
    for K in space.blocks:
        x0 = (K.bx0 * nf + ci) * g.hx
        y0 = (K.by0 * nf + cj) * g.hy
        loc = np.zeros(K.n_dofs)
        for a, xi in enumerate(pts):
            for b, eta in enumerate(pts):
                N, _ = _shape(xi, eta)
                wq = g.hx * g.hy * wts[a] * wts[b]
                if callable(force):
                    f1, f2 = force(x0 + xi * g.hx, y0 + eta * g.hy)
                    f1 = np.broadcast_to(f1, ci.shape)
                    f2 = np.broadcast_to(f2, ci.shape)
                else:
                    f1 = np.full(ci.shape, float(force[0]))
                    f2 = np.full(ci.shape, float(force[1]))
                for k in range(4):
                    np.add.at(loc, 2 * conn[:, k], wq * N[k] * f1)
                    np.add.at(loc, 2 * conn[:, k] + 1, wq * N[k] * f2)
        out[space.block_dofs(K.owner)] = loc
    return out


# ---------------------------------------------------------------- error norms

def error_norms(u_H: np.ndarray, u_h: np.ndarray, c: CoeffField, g: GridHierarchy,
                mode: str = "CG", space: BrokenSpace | None = None):
    """Relative weighted L2 and energy errors of ``u_H`` against ``u_h``.

    CG: ``||(l+2m) d|| / ||(l+2m) u_h||`` and ``sqrt(a(d,d)/a(u_h,u_h))``.
    DG: blockwise, with weight ``(l+2m)`` under the square root and the
    broken energy ``sum_K int_K sigma(d):eps(d)``.
    """
    d = np.asarray(u_H, dtype=float) - np.asarray(u_h, dtype=float)
    if mode == "CG":
        A = assemble_stiffness(g, c).stiffness
        M = assemble_rect_mass(c.p_modulus ** 2, g.hx, g.hy)
    elif mode == "DG":
        space = space or BrokenSpace(g)
        A = sp.block_diag(block_stiffness(g, c, space), format="csr")
        M = sp.block_diag([weighted_mass(g, c.p_modulus, K) for K in space.blocks], format="csr")
    else:
        raise InvalidArgument(f"mode must be 'CG' or 'DG', got {mode!r}")
    if d.shape != (A.shape[0],):
        raise InvalidArgument(f"vectors have shape {d.shape}, expected ({A.shape[0]},)")
    den_l2 = u_h @ (M @ u_h)
    den_h1 = u_h @ (A @ u_h)
    if den_l2 <= 0 or den_h1 <= 0:
        raise NumericalError("reference solution is zero; relative errors undefined")
    e_l2 = np.sqrt(max(d @ (M @ d), 0.0) / den_l2)
    e_h1 = np.sqrt(max(d @ (A @ d), 0.0) / den_h1)
    return float(e_l2), float(e_h1)


def exact_errors(g: GridHierarchy, u: np.ndarray, exact, exact_grad, broken: bool = False):
    """Absolute L2 and H1-seminorm errors against a smooth exact solution.

    ``exact(x, y) -> (u1, u2)`` and ``exact_grad(x, y) -> ((u1x, u1y), (u2x, u2y))``;
    integrated with 3x3 Gauss points per cell.
    """
    if broken:
        space = BrokenSpace(g)
        conn_loc = rect_connectivity(g.nf, g.nf)
        cells_conn = []
        for K in space.blocks:
            cells_conn.append(K.owner * (g.nf + 1) ** 2 + conn_loc)
        conn = np.concatenate(cells_conn)
        cells = space.cell_block_order()
    else:
        conn = rect_connectivity(g.nx, g.ny)
        cells = np.arange(g.n_cells)
    U = np.asarray(u).reshape(-1, 2)
    x0 = (cells % g.nx) * g.hx
    y0 = (cells // g.nx) * g.hy
    pts = 0.5 * (GAUSS3_PTS + 1.0)
    wts = 0.5 * GAUSS3_WTS
    l2 = 0.0
    h1 = 0.0
    ue = U[conn]  # (ncell, 4, 2)
    for a, xi in enumerate(pts):
        for b, eta in enumerate(pts):
            N, dN = _shape(xi, eta)
            wq = g.hx * g.hy * wts[a] * wts[b]
            x = x0 + xi * g.hx
            y = y0 + eta * g.hy
            uh = np.tensordot(ue, N, axes=([1], [0]))
            ex = np.column_stack(exact(x, y))
            l2 += wq * np.sum((uh - ex) ** 2)
            gx = np.tensordot(ue, dN[:, 0] / g.hx, axes=([1], [0]))
            gy = np.tensordot(ue, dN[:, 1] / g.hy, axes=([1], [0]))
            (u1x, u1y), (u2x, u2y) = exact_grad(x, y)
            h1 += wq * np.sum((gx[:, 0] - u1x) ** 2 + (gy[:, 0] - u1y) ** 2
                              + (gx[:, 1] - u2x) ** 2 + (gy[:, 1] - u2y) ** 2)
    return float(np.sqrt(l2)), float(np.sqrt(h1))
