"""Conforming coupling of the neighborhood offline spaces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import linalg
from .coeff import CoeffField
from .errors import EmptyBasisError, InvalidArgument, SingularSystemError
from .fem import FineOperator, assemble_stiffness, error_norms
from .grid import GridHierarchy, RegionKind
from .spectral import OfflineSpace

DENSE_LIMIT = 20000
REDUNDANCY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GlobalBasisCG:
    """Prolongation ``R`` (fine dofs x coarse dofs); ``labels[j] = (node, mode)``."""

    R: sp.csc_matrix = field(repr=False)
    labels: list[tuple[int, int]] = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.R.shape[1]


@dataclass(frozen=True, eq=False)
class MsSolution:
    """Coarse solution, its fine prolongation and errors against the reference."""

    coeffs: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    dimension: int
    rank: int
    e_L2: float = np.nan
    e_H1: float = np.nan
    dropped: tuple[int, ...] = ()


def assemble_global_cg(g: GridHierarchy, spaces: list[OfflineSpace]) -> GlobalBasisCG:
    """Stack the (already PU-multiplied) offline columns and zero them on the domain boundary."""
    seen: set[int] = set()
    rows, cols, vals, labels = [], [], [], []
    bmask = np.zeros(g.n_dofs, dtype=bool)
    bmask[g.dirichlet_dofs()] = True
    j = 0
    for s in spaces:
        r = s.region
        if r.kind not in (RegionKind.NEIGHBORHOOD,):
            raise InvalidArgument(f"conforming coupling needs neighborhood spaces, got {r.kind.value}")
        if r.owner in seen:
            raise InvalidArgument(f"coarse node {r.owner} included twice")
        seen.add(r.owner)
        keep = ~bmask[r.dofs]
        for l in range(s.L):
            col = np.where(keep, s.columns[:, l], 0.0)
            nz = np.flatnonzero(col)
            if nz.size == 0:
                raise EmptyBasisError(f"offline function {l} of node {r.owner} vanishes after the boundary condition")
            rows.append(r.dofs[nz])
            cols.append(np.full(nz.size, j))
            vals.append(col[nz])
            labels.append((r.owner, l))
            j += 1
    if j == 0:
        raise EmptyBasisError("the global offline space is empty")
    R = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(g.n_dofs, j))
    return GlobalBasisCG(R, labels)


def coarse_system(basis: GlobalBasisCG, A: sp.spmatrix, f: np.ndarray):
    R = basis.R
    K = (R.T @ (A @ R)).toarray()
    K = 0.5 * (K + K.T)
    return K, R.T @ f


def _select(K: np.ndarray, tol: float) -> np.ndarray:
    """Independent columns of a possibly redundant coarse matrix."""
    return linalg.pivoted_cholesky_select(K, tol)


def solve_coarse_spd(K: np.ndarray, F: np.ndarray, tol: float = 1e-12):
    """Solve ``K c = F``; large systems fall back to PCG."""
    if K.shape[0] > DENSE_LIMIT:
        return linalg.solve_spd(sp.csr_matrix(K), F, tol=tol)
    try:
        return sla.cho_solve(sla.cho_factor(K), F)
    except np.linalg.LinAlgError:
        d = np.diag(K)
        bad = np.flatnonzero(d <= 1e-14 * max(d.max(), 1e-300))
        raise SingularSystemError("coarse matrix is not positive definite", bad.tolist()) from None


def solve_cg_gmsfem(g: GridHierarchy, c: CoeffField, f: np.ndarray, basis: GlobalBasisCG,
                    reference: np.ndarray | None = None, op: FineOperator | None = None,
                    redundancy_tol: float = REDUNDANCY_TOL) -> MsSolution:
    """Galerkin solve in the offline space.

    Columns whose energy is (numerically) in the span of the others are
    dropped first, so full or overlapping bases stay solvable; set
    ``redundancy_tol=0`` to keep all columns and fail on a singular system.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n_dofs,):
        raise InvalidArgument(f"load vector has shape {f.shape}, expected ({g.n_dofs},)")
    A = (op or assemble_stiffness(g, c)).stiffness
    K, F = coarse_system(basis, A, f)
    m = K.shape[0]
    keep = _select(K, redundancy_tol) if redundancy_tol > 0 else np.arange(m)
    coeffs = np.zeros(m)
    if np.any(F):
        coeffs[keep] = solve_coarse_spd(K[np.ix_(keep, keep)], F[keep])
    u = basis.R @ coeffs
    dropped = tuple(int(k) for k in np.setdiff1d(np.arange(m), keep))
    e_l2 = e_h1 = np.nan
    if reference is not None and np.any(reference):
        e_l2, e_h1 = error_norms(u, reference, c, g, mode="CG")
    return MsSolution(coeffs, u, m, len(keep), e_l2, e_h1, dropped)
