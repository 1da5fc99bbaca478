"""Interior penalty coupling of the block offline spaces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import linalg
from .coeff import CoeffField
from .coupling_cg import REDUNDANCY_TOL, MsSolution
from .errors import CoercivityError, EmptyBasisError, InvalidArgument
from .fem import BrokenSpace, DGOperator, assemble_dg, error_norms
from .grid import GridHierarchy, RegionKind
from .spectral import OfflineSpace


@dataclass(frozen=True, eq=False)
class GlobalBasisDG:
    """Block-diagonal prolongation into the broken fine space; ``labels[j] = (block, mode)``."""

    Phi: sp.csc_matrix = field(repr=False)
    labels: list[tuple[int, int]] = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.Phi.shape[1]


def global_basis_dg(g: GridHierarchy, spaces: list[OfflineSpace], space: BrokenSpace | None = None) -> GlobalBasisDG:
    space = space or BrokenSpace(g)
    by_block: dict[int, OfflineSpace] = {}
    for s in spaces:
        if s.region.kind is not RegionKind.BLOCK:
            raise InvalidArgument(f"DG coupling needs block spaces, got {s.region.kind.value}")
        if s.region.owner in by_block:
            raise InvalidArgument(f"block {s.region.owner} included twice")
        by_block[s.region.owner] = s
    missing = sorted(set(range(g.n_blocks)) - set(by_block))
    if missing:
        raise InvalidArgument(f"offline spaces missing for blocks {missing[:5]}")
    mats, labels = [], []
    for k in range(g.n_blocks):
        s = by_block[k]
        mats.append(sp.csc_matrix(s.columns))
        labels += [(k, l) for l in range(s.L)]
    if not labels:
        raise EmptyBasisError("the global offline space is empty")
    return GlobalBasisDG(sp.block_diag(mats, format="csc"), labels)


def assemble_global_dg(g: GridHierarchy, c: CoeffField, spaces: list[OfflineSpace] | GlobalBasisDG,
                       gamma: float = 8.0, f_broken: np.ndarray | None = None,
                       op: DGOperator | None = None):
    """Dense ``a_DG`` in the offline basis and, if a broken load is given, the coarse load."""
    basis = spaces if isinstance(spaces, GlobalBasisDG) else global_basis_dg(g, spaces)
    op = op or assemble_dg(g, c, gamma)
    P = basis.Phi
    K = (P.T @ (op.matrix @ P)).toarray()
    K = 0.5 * (K + K.T)
    d = np.diag(K)
    if np.any(d <= 0):
        bad = np.flatnonzero(d <= 0)
        raise CoercivityError(f"coarse IPDG matrix has non-positive diagonal at {bad[:5].tolist()} "
                              f"for gamma={op.gamma}; increase gamma")
    F = None if f_broken is None else P.T @ np.asarray(f_broken, dtype=float)
    return K, F


def solve_dg_gmsfem(g: GridHierarchy, c: CoeffField, f_broken: np.ndarray, basis: GlobalBasisDG,
                    gamma: float = 8.0, reference: np.ndarray | None = None,
                    op: DGOperator | None = None, redundancy_tol: float = REDUNDANCY_TOL) -> MsSolution:
    """Galerkin solve with ``a_DG`` in the offline space.

    Offline columns restricted from enlarged regions can be dependent;
    such columns are dropped as in the conforming solve (``redundancy_tol=0``
    keeps them all).
    """
    op = op or assemble_dg(g, c, gamma)
    f_broken = np.asarray(f_broken, dtype=float)
    if f_broken.shape != (op.matrix.shape[0],):
        raise InvalidArgument(f"broken load has shape {f_broken.shape}, expected ({op.matrix.shape[0]},)")
    K, F = assemble_global_dg(g, c, basis, op=op, f_broken=f_broken)
    m = K.shape[0]
    keep = linalg.pivoted_cholesky_select(K, redundancy_tol) if redundancy_tol > 0 else np.arange(m)
    coeffs = np.zeros(m)
    if np.any(F):
        try:
            coeffs[keep] = sla.cho_solve(sla.cho_factor(K[np.ix_(keep, keep)]), F[keep])
        except np.linalg.LinAlgError:
            raise CoercivityError(f"coarse IPDG matrix is not positive definite for gamma={op.gamma}; "
                                  "increase gamma") from None
    u = basis.Phi @ coeffs
    dropped = tuple(int(k) for k in np.setdiff1d(np.arange(m), keep))
    e_l2 = e_h1 = np.nan
    if reference is not None and np.any(reference):
        e_l2, e_h1 = error_norms(u, reference, c, g, mode="DG")
    return MsSolution(coeffs, u, m, len(keep), e_l2, e_h1, dropped)


def dg_norm_error(op: DGOperator, u: np.ndarray, ref: np.ndarray) -> float:
    d = u - ref
    return float(np.sqrt((d @ (op.norm @ d)) / (ref @ (op.norm @ ref))))
