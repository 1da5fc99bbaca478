"""Local spectral problems, partitions of unity and offline spaces."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .coeff import CoeffField
from .errors import InvalidArgument, NumericalError
from .fem import GAUSS2, assemble_stiffness, region_boundary_dofs, weighted_mass
from .grid import GridHierarchy, Region, RegionKind, block, neighborhood, restriction_nodes
from .snapshot import SnapshotSpace


class PouKind(str, enum.Enum):
    BILINEAR = "bilinear"
    MULTISCALE = "multiscale"


class Variant(str, enum.Enum):
    CG = "CG"
    DG = "DG"
    CG16 = "CG16"
    CG17 = "CG17"
    DG18 = "DG18"
    DG19 = "DG19"

    @property
    def coupling(self) -> str:
        return self.value[:2]

    @property
    def oversampled(self) -> bool:
        return len(self.value) > 2


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """``values[i]`` holds chi_i on the nodes of ``regions[i]`` (the neighborhood of node i)."""

    kind: PouKind
    regions: list[Region] = field(repr=False)
    values: list[np.ndarray] = field(repr=False)
    n_nodes: int

    def total(self) -> np.ndarray:
        s = np.zeros(self.n_nodes)
        for r, v in zip(self.regions, self.values):
            s[r.nodes] += v
        return s

    def on_region(self, i: int, r: Region) -> np.ndarray:
        """chi_i on the nodes of ``r``, zero outside its support."""
        full = np.zeros(self.n_nodes)
        full[self.regions[i].nodes] = self.values[i]
        return full[r.nodes]


def _hat_1d(idx: np.ndarray, centre: int, nf: int) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(idx - centre) / nf)


def _hat_on(g: GridHierarchy, i: int, r: Region) -> np.ndarray:
    ci, cj = g.coarse_node_ij(i)
    ix = r.nodes % (g.nx + 1)
    iy = r.nodes // (g.nx + 1)
    return _hat_1d(ix, ci * g.nf, g.nf) * _hat_1d(iy, cj * g.nf, g.nf)


def pou_bilinear(g: GridHierarchy) -> PartitionOfUnity:
    regions = [neighborhood(g, i) for i in range(g.n_coarse_nodes)]
    values = [_hat_on(g, i, r) for i, r in enumerate(regions)]
    return PartitionOfUnity(PouKind.BILINEAR, regions, values, g.n_nodes)


def _block_corners(g: GridHierarchy, k: int) -> list[int]:
    bx, by = g.block_ij(k)
    n = g.ncx + 1
    return [by * n + bx, by * n + bx + 1, (by + 1) * n + bx, (by + 1) * n + bx + 1]


def pou_multiscale(g: GridHierarchy, c: CoeffField) -> PartitionOfUnity:
    """First component of the elasticity-harmonic extension of ``(Phi_i, 0)`` in each block.

    Three corners are solved for; the fourth follows from superposition,
    since the extension of the summed data ``(1, 0)`` is ``(1, 0)`` itself.
    """
    regions = [neighborhood(g, i) for i in range(g.n_coarse_nodes)]
    values = [np.zeros(r.n_nodes) for r in regions]
    for k in range(g.n_blocks):
        K = block(g, k)
        A = assemble_stiffness(g, c, K).stiffness
        bd, idf = region_boundary_dofs(K)
        corners = _block_corners(g, k)
        data = np.zeros((K.n_dofs, 4))
        for col, i in enumerate(corners):
            data[0::2, col] = _hat_on(g, i, K)
        X = data.copy()
        X[idf] = 0.0
        if len(idf):
            try:
                solve = linalg.factorize(A[idf][:, idf])
            except RuntimeError as exc:
                raise NumericalError(f"multiscale partition of unity: solve failed in block {k}: {exc}") from None
            X[idf, :3] = -solve(A[idf][:, bd] @ data[bd, :3])
            # the four extensions sum to the rigid translation (1, 0); using
            # that identity for the last corner keeps the partition exact
            X[idf, 3] = -X[idf, :3].sum(axis=1)
            X[idf[0::2], 3] += 1.0
        for col, i in enumerate(corners):
            values[i][restriction_nodes(regions[i], K)] = X[0::2, col]
    return PartitionOfUnity(PouKind.MULTISCALE, regions, values, g.n_nodes)


def build_pou(g: GridHierarchy, c: CoeffField, kind) -> PartitionOfUnity:
    kind = PouKind(kind)
    return pou_bilinear(g) if kind is PouKind.BILINEAR else pou_multiscale(g, c)


def _grad_sq_cells(v: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Mean over 2x2 Gauss points of |grad v|^2 per cell for nodal values ``v`` (ny+1, nx+1)."""
    v00, v10 = v[:-1, :-1], v[:-1, 1:]
    v01, v11 = v[1:, :-1], v[1:, 1:]
    out = np.zeros(v00.shape)
    for t in 0.5 * (GAUSS2 + 1.0):
        for s in 0.5 * (GAUSS2 + 1.0):
            gx = ((1 - t) * (v10 - v00) + t * (v11 - v01)) / hx
            gy = ((1 - s) * (v01 - v00) + s * (v11 - v10)) / hy
            out += 0.25 * (gx ** 2 + gy ** 2)
    return out


def weight_kappa_tilde(g: GridHierarchy, c: CoeffField, pou: PartitionOfUnity) -> np.ndarray:
    """Cellwise ``sum_i (lambda + 2 mu) |grad chi_i|^2``, shape (ny, nx)."""
    c.check_grid(g)
    acc = np.zeros((g.ny, g.nx))
    for r, v in zip(pou.regions, pou.values):
        rs, cs = r.cell_slices()
        acc[rs, cs] += _grad_sq_cells(v.reshape(r.node_shape), g.hx, g.hy)
    return c.p_modulus * acc


# ---------------------------------------------------------------- pencils

@dataclass(frozen=True, eq=False)
class Pencil:
    """Dense pencil ``A x = xi B x`` in snapshot coordinates."""

    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    variant: Variant
    region: Region
    semidefinite: bool = False


def boundary_segments(g: GridHierarchy, c: CoeffField, r: Region):
    """Fine segments on the boundary of ``r``.

    Returns local node pairs (a, b), segment lengths and the average of
    lambda + 2 mu over the cells on both sides (one side on the domain boundary).
    """
    p = c.p_modulus
    ny1, nx1 = r.node_shape
    nf = g.nf
    r0, c0 = r.by0 * nf, r.bx0 * nf
    r1, c1 = r.by1 * nf, r.bx1 * nf
    a_all, b_all, ln, kap = [], [], [], []

    def add(a, b, length, inside, outside):
        a_all.append(a)
        b_all.append(b)
        ln.append(np.full(len(a), length))
        kap.append(inside if outside is None else 0.5 * (inside + outside))

    i = np.arange(nx1 - 1)
    j = np.arange(ny1 - 1)
    add(i, i + 1, g.hx, p[r0, c0 + i], p[r0 - 1, c0 + i] if r0 > 0 else None)
    top = (ny1 - 1) * nx1
    add(top + i, top + i + 1, g.hx, p[r1 - 1, c0 + i], p[r1, c0 + i] if r1 < g.ny else None)
    add(j * nx1, (j + 1) * nx1, g.hy, p[r0 + j, c0], p[r0 + j, c0 - 1] if c0 > 0 else None)
    right = nx1 - 1
    add(j * nx1 + right, (j + 1) * nx1 + right, g.hy, p[r0 + j, c1 - 1], p[r0 + j, c1] if c1 < g.nx else None)
    return np.concatenate(a_all), np.concatenate(b_all), np.concatenate(ln), np.concatenate(kap)


def boundary_mass(g: GridHierarchy, r: Region, a, b, length, weight=None) -> sp.csr_matrix:
    """Consistent linear-edge mass on the given boundary segments (vector valued)."""
    w = length if weight is None else length * weight
    rows, cols, vals = [], [], []
    for comp in range(2):
        ia = 2 * a + comp
        ib = 2 * b + comp
        rows += [ia, ib, ia, ib]
        cols += [ia, ib, ib, ia]
        vals += [w / 3.0, w / 3.0, w / 6.0, w / 6.0]
    n = r.n_dofs
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _check_snap(snap: SnapshotSpace, r: Region):
    if snap.region.n_dofs != r.n_dofs or not snap.region.same_rect(r):
        raise InvalidArgument(f"snapshot space lives on a different region than {r.kind.value} {r.owner}")


def spectral_cg(g: GridHierarchy, c: CoeffField, omega: Region, snap: SnapshotSpace,
                pou: PartitionOfUnity | None = None, kappa: np.ndarray | None = None) -> Pencil:
    """Stiffness on the neighborhood against the kappa-tilde weighted mass."""
    _check_snap(snap, omega)
    if kappa is None:
        if pou is None:
            raise InvalidArgument("spectral_cg needs a partition of unity or a kappa-tilde field")
        kappa = weight_kappa_tilde(g, c, pou)
    S = snap.columns
    A = linalg.triple_product(S, assemble_stiffness(g, c, omega).stiffness)
    M = linalg.triple_product(S, weighted_mass(g, kappa, omega))
    return Pencil(A, M, Variant.CG, omega)


def dg_boundary_scale(g: GridHierarchy, c: CoeffField, r: Region) -> float:
    """max of the edge-averaged lambda + 2 mu on the boundary of ``r``, divided by H."""
    *_, kap = boundary_segments(g, c, r)
    return float(kap.max()) / g.H


def _dg_boundary_matrix(g, c, r):
    a, b, ln, _ = boundary_segments(g, c, r)
    return dg_boundary_scale(g, c, r) * boundary_mass(g, r, a, b, ln)


def spectral_dg(g: GridHierarchy, c: CoeffField, K: Region, snap: SnapshotSpace) -> Pencil:
    """Block stiffness against the scaled boundary mass."""
    _check_snap(snap, K)
    S = snap.columns
    A = linalg.triple_product(S, assemble_stiffness(g, c, K).stiffness)
    B = linalg.triple_product(S, _dg_boundary_matrix(g, c, K))
    return Pencil(A, B, Variant.DG, K, semidefinite=True)


def spectral_oversampled(variant, g: GridHierarchy, c: CoeffField, snap: SnapshotSpace,
                         kappa: np.ndarray | None = None) -> Pencil:
    """Pencils computed with the enlarged-region snapshots.

    CG16: stiffness on the neighborhood (restricted columns) against the
    kappa-tilde mass on the enlarged region.  CG17: both on the enlarged
    region.  DG18: enlarged-block stiffness against the volume mass
    ``(1/H) (lambda + 2 mu)``.  DG19: against the scaled boundary mass of
    the enlarged block.
    """
    variant = Variant(variant)
    if not variant.oversampled:
        raise InvalidArgument(f"{variant.value} is not an oversampling variant")
    if snap.outer is None:
        raise InvalidArgument("oversampled pencil needs snapshots with enlarged-region columns")
    expected = RegionKind.NEIGHBORHOOD if variant.coupling == "CG" else RegionKind.BLOCK
    if snap.region.kind is not expected:
        raise InvalidArgument(f"{variant.value} needs snapshots on a {expected.value}, got {snap.region.kind.value}")
    rp, Sp = snap.outer, snap.outer_columns
    Ap = assemble_stiffness(g, c, rp).stiffness
    if variant.coupling == "CG":
        if kappa is None:
            raise InvalidArgument(f"{variant.value} needs the kappa-tilde field")
        M = linalg.triple_product(Sp, weighted_mass(g, kappa, rp))
        if variant is Variant.CG16:
            S = snap.columns
            raw = S.T @ np.asarray(assemble_stiffness(g, c, snap.region).stiffness @ S)
            linalg.sym_check(raw, 1e-10, "CG16 stiffness")
            A = 0.5 * (raw + raw.T)
        else:
            A = linalg.triple_product(Sp, Ap)
        return Pencil(A, M, variant, snap.region)
    A = linalg.triple_product(Sp, Ap)
    if variant is Variant.DG18:
        B = linalg.triple_product(Sp, weighted_mass(g, c.p_modulus / g.H, rp))
        return Pencil(A, B, variant, snap.region)
    B = linalg.triple_product(Sp, _dg_boundary_matrix(g, c, rp))
    return Pencil(A, B, variant, snap.region, semidefinite=True)


# ---------------------------------------------------------------- offline spaces

@dataclass(frozen=True, eq=False)
class Spectrum:
    """Solved pencil: ascending eigenvalues (``inf`` for modes with no mass) and eigenvectors."""

    xi: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    variant: Variant
    region: Region

    @property
    def n_finite(self) -> int:
        return int(np.isfinite(self.xi).sum())

    def count_below(self, tau: float) -> int:
        return int(np.sum(self.xi < tau))


def solve_pencil(p: Pencil, keep_infinite: bool = False) -> Spectrum:
    xi, V = linalg.eig_gen_sym(p.A, p.B, semidefinite_ok=True, keep_infinite=keep_infinite)
    return Spectrum(xi, V, p.variant, p.region)


@dataclass(frozen=True, eq=False)
class OfflineSpace:
    region: Region
    variant: Variant
    eigenvalues: np.ndarray = field(repr=False)
    columns: np.ndarray = field(repr=False)
    L: int
    lambda_star: float

    def truncate(self, L: int) -> OfflineSpace:
        """The nested space spanned by the first ``L`` columns."""
        if not 0 <= L <= self.L:
            raise InvalidArgument(f"cannot truncate an offline space of size {self.L} to {L}")
        lam_star = float(self.eigenvalues[L]) if L < len(self.eigenvalues) else np.inf
        return OfflineSpace(self.region, self.variant, self.eigenvalues, self.columns[:, :L], L, lam_star)


def build_offline(spectrum: Spectrum, snap: SnapshotSpace, L: int,
                  chi: np.ndarray | None = None) -> OfflineSpace:
    """First ``L`` eigenvectors mapped to fine coordinates on the base region.

    ``chi`` (nodal values on the region) multiplies every column, as the
    conforming coupling requires.  ``lambda_star`` is the (L+1)-th eigenvalue.
    """
    n = len(spectrum.xi)
    if not 0 <= L <= n:
        raise InvalidArgument(f"L={L} outside [0, {n}] for {spectrum.region.kind.value} {spectrum.region.owner}")
    cols = snap.columns @ spectrum.vectors[:, :L]
    if chi is not None:
        chi = np.asarray(chi, dtype=float)
        if chi.shape != (snap.region.n_nodes,):
            raise InvalidArgument(f"partition of unity has {chi.shape} values, region has {snap.region.n_nodes} nodes")
        cols = np.repeat(chi, 2)[:, None] * cols
    lam_star = float(spectrum.xi[L]) if L < n else np.inf
    return OfflineSpace(snap.region, spectrum.variant, spectrum.xi, cols, L, lam_star)
