"""Per-region snapshot spaces.

Type 1 takes every fine function on the region; type 2 takes the discrete
harmonic extensions of fine-grid boundary deltas.  Columns live in the
region's local dof numbering.  Type 2 columns are ordered by boundary node
(ascending local index) and, within a node, component 1 then component 2.
"""
from __future__ import annotations

import enum
import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import linalg
from .coeff import CoeffField
from .errors import InvalidArgument, NumericalError
from .fem import assemble_stiffness, region_boundary_dofs
from .grid import GridHierarchy, Region, oversample, restriction_dofs

RANK_TOL = 1e-10
_MAGIC = b"GMSNAP01"


class SnapshotKind(str, enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"


@dataclass(frozen=True, eq=False)
class SnapshotSpace:
    """Snapshot columns on ``region``.

    For oversampled spaces ``outer`` is the enlarged region,
    ``outer_columns`` holds the snapshots there (R+_snap) and ``columns``
    their restrictions to ``region`` (R_snap), with the same column order.
    ``dropped`` lists column positions removed by the rank filter.
    """

    region: Region
    kind: SnapshotKind
    columns: np.ndarray = field(repr=False)
    outer: Region | None = None
    outer_columns: np.ndarray | None = field(default=None, repr=False)
    dropped: tuple[int, ...] = ()

    def __post_init__(self):
        if self.columns.shape[0] != self.region.n_dofs:
            raise InvalidArgument(f"snapshot columns have {self.columns.shape[0]} rows, "
                                  f"region has {self.region.n_dofs} dofs")
        if self.outer is not None and self.outer_columns.shape != (self.outer.n_dofs, self.columns.shape[1]):
            raise InvalidArgument("outer snapshot columns do not match the outer region")

    @property
    def n_snap(self) -> int:
        return self.columns.shape[1]

    @property
    def oversampled(self) -> bool:
        return self.outer is not None

    @property
    def layers(self) -> int:
        return self.outer.layers if self.outer is not None else 0


def snapshots_type1(g: GridHierarchy, c: CoeffField, r: Region) -> SnapshotSpace:
    return SnapshotSpace(r, SnapshotKind.TYPE1, np.eye(r.n_dofs))


def harmonic_columns(A: sp.spmatrix, r: Region) -> np.ndarray:
    """Discrete harmonic extensions of every boundary delta of ``r``."""
    bd, idf = region_boundary_dofs(r)
    if len(bd) == 0:
        raise InvalidArgument("region has no boundary nodes")
    A = sp.csr_matrix(A)
    S = np.zeros((r.n_dofs, len(bd)))
    S[bd, np.arange(len(bd))] = 1.0
    if len(idf):
        try:
            solve = linalg.factorize(A[idf][:, idf])
        except RuntimeError as exc:
            raise NumericalError(f"interior solve failed on {r.kind.value} {r.owner}: {exc}") from None
        S[idf] = -solve(A[idf][:, bd].toarray())
    return S


def snapshots_type2(g: GridHierarchy, c: CoeffField, r: Region, cache_dir=None) -> SnapshotSpace:
    cols = _cached(g, c, r, SnapshotKind.TYPE2, cache_dir,
                   lambda: harmonic_columns(assemble_stiffness(g, c, r).stiffness, r))
    return SnapshotSpace(r, SnapshotKind.TYPE2, cols)


def snapshots_oversampled(g: GridHierarchy, c: CoeffField, r: Region, layers: int = 1,
                          kind: SnapshotKind = SnapshotKind.TYPE2, rank_tol: float = 0.0,
                          cache_dir=None) -> SnapshotSpace:
    """Snapshots computed on the enlarged region and restricted to ``r``.

    With ``rank_tol > 0`` (e.g. :data:`RANK_TOL`), restricted columns that
    are numerically dependent (relative Gram pivot below ``rank_tol``) are
    removed from both matrices.  The default keeps every column: dropping
    enlarged-region columns also removes enlarged-region rigid motions from
    the span.  ``kind=TYPE1`` is the identity on the enlarged region and is
    experimental.
    """
    if layers < 0:
        raise InvalidArgument(f"layers must be >= 0, got {layers}")
    kind = SnapshotKind(kind)
    rp = oversample(g, r, layers)
    if kind is SnapshotKind.TYPE1:
        outer = np.eye(rp.n_dofs)
    else:
        outer = _cached(g, c, rp, kind, cache_dir,
                        lambda: harmonic_columns(assemble_stiffness(g, c, rp).stiffness, rp))
    inner = outer[restriction_dofs(rp, r)]
    if rank_tol <= 0:
        return SnapshotSpace(r, kind, inner, rp, outer)
    keep = linalg.pivoted_cholesky_select(inner.T @ inner, rank_tol)
    dropped = tuple(int(k) for k in np.setdiff1d(np.arange(inner.shape[1]), keep))
    return SnapshotSpace(r, kind, inner[:, keep], rp, outer[:, keep], dropped)


# ---------------------------------------------------------------- disk cache

def cache_key(g: GridHierarchy, c: CoeffField, r: Region, kind: SnapshotKind) -> str:
    h = hashlib.sha256()
    h.update(g.key().encode())
    h.update(c.digest().encode())
    h.update(f"{r.bx0},{r.bx1},{r.by0},{r.by1}|{SnapshotKind(kind).value}".encode())
    return h.hexdigest()[:24]


def write_columns(path, cols: np.ndarray) -> None:
    """Header (magic, rows, cols) then float64 values in column-major order."""
    cols = np.asarray(cols, dtype="<f8")
    tmp = Path(f"{path}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qq", *cols.shape))
        fh.write(np.asfortranarray(cols).tobytes(order="F"))
    os.replace(tmp, path)


def read_columns(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise NumericalError(f"{path}: not a snapshot cache file")
        rows, ncol = struct.unpack("<qq", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * ncol:
        raise NumericalError(f"{path}: truncated snapshot cache ({data.size} of {rows * ncol} values)")
    return data.reshape((rows, ncol), order="F").copy()


def _cached(g, c, r, kind, cache_dir, compute):
    if cache_dir is None:
        return compute()
    d = Path(cache_dir)
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"snap_{cache_key(g, c, r, kind)}.bin"
    if path.exists():
        cols = read_columns(path)
        if cols.shape[0] == r.n_dofs:
            return cols
    cols = compute()
    write_columns(path, cols)
    return cols
