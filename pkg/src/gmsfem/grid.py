"""Structured two-level grids and the coarse regions built on them.

Fine nodes are numbered lexicographically (x fastest) over the whole domain,
fine cells likewise.  Vector unknowns are interleaved: dof ``2*node + comp``.
Every region used by the method (neighborhoods, blocks and their oversampled
versions) is a rectangle of whole coarse blocks, which keeps all index maps
simple slices of the global numbering.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class GridHierarchy:
    Lx: float
    Ly: float
    ncx: int
    ncy: int
    nf: int

    def __post_init__(self):
        for name in ("ncx", "ncy", "nf"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {v!r}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise InvalidArgument(f"domain extent must be positive, got ({self.Lx}, {self.Ly})")

    # fine level
    @property
    def nx(self) -> int:
        return self.ncx * self.nf

    @property
    def ny(self) -> int:
        return self.ncy * self.nf

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    # coarse level
    @property
    def Hx(self) -> float:
        return self.Lx / self.ncx

    @property
    def Hy(self) -> float:
        return self.Ly / self.ncy

    @property
    def H(self) -> float:
        return max(self.Hx, self.Hy)

    @property
    def n_coarse_nodes(self) -> int:
        return (self.ncx + 1) * (self.ncy + 1)

    @property
    def n_blocks(self) -> int:
        return self.ncx * self.ncy

    @property
    def n_coarse_edges(self) -> int:
        return (self.ncx + 1) * self.ncy + self.ncx * (self.ncy + 1)

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def node_coords(self) -> np.ndarray:
        x = np.arange(self.nx + 1) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def coarse_node_ij(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.n_coarse_nodes:
            raise InvalidArgument(f"coarse node {i} out of range [0, {self.n_coarse_nodes})")
        return i % (self.ncx + 1), i // (self.ncx + 1)

    def block_ij(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.n_blocks:
            raise InvalidArgument(f"coarse block {k} out of range [0, {self.n_blocks})")
        return k % self.ncx, k // self.ncx

    def cell_block(self) -> np.ndarray:
        """Coarse block id of every fine cell."""
        ci = np.arange(self.nx) // self.nf
        cj = np.arange(self.ny) // self.nf
        return (cj[:, None] * self.ncx + ci[None, :]).ravel()

    def boundary_nodes(self) -> np.ndarray:
        """Fine nodes on the domain boundary, ascending."""
        nx, ny = self.nx, self.ny
        mask = np.zeros((ny + 1, nx + 1), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return np.flatnonzero(mask.ravel())

    def dirichlet_dofs(self) -> np.ndarray:
        b = self.boundary_nodes()
        return np.column_stack([2 * b, 2 * b + 1]).ravel()

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.dirichlet_dofs()] = False
        return np.flatnonzero(mask)

    def whole(self) -> Region:
        return _rect_region(self, RegionKind.DOMAIN, 0, 0, self.ncx, 0, self.ncy)

    def key(self) -> str:
        return f"grid({self.Lx!r},{self.Ly!r},{self.ncx},{self.ncy},{self.nf})"


def build_grid(Lx: float, Ly: float, ncx: int, ncy: int, nf: int) -> GridHierarchy:
    return GridHierarchy(float(Lx), float(Ly), ncx, ncy, nf)


class RegionKind(str, enum.Enum):
    NEIGHBORHOOD = "neighborhood"
    BLOCK = "block"
    OVERSAMPLED_NEIGHBORHOOD = "oversampled_neighborhood"
    OVERSAMPLED_BLOCK = "oversampled_block"
    DOMAIN = "domain"


_OVERSAMPLED = {
    RegionKind.NEIGHBORHOOD: RegionKind.OVERSAMPLED_NEIGHBORHOOD,
    RegionKind.BLOCK: RegionKind.OVERSAMPLED_BLOCK,
}


@dataclass(frozen=True, eq=False)
class Region:
    """A rectangle of coarse blocks ``[bx0, bx1) x [by0, by1)``."""

    kind: RegionKind
    owner: int
    bx0: int
    bx1: int
    by0: int
    by1: int
    nf: int
    nodes: np.ndarray = field(repr=False)
    boundary_nodes: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    layers: int = 0

    @property
    def n_cells_x(self) -> int:
        return (self.bx1 - self.bx0) * self.nf

    @property
    def n_cells_y(self) -> int:
        return (self.by1 - self.by0) * self.nf

    @property
    def node_shape(self) -> tuple[int, int]:
        return self.n_cells_y + 1, self.n_cells_x + 1

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    @property
    def blocks_x(self) -> range:
        return range(self.bx0, self.bx1)

    @property
    def blocks_y(self) -> range:
        return range(self.by0, self.by1)

    def block_ids(self, ncx: int) -> list[int]:
        return [by * ncx + bx for by in self.blocks_y for bx in self.blocks_x]

    @cached_property
    def dofs(self) -> np.ndarray:
        """Local-to-global dof map (interleaved components)."""
        return interleave(self.nodes)

    @cached_property
    def boundary_local(self) -> np.ndarray:
        """Positions of the boundary nodes inside ``nodes``."""
        return np.searchsorted(self.nodes, self.boundary_nodes)

    @cached_property
    def interior_local(self) -> np.ndarray:
        mask = np.ones(len(self.nodes), dtype=bool)
        mask[self.boundary_local] = False
        return np.flatnonzero(mask)

    def cell_slices(self) -> tuple[slice, slice]:
        """(row, col) slices into a ``(ny, nx)`` cell array."""
        nf = self.nf
        return slice(self.by0 * nf, self.by1 * nf), slice(self.bx0 * nf, self.bx1 * nf)

    def same_rect(self, other: Region) -> bool:
        return (self.bx0, self.bx1, self.by0, self.by1) == (other.bx0, other.bx1, other.by0, other.by1)


def interleave(nodes: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes)
    return np.column_stack([2 * nodes, 2 * nodes + 1]).ravel()


def _rect_region(g: GridHierarchy, kind, owner, bx0, bx1, by0, by1, layers=0) -> Region:
    nf = g.nf
    i = np.arange(bx0 * nf, bx1 * nf + 1)
    j = np.arange(by0 * nf, by1 * nf + 1)
    nodes = (j[:, None] * (g.nx + 1) + i[None, :])
    bmask = np.zeros(nodes.shape, dtype=bool)
    bmask[0, :] = bmask[-1, :] = bmask[:, 0] = bmask[:, -1] = True
    ci = np.arange(bx0 * nf, bx1 * nf)
    cj = np.arange(by0 * nf, by1 * nf)
    cells = (cj[:, None] * g.nx + ci[None, :]).ravel()
    return Region(kind, owner, bx0, bx1, by0, by1, nf,
                  nodes.ravel(), nodes[bmask], cells, layers)


def neighborhood(g: GridHierarchy, i: int) -> Region:
    """The union of coarse blocks sharing coarse node ``i``."""
    ci, cj = g.coarse_node_ij(i)
    bx0, bx1 = max(ci - 1, 0), min(ci, g.ncx - 1) + 1
    by0, by1 = max(cj - 1, 0), min(cj, g.ncy - 1) + 1
    return _rect_region(g, RegionKind.NEIGHBORHOOD, i, bx0, bx1, by0, by1)


def block(g: GridHierarchy, k: int) -> Region:
    bx, by = g.block_ij(k)
    return _rect_region(g, RegionKind.BLOCK, k, bx, bx + 1, by, by + 1)


def oversample(g: GridHierarchy, r: Region, layers: int = 1) -> Region:
    """Grow ``r`` by ``layers`` rings of coarse blocks, clipped at the domain boundary."""
    if layers < 0:
        raise InvalidArgument(f"layers must be >= 0, got {layers}")
    if layers == 0:
        return r
    kind = _OVERSAMPLED.get(r.kind, r.kind)
    return _rect_region(
        g, kind, r.owner,
        max(r.bx0 - layers, 0), min(r.bx1 + layers, g.ncx),
        max(r.by0 - layers, 0), min(r.by1 + layers, g.ncy),
        layers=r.layers + layers,
    )


def restriction_nodes(outer: Region, inner: Region) -> np.ndarray:
    """Local node positions in ``outer`` of every node of ``inner``."""
    pos = np.searchsorted(outer.nodes, inner.nodes)
    if np.any(pos >= len(outer.nodes)) or np.any(outer.nodes[np.minimum(pos, len(outer.nodes) - 1)] != inner.nodes):
        raise InvalidArgument("inner region is not contained in outer region")
    return pos


def restriction_dofs(outer: Region, inner: Region) -> np.ndarray:
    return interleave(restriction_nodes(outer, inner))
