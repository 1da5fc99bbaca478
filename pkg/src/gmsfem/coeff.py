"""Cellwise-constant Lamé coefficient fields.

Arrays are stored with shape ``(ny, nx)``: row ``j`` is the j-th row of fine
cells counted from ``y = 0``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, RasterError
from .grid import GridHierarchy

POISSON_RATIO = 0.22


@dataclass(frozen=True, eq=False)
class CoeffField:
    lam: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)

    def __post_init__(self):
        lam = np.ascontiguousarray(self.lam, dtype=float)
        mu = np.ascontiguousarray(self.mu, dtype=float)
        if lam.shape != mu.shape or lam.ndim != 2:
            raise InvalidArgument(f"lambda {lam.shape} and mu {mu.shape} must be equal 2-D arrays")
        for name, a in (("lambda", lam), ("mu", mu)):
            bad = np.flatnonzero(~(a > 0) | ~np.isfinite(a))
            if bad.size:
                raise InvalidArgument(f"{name} must be positive and finite; cell {int(bad[0])} has {a.flat[bad[0]]!r}")
        lam.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)

    @property
    def shape(self) -> tuple[int, int]:
        return self.lam.shape

    @property
    def p_modulus(self) -> np.ndarray:
        """lambda + 2 mu per cell."""
        return self.lam + 2.0 * self.mu

    @property
    def contrast(self) -> float:
        p = self.p_modulus
        return float(p.max() / p.min())

    def check_grid(self, g: GridHierarchy) -> None:
        if self.shape != (g.ny, g.nx):
            raise InvalidArgument(f"coefficient shape {self.shape} does not match fine grid ({g.ny}, {g.nx})")

    def scaled(self, factor: float) -> CoeffField:
        return CoeffField(self.lam * factor, self.mu * factor)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.shape, dtype=np.int64).tobytes())
        h.update(self.lam.tobytes())
        h.update(self.mu.tobytes())
        return h.hexdigest()[:16]


def lame_from_young(E, nu: float = POISSON_RATIO) -> CoeffField:
    E = np.asarray(E, dtype=float)
    if not 0.0 <= nu < 0.5:
        raise InvalidArgument(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    if np.any(~(E > 0)):
        raise InvalidArgument("Young's modulus must be positive everywhere")
    lam = nu / ((1.0 + nu) * (1.0 - 2.0 * nu)) * E
    mu = E / (2.0 * (1.0 + nu))
    return CoeffField(np.atleast_2d(lam), np.atleast_2d(mu))


def constant_field(g: GridHierarchy, lam: float = 1.0, mu: float = 1.0) -> CoeffField:
    return CoeffField(np.full((g.ny, g.nx), float(lam)), np.full((g.ny, g.nx), float(mu)))


def gen_model1_like(g: GridHierarchy, background: float = 1.0, contrast: float = 1e4,
                    seed: int = 0, nu: float = POISSON_RATIO) -> CoeffField:
    """Young's modulus with thin high-modulus channels and isolated inclusions.

    Channels are a few fine cells thick and run across the whole domain in
    both directions; inclusions are small rectangles scattered at random.
    All high cells take exactly ``background * contrast``.
    """
    if contrast < 1:
        raise InvalidArgument(f"contrast must be >= 1, got {contrast}")
    rng = np.random.default_rng(seed)
    nx, ny = g.nx, g.ny
    high = np.zeros((ny, nx), dtype=bool)
    thick = max(1, min(nx, ny) // 50)

    n_channels = max(1, g.ncy // 3)
    for _ in range(n_channels):
        j0 = int(rng.integers(0, ny))
        wiggle = int(rng.integers(1, max(2, g.nf)))
        for i in range(nx):
            jj = (j0 + (wiggle if (i // max(1, g.nf)) % 2 else 0)) % ny
            high[jj:jj + thick, i] = True
    for _ in range(max(1, g.ncx // 4)):
        i0 = int(rng.integers(0, nx))
        high[:, i0:i0 + thick] = True

    n_incl = max(1, (nx * ny) // 200)
    for _ in range(n_incl):
        w = int(rng.integers(1, max(2, thick * 3)))
        hgt = int(rng.integers(1, max(2, thick * 3)))
        i0 = int(rng.integers(0, max(1, nx - w)))
        j0 = int(rng.integers(0, max(1, ny - hgt)))
        high[j0:j0 + hgt, i0:i0 + w] = True

    if contrast > 1:
        # keep both values attained so the contrast is exact
        high[0, 0] = True
        if high.all():
            high[-1, -1] = False
    E = np.where(high, background * contrast, background)
    return lame_from_young(E, nu)


def gen_layered(g: GridHierarchy, lam_range=(1.0, 20.0), mu_range=(0.5, 10.0),
                n_layers: int = 8, seed: int = 0) -> CoeffField:
    """Gently dipping horizontal layers with mild contrast, a stand-in earth model."""
    rng = np.random.default_rng(seed)
    lam_vals = np.sort(rng.uniform(*lam_range, n_layers))
    mu_vals = np.sort(rng.uniform(*mu_range, n_layers))
    y = (np.arange(g.ny) + 0.5) / g.ny
    x = (np.arange(g.nx) + 0.5) / g.nx
    depth = y[:, None] + 0.08 * np.sin(2 * np.pi * x[None, :] * 1.5)
    layer = np.clip((depth * n_layers).astype(int), 0, n_layers - 1)
    return CoeffField(lam_vals[layer], mu_vals[layer])


def save_raster(f: CoeffField, path) -> None:
    """Write ``rows cols`` then all lambda values, then all mu values."""
    rows, cols = f.shape
    with open(path, "w") as fh:
        fh.write(f"{rows} {cols}\n")
        for arr in (f.lam, f.mu):
            for row in arr:
                fh.write(" ".join(repr(float(v)) for v in row))
                fh.write("\n")


def load_raster(path, g: GridHierarchy | None = None) -> CoeffField:
    text = Path(path).read_text()
    lines = text.split("\n", 1)
    head = lines[0].split()
    if len(head) != 2:
        raise RasterError(f"{path}: malformed header {lines[0]!r}, expected 'rows cols'")
    try:
        rows, cols = int(head[0]), int(head[1])
    except ValueError:
        raise RasterError(f"{path}: malformed header {lines[0]!r}") from None
    if rows < 1 or cols < 1:
        raise RasterError(f"{path}: non-positive dimensions {rows}x{cols}")
    if g is not None and (rows, cols) != (g.ny, g.nx):
        raise RasterError(f"{path}: raster is {rows}x{cols} but the fine grid is {g.ny}x{g.nx}")
    try:
        vals = np.array(lines[1].split() if len(lines) > 1 else [], dtype=float)
    except ValueError as exc:
        raise RasterError(f"{path}: {exc}") from None
    n = rows * cols
    if vals.size != 2 * n:
        raise RasterError(f"{path}: expected {2 * n} values, found {vals.size}")
    for name, a in (("lambda", vals[:n]), ("mu", vals[n:])):
        bad = np.flatnonzero(~(a > 0))
        if bad.size:
            k = int(bad[0])
            raise RasterError(f"{path}: {name} must be positive; cell {k} (row {k // cols}, col {k % cols}) is {a[k]!r}")
    return CoeffField(vals[:n].reshape(rows, cols), vals[n:].reshape(rows, cols))
