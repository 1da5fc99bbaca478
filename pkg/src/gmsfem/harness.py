"""Experiment driver: configuration, the offline/online pipeline and result tables."""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import fem, snapshot, spectral
from .coeff import CoeffField, constant_field, gen_layered, gen_model1_like, load_raster, save_raster
from .coupling_cg import assemble_global_cg, solve_cg_gmsfem
from .coupling_dg import global_basis_dg, solve_dg_gmsfem
from .errors import ConfigError, ExperimentError, GMsFEMError, InvalidArgument
from .grid import GridHierarchy, block, build_grid, neighborhood
from .spectral import OfflineSpace, Variant

log = logging.getLogger(__name__)

CACHE_ENV = "GMSFEM_CACHE_DIR"
CSV_COLUMNS = ("dimension", "inv_lambda_star", "e_L2", "e_H1")

_CHOICES = {
    "coupling": ("CG", "DG"),
    "snapshots": ("harmonic", "all"),
    "pou": ("bilinear", "multiscale"),
    "source": ("model1", "layered", "constant", "raster"),
    "penalty_h": ("fine", "coarse"),
    "dg_flux": ("pointwise", "schur"),
    "fine_solver": ("direct", "pcg"),
}

# ini section of every config field
_SECTIONS = {
    "grid": ("Lx", "Ly", "ncx", "ncy", "nf"),
    "coefficients": ("source", "background", "contrast", "poisson", "lam", "mu", "raster", "seed"),
    "method": ("coupling", "snapshots", "pou", "layers", "variant", "rank_tol", "basis", "thresholds",
               "gamma", "penalty_h", "dg_flux", "force"),
    "solver": ("fine_solver", "tol", "threads"),
    "output": ("dir", "rasters", "name"),
}
_ALIASES = {"dir": "output_dir"}


@dataclass(frozen=True)
class ExperimentConfig:
    Lx: float = 1.0
    Ly: float = 1.0
    ncx: int = 10
    ncy: int = 10
    nf: int = 10
    source: str = "model1"
    background: float = 1.0
    contrast: float = 1e4
    poisson: float = 0.22
    lam: float = 1.0
    mu: float = 1.0
    raster: str | None = None
    seed: int = 0
    coupling: str = "CG"
    snapshots: str = "harmonic"
    pou: str = "multiscale"
    layers: int = 0
    variant: str | None = None
    rank_tol: float | None = None
    basis: tuple[int, ...] = (4, 5, 6, 7, 8)
    thresholds: tuple[float, ...] = ()
    gamma: float = 8.0
    penalty_h: str = "fine"
    dg_flux: str = "pointwise"
    force: tuple[float, float] = (1.0, 1.0)
    fine_solver: str = "direct"
    tol: float = 1e-10
    threads: int = 1
    output_dir: str = "out"
    rasters: bool = False
    name: str = "experiment"

    def __post_init__(self):
        for key, allowed in _CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(key, f"must be one of {', '.join(allowed)}, got {getattr(self, key)!r}")
        for key in ("ncx", "ncy", "nf", "threads"):
            if getattr(self, key) < 1:
                raise ConfigError(key, f"must be >= 1, got {getattr(self, key)}")
        for key in ("Lx", "Ly", "background", "gamma", "lam", "mu", "tol"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, f"must be positive, got {getattr(self, key)}")
        if self.contrast < 1:
            raise ConfigError("contrast", f"must be >= 1, got {self.contrast}")
        if not 0 <= self.poisson < 0.5:
            raise ConfigError("poisson", f"must lie in [0, 0.5), got {self.poisson}")
        if self.source == "raster" and not self.raster:
            raise ConfigError("raster", "source = raster needs a raster path")
        if self.layers < 0:
            raise ConfigError("layers", f"must be >= 0, got {self.layers}")
        if self.rank_tol is not None and not 0 <= self.rank_tol < 1:
            raise ConfigError("rank_tol", f"must lie in [0, 1), got {self.rank_tol}")
        if self.layers > 0:
            if self.variant is None:
                raise ConfigError("variant", "oversampling needs a variant (CG16, CG17, DG18 or DG19)")
            try:
                v = Variant(self.variant)
            except ValueError:
                raise ConfigError("variant", f"unknown variant {self.variant!r}") from None
            if not v.oversampled:
                raise ConfigError("variant", f"{self.variant} is not an oversampling variant")
            if v.coupling != self.coupling:
                raise ConfigError("variant", f"{self.variant} does not match coupling = {self.coupling}")
        elif self.variant is not None:
            raise ConfigError("variant", "a variant is only meaningful with layers >= 1")
        if self.thresholds:
            if self.basis:
                raise ConfigError("thresholds", "give either basis or thresholds, not both")
            if list(self.thresholds) != sorted(self.thresholds) or min(self.thresholds) <= 0:
                raise ConfigError("thresholds", "must be positive and ascending")
        else:
            if not self.basis:
                raise ConfigError("basis", "the basis list is empty")
            if any(b < 1 for b in self.basis):
                raise ConfigError("basis", "basis counts must be >= 1")
            if any(b >= a for a, b in zip(self.basis[1:], self.basis)):
                raise ConfigError("basis", "basis counts must be strictly ascending")

    @property
    def spectral_variant(self) -> Variant:
        return Variant(self.variant) if self.layers > 0 else Variant(self.coupling)

    def grid(self) -> GridHierarchy:
        return build_grid(self.Lx, self.Ly, self.ncx, self.ncy, self.nf)

    def coefficients(self, g: GridHierarchy) -> CoeffField:
        if self.source == "model1":
            return gen_model1_like(g, self.background, self.contrast, self.seed, self.poisson)
        if self.source == "layered":
            return gen_layered(g, seed=self.seed)
        if self.source == "constant":
            return constant_field(g, self.lam, self.mu)
        return load_raster(self.raster, g)


def _parse_value(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if key in ("basis",):
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if key in ("thresholds",):
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if key == "force":
            vals = tuple(float(v) for v in raw.replace(",", " ").split())
            if len(vals) != 2:
                raise ValueError("expected two components")
            return vals
        if key == "rasters":
            low = raw.lower()
            if low not in ("yes", "no", "true", "false", "1", "0", "on", "off"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("yes", "true", "1", "on")
        if key in ("variant", "raster"):
            return raw or None
        if key == "rank_tol":
            return float(raw) if raw else None
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    """Read an ini-style experiment file; unknown sections or keys are rejected."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc)) from None
    if not read:
        raise ConfigError("file", f"cannot read {path}")
    return config_from_mapping({s: dict(cp[s]) for s in cp.sections()}, base=Path(path).parent)


def config_from_mapping(sections: dict, base: Path | None = None) -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kinds = {k: (int if "int" in str(t) and "tuple" not in str(t) else
                 float if "float" in str(t) and "tuple" not in str(t) else str) for k, t in types.items()}
    values = {}
    for sec, items in sections.items():
        if sec not in _SECTIONS:
            raise ConfigError(sec, "unknown section")
        for key, raw in items.items():
            if key not in _SECTIONS[sec]:
                raise ConfigError(f"{sec}.{key}", "unknown key")
            name = _ALIASES.get(key, key)
            values[name] = _parse_value(name, str(raw), kinds[name])
    if "thresholds" in values and "basis" not in values:
        values["basis"] = ()
    if base is not None and values.get("raster"):
        p = Path(values["raster"])
        values["raster"] = str(p if p.is_absolute() else base / p)
    return ExperimentConfig(**values)


# ---------------------------------------------------------------- results

@dataclass(frozen=True)
class ResultRow:
    dimension: int
    inv_lambda_star: float
    e_L2: float
    e_H1: float
    L: int | float = 0
    t_snapshot: float = field(default=0.0, compare=False)
    t_spectral: float = field(default=0.0, compare=False)
    t_solve: float = field(default=0.0, compare=False)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[ResultRow]
    files: dict[str, Path] = field(default_factory=dict)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isinf(v):
        return "inf"
    return f"{v:.10e}"


def emit_table(rows: list[ResultRow], paired: list[ResultRow] | None = None):
    """CSV text and an aligned text table.

    With ``paired`` (the oversampled run), the text table puts the two runs
    side by side: dimension, then 1/Lambda*, e_L2 and e_H1 each as a
    without/with pair.  The CSV always holds ``rows`` alone.
    """
    if not rows:
        raise InvalidArgument("no result rows to emit")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, k)) for k in CSV_COLUMNS])
    if paired is None:
        head = ["dimension", "1/Lambda*", "e_L2", "e_H1"]
        body = [[str(r.dimension), f"{r.inv_lambda_star:.1e}", f"{r.e_L2:.3f}", f"{r.e_H1:.3f}"] for r in rows]
    else:
        if len(paired) != len(rows):
            raise InvalidArgument(f"paired runs differ in length ({len(rows)} vs {len(paired)})")
        head = ["dimension", "1/Lambda* (w/o)", "1/Lambda* (with)", "e_L2 (w/o)", "e_L2 (with)",
                "e_H1 (w/o)", "e_H1 (with)"]
        body = [[str(a.dimension), f"{a.inv_lambda_star:.1e}", f"{b.inv_lambda_star:.1e}",
                 f"{a.e_L2:.3f}", f"{b.e_L2:.3f}", f"{a.e_H1:.3f}", f"{b.e_H1:.3f}"]
                for a, b in zip(rows, paired)]
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(head)]
    lines = ["  ".join(h.rjust(wd) for h, wd in zip(head, widths))]
    lines.append("  ".join("-" * wd for wd in widths))
    lines += ["  ".join(v.rjust(wd) for v, wd in zip(r, widths)) for r in body]
    return buf.getvalue(), "\n".join(lines) + "\n"


def emit_plotdata(rows: list[ResultRow]) -> str:
    """Whitespace-separated series: L, dimension, e_L2, e_H1, 1/Lambda*."""
    if not rows:
        raise InvalidArgument("no result rows to emit")
    out = ["# L dimension e_L2 e_H1 inv_lambda_star"]
    out += [" ".join(_fmt(v) for v in (r.L, r.dimension, r.e_L2, r.e_H1, r.inv_lambda_star)) for r in rows]
    return "\n".join(out) + "\n"


def read_csv_rows(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(rd.fieldnames or ())
        if missing:
            raise InvalidArgument(f"{path}: missing columns {sorted(missing)}")
        return [ResultRow(int(r["dimension"]), float(r["inv_lambda_star"]), float(r["e_L2"]), float(r["e_H1"]))
                for r in rd]


# ---------------------------------------------------------------- pipeline

def _cache_dir() -> Path | None:
    d = os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def _reference_key(cfg: ExperimentConfig, g: GridHierarchy, c: CoeffField) -> str:
    h = hashlib.sha256()
    parts = [g.key(), c.digest(), cfg.coupling, repr(cfg.force), cfg.fine_solver, repr(cfg.tol)]
    if cfg.coupling == "DG":
        parts += [repr(cfg.gamma), cfg.penalty_h, cfg.dg_flux]
    h.update("|".join(parts).encode())
    return h.hexdigest()[:24]


@dataclass
class _Problem:
    g: GridHierarchy
    c: CoeffField
    load: np.ndarray
    reference: np.ndarray
    dg_op: fem.DGOperator | None = None


def _dg_operator(cfg, g, c):
    ph = g.h if cfg.penalty_h == "fine" else g.H
    return fem.assemble_dg(g, c, cfg.gamma, penalty_h=ph, flux=cfg.dg_flux)


def fine_reference(cfg: ExperimentConfig, g: GridHierarchy | None = None, c: CoeffField | None = None):
    """Fine solution for the configured coupling, read from or stored in the cache directory."""
    g = g or cfg.grid()
    c = c or cfg.coefficients(g)
    op = None
    if cfg.coupling == "CG":
        load = fem.load_vector(g, cfg.force)
    else:
        load = fem.broken_load(g, cfg.force)
        op = _dg_operator(cfg, g, c)
    cache = _cache_dir()
    path = cache / f"ref_{_reference_key(cfg, g, c)}.npy" if cache else None
    if path is not None and path.exists():
        ref = np.load(path)
        if ref.shape == load.shape:
            return _Problem(g, c, load, ref, op)
    if cfg.coupling == "CG":
        ref = fem.solve_fine_cg(g, c, load, solver=cfg.fine_solver, tol=cfg.tol)
    else:
        ref = fem.solve_fine_dg(g, c, load, op=op)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}.npy")
        np.save(tmp, ref)
        os.replace(tmp, path)
    return _Problem(g, c, load, ref, op)


def _rank_tol(cfg: ExperimentConfig) -> float:
    """CG16 evaluates the stiffness on restricted columns, so dependent ones must go;
    the other variants work on the enlarged region and keep every column."""
    if cfg.rank_tol is not None:
        return cfg.rank_tol
    return snapshot.RANK_TOL if cfg.spectral_variant is Variant.CG16 else 0.0


def _region_offline(cfg: ExperimentConfig, g, c, idx: int, pou, kappa, n_keep: int | None):
    """Snapshots, pencil and the largest offline space needed for one region."""
    variant = cfg.spectral_variant
    cache = _cache_dir()
    r = neighborhood(g, idx) if cfg.coupling == "CG" else block(g, idx)
    t0 = time.perf_counter()
    if cfg.layers > 0:
        kind = snapshot.SnapshotKind.TYPE2 if cfg.snapshots == "harmonic" else snapshot.SnapshotKind.TYPE1
        snap = snapshot.snapshots_oversampled(g, c, r, cfg.layers, kind=kind, rank_tol=_rank_tol(cfg),
                                              cache_dir=cache)
    elif cfg.snapshots == "harmonic":
        snap = snapshot.snapshots_type2(g, c, r, cache_dir=cache)
    else:
        snap = snapshot.snapshots_type1(g, c, r)
    t1 = time.perf_counter()
    if variant is Variant.CG:
        pencil = spectral.spectral_cg(g, c, r, snap, kappa=kappa)
    elif variant is Variant.DG:
        pencil = spectral.spectral_dg(g, c, r, snap)
    else:
        pencil = spectral.spectral_oversampled(variant, g, c, snap, kappa=kappa)
    spec = spectral.solve_pencil(pencil, keep_infinite=True)
    L = len(spec.xi) if n_keep is None else min(n_keep, len(spec.xi))
    chi = pou.values[idx] if cfg.coupling == "CG" else None
    off = spectral.build_offline(spec, snap, L, chi)
    t2 = time.perf_counter()
    return off, t1 - t0, t2 - t1


def _counts_for(cfg: ExperimentConfig, spaces: list[OfflineSpace]):
    """Per-region mode counts for every row of the sweep."""
    if not cfg.thresholds:
        return [(L, [L] * len(spaces)) for L in cfg.basis]
    out = []
    for tau in cfg.thresholds:
        out.append((tau, [min(int(np.sum(s.eigenvalues < tau)), s.L) for s in spaces]))
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run the sweep in ``cfg``; with ``write`` the CSV, text table and plot data go to ``output_dir``."""
    try:
        g = cfg.grid()
        c = cfg.coefficients(g)
    except GMsFEMError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("coefficients", str(exc)) from exc
    try:
        prob = fine_reference(cfg, g, c)
    except GMsFEMError as exc:
        raise ExperimentError("fine reference", exc) from exc

    pou = kappa = None
    if cfg.coupling == "CG":
        try:
            pou = spectral.build_pou(g, c, cfg.pou)
            kappa = spectral.weight_kappa_tilde(g, c, pou)
        except GMsFEMError as exc:
            raise ExperimentError("partition of unity", exc) from exc
    n_regions = g.n_coarse_nodes if cfg.coupling == "CG" else g.n_blocks
    n_keep = max(cfg.basis) if cfg.basis else None

    def work(idx):
        try:
            return _region_offline(cfg, g, c, idx, pou, kappa, n_keep)
        except GMsFEMError as exc:
            what = "node" if cfg.coupling == "CG" else "block"
            raise ExperimentError(f"offline stage, {what} {idx}", exc) from exc

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(work, range(n_regions)))
    else:
        results = [work(i) for i in range(n_regions)]
    full = [r[0] for r in results]
    t_snap = sum(r[1] for r in results)
    t_spec = sum(r[2] for r in results)

    rows = []
    solutions = []
    for label, counts in _counts_for(cfg, full):
        t0 = time.perf_counter()
        try:
            spaces = [s.truncate(L) for s, L in zip(full, counts)]
            if cfg.coupling == "CG":
                basis = assemble_global_cg(g, spaces)
                sol = solve_cg_gmsfem(g, c, prob.load, basis, reference=prob.reference)
            else:
                basis = global_basis_dg(g, spaces)
                sol = solve_dg_gmsfem(g, c, prob.load, basis, op=prob.dg_op, reference=prob.reference)
        except (GMsFEMError, ValueError) as exc:
            raise ExperimentError(f"online stage, L={label}", exc) from exc
        lam_star = min(s.lambda_star for s in spaces)
        inv = 0.0 if np.isinf(lam_star) else 1.0 / lam_star
        rows.append(ResultRow(sol.dimension, inv, sol.e_L2, sol.e_H1, label,
                              t_snap, t_spec, time.perf_counter() - t0))
        solutions.append(sol)
        log.info("L=%s dim=%d 1/L*=%.3e eL2=%.4e eH1=%.4e", label, sol.dimension, inv, sol.e_L2, sol.e_H1)

    result = ExperimentResult(cfg, rows)
    if write:
        _write_outputs(cfg, result, g, solutions)
    return result


def _write_outputs(cfg, result, g, solutions):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_text, table = emit_table(result.rows)
    files = {
        "csv": out / f"{cfg.name}.csv",
        "table": out / f"{cfg.name}.txt",
        "plot": out / f"{cfg.name}.dat",
        "timings": out / f"{cfg.name}_timings.csv",
    }
    files["csv"].write_text(csv_text)
    files["table"].write_text(table)
    files["plot"].write_text(emit_plotdata(result.rows))
    tim = ["L,t_snapshot,t_spectral,t_solve"]
    tim += [f"{_fmt(r.L)},{r.t_snapshot:.3f},{r.t_spectral:.3f},{r.t_solve:.3f}" for r in result.rows]
    files["timings"].write_text("\n".join(tim) + "\n")
    if cfg.rasters:
        for r, sol in zip(result.rows, solutions):
            p = out / f"{cfg.name}_u_L{_fmt(r.L)}.txt"
            save_displacement(g, sol.u, p, broken=cfg.coupling == "DG")
            files[f"raster_L{_fmt(r.L)}"] = p
    result.files = files


def save_displacement(g: GridHierarchy, u: np.ndarray, path, broken: bool = False) -> None:
    """Displacement raster in the coefficient raster format.

    Conforming fields are written per node ((ny+1) x (nx+1)); broken fields
    as cell averages (ny x nx).  Component 1 takes the place of lambda and
    component 2 that of mu, so values may be zero or negative.
    """
    if broken:
        cells = fem.BrokenSpace(g).to_cells(u)
        a, b = cells[..., 0], cells[..., 1]
    else:
        U = np.asarray(u).reshape(g.ny + 1, g.nx + 1, 2)
        a, b = U[..., 0], U[..., 1]
    save_raster(_RawPair(a, b), path)


@dataclass(frozen=True)
class _RawPair:
    lam: np.ndarray
    mu: np.ndarray

    @property
    def shape(self):
        return self.lam.shape


def run_fine_only(cfg: ExperimentConfig) -> Path:
    """Compute (or fetch) the fine reference and store it in the output directory."""
    g = cfg.grid()
    c = cfg.coefficients(g)
    prob = fine_reference(cfg, g, c)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.name}_fine.txt"
    save_displacement(g, prob.reference, path, broken=cfg.coupling == "DG")
    return path


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
