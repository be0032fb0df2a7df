"""Monte Carlo sweeps, aggregation, CSV output and gnuplot scripts."""

import csv
import io
import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .algorithm import AlgorithmConfig, collect_data, synthesize
from .ensemble import Dimensions, generate_ensemble
from .errors import NumericalError, UsageError
from .estimator import FitOptions, fit_all_individual, fit_joint
from .riccati import CostMatrices
from .rng import Purpose, derive_seed

log = logging.getLogger(__name__)

CSV_HEADER = "T,k,sigma_g,sigma_eta,r,method,seed,fraction_stabilized,mean_rho,wall_time_ms"
SUMMARY_HEADER = "T,k,sigma_g,sigma_eta,r,method,n_seeds,mean_fraction,stderr,single_seed,mean_rho"
METHODS = ("joint", "individual")

FULL_DIMS = Dimensions(m=100, dx=10, du=6, ell=5)
DESK_DIMS = Dimensions(m=20, dx=6, du=3, ell=3)
DEFAULT_T_GRID = (5, 10, 15, 20, 25, 30, 40)


@dataclass(frozen=True)
class SweepConfig:
    dims: Dimensions = FULL_DIMS
    rho_band: tuple = (1.2, 1.5)
    sigma_xi: float = 2.0
    T_values: tuple = DEFAULT_T_GRID
    sigma_g_values: tuple = (0.3,)
    sigma_eta_values: tuple = (2.0,)
    k_values: tuple = (3, 4, 5)
    r_values: tuple = (0.25,)
    n_seeds: int = 10
    master_seed: int = 0
    regenerate_ensemble_per_seed: bool = True
    output_path: str = None
    fit: FitOptions = field(default_factory=FitOptions)
    workers: int = 1
    record_timing: bool = False

    def __post_init__(self):
        for name in ("T_values", "sigma_g_values", "sigma_eta_values", "k_values", "r_values"):
            values = tuple(getattr(self, name))
            if not values:
                raise UsageError(f"{name} must be nonempty")
            object.__setattr__(self, name, values)
        if self.n_seeds < 1:
            raise UsageError("n_seeds must be >= 1")
        if max(self.k_values) > min(self.T_values):
            raise UsageError(
                f"every k must be <= every T (k up to {max(self.k_values)}, "
                f"T down to {min(self.T_values)})"
            )
        if any(r <= 0 for r in self.r_values):
            raise UsageError("r values must be positive")

    def grid(self):
        """Data-defining grid points ``(T, k, sigma_g, sigma_eta)``; r is inner."""
        return list(itertools.product(
            self.T_values, self.k_values, self.sigma_g_values, self.sigma_eta_values
        ))

    def ensemble_seed(self, seed_index):
        idx = 0 if not self.regenerate_ensemble_per_seed else seed_index
        return derive_seed(self.master_seed, Purpose.SWEEP, idx, 0)

    def run_seed(self, seed_index):
        return derive_seed(self.master_seed, Purpose.SWEEP, seed_index, 1)


@dataclass(frozen=True)
class SweepResultRow:
    T: int
    k: int
    sigma_g: float
    sigma_eta: float
    r: float
    method: str
    seed: int
    fraction_stabilized: float
    mean_rho: float
    wall_time_ms: float
    dataset_checksum: str = field(default="", compare=False)

    def sort_key(self):
        return (self.T, self.k, self.sigma_g, self.sigma_eta, self.r,
                METHODS.index(self.method), self.seed)


@dataclass(frozen=True)
class SummaryRow:
    T: int
    k: int
    sigma_g: float
    sigma_eta: float
    r: float
    method: str
    n_seeds: int
    mean_fraction: float
    stderr: float
    single_seed: bool
    mean_rho: float


@lru_cache(maxsize=16)
def _ensemble(dims, rho_band, sigma_xi, seed):
    return generate_ensemble(dims, rho_band[0], rho_band[1], sigma_xi, seed)


def check_output_path(path):
    """Raise ``OSError`` if ``path`` cannot be written."""
    if path is None:
        return
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path)) or "."
    if os.path.isdir(path):
        raise IsADirectoryError(f"output path is a directory: {path}")
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"output directory does not exist: {parent}")
    if not os.access(parent, os.W_OK) or (os.path.exists(path) and not os.access(path, os.W_OK)):
        raise PermissionError(f"output path is not writable: {path}")


def _fit(method, data, cfg, seed):
    try:
        if method == "joint":
            return fit_joint(data, cfg.dims.ell, replace(cfg.fit, seed=seed)).per_system
        return fit_all_individual(data, cfg.fit.ridge, cfg.fit.rescale)
    except NumericalError as exc:
        log.info("%s fit failed (T=%d, k=%d): %s", method, data.T, data.k, exc)
        return None


def _run_task(args):
    cfg, (T, k, sigma_g, sigma_eta), seed_index = args
    ens = _ensemble(cfg.dims, cfg.rho_band, cfg.sigma_xi, cfg.ensemble_seed(seed_index))
    acfg = AlgorithmConfig(T=T, k=k, sigma_g=sigma_g, sigma_eta=sigma_eta,
                           fit=cfg.fit, seed=cfg.run_seed(seed_index))
    data, _ = collect_data(ens, acfg)
    checksum = data.checksum()

    estimates, fit_ms = {}, {}
    for method in METHODS:
        t0 = time.perf_counter()
        estimates[method] = _fit(method, data, cfg, acfg.seed)
        fit_ms[method] = (time.perf_counter() - t0) * 1e3

    rows = []
    for r in cfg.r_values:
        cost = CostMatrices.identity(cfg.dims.dx, cfg.dims.du, r)
        for method in METHODS:
            t0 = time.perf_counter()
            if estimates[method] is None:
                flags = np.zeros(cfg.dims.m, dtype=bool)
                rho = np.full(cfg.dims.m, math.nan)
            else:
                _, flags, rho = synthesize(ens, estimates[method], cost)
            elapsed = fit_ms[method] + (time.perf_counter() - t0) * 1e3
            finite = rho[np.isfinite(rho)]
            rows.append(SweepResultRow(
                T=T, k=k, sigma_g=float(sigma_g), sigma_eta=float(sigma_eta), r=float(r),
                method=method, seed=seed_index,
                fraction_stabilized=float(flags.mean()),
                mean_rho=float(finite.mean()) if finite.size else math.nan,
                wall_time_ms=elapsed if cfg.record_timing else 0.0,
                dataset_checksum=checksum,
            ))
    return rows


def run_sweep(cfg):
    """One row per grid point, method and seed, in deterministic order.

    Joint and individual rows of the same grid point and seed are computed
    from one shared dataset. Timing is recorded only with
    ``cfg.record_timing``; otherwise ``wall_time_ms`` is 0 so the output is
    byte-reproducible.
    """
    check_output_path(cfg.output_path)
    tasks = [(cfg, point, s) for point in cfg.grid() for s in range(cfg.n_seeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = sorted(itertools.chain.from_iterable(chunks), key=SweepResultRow.sort_key)
    if cfg.output_path is not None:
        emit_csv(rows, cfg.output_path)
    return rows


def aggregate(rows):
    """Mean fraction and standard error per ``(T, k, sigma_g, sigma_eta, r, method)``."""
    groups = {}
    for row in rows:
        key = (row.T, row.k, row.sigma_g, row.sigma_eta, row.r, row.method)
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: k[:5] + (METHODS.index(k[5]),)):
        fr = np.array([r.fraction_stabilized for r in groups[key]])
        rho = np.array([r.mean_rho for r in groups[key]])
        n = fr.size
        stderr = float(fr.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        finite = rho[np.isfinite(rho)]
        out.append(SummaryRow(*key, n_seeds=n, mean_fraction=float(fr.mean()),
                              stderr=stderr, single_seed=n == 1,
                              mean_rho=float(finite.mean()) if finite.size else math.nan))
    return out


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return format(float(value), ".10g")
    return str(value)


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise type(exc)(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def format_csv(rows, debug=False):
    header = CSV_HEADER + (",dataset_checksum" if debug else "")
    lines = [header]
    for row in rows:
        cells = [_fmt(getattr(row, f)) for f in CSV_HEADER.split(",")]
        if debug:
            cells.append(row.dataset_checksum)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def emit_csv(rows, path, debug=False):
    """Write result rows; ``debug`` appends a dataset checksum column."""
    _write(path, format_csv(rows, debug))


def format_summary_csv(summary):
    lines = [SUMMARY_HEADER]
    for row in summary:
        lines.append(",".join(_fmt(getattr(row, f)) for f in SUMMARY_HEADER.split(",")))
    return "\n".join(lines) + "\n"


def emit_summary_csv(summary, path):
    _write(path, format_summary_csv(summary))


def parse_csv(text):
    """Inverse of ``format_csv`` for the frozen result columns."""
    reader = csv.DictReader(io.StringIO(text))
    if ",".join(reader.fieldnames or []) not in (CSV_HEADER, CSV_HEADER + ",dataset_checksum"):
        raise UsageError(f"unexpected CSV header: {reader.fieldnames}")
    rows = []
    for rec in reader:
        rows.append(SweepResultRow(
            T=int(rec["T"]), k=int(rec["k"]), sigma_g=float(rec["sigma_g"]),
            sigma_eta=float(rec["sigma_eta"]), r=float(rec["r"]), method=rec["method"],
            seed=int(rec["seed"]), fraction_stabilized=float(rec["fraction_stabilized"]),
            mean_rho=float(rec["mean_rho"]), wall_time_ms=float(rec["wall_time_ms"]),
            dataset_checksum=rec.get("dataset_checksum") or "",
        ))
    return rows


_PANEL_KEYS = ("T", "sigma_g", "sigma_eta", "r")
_LABELS = {"T": "T", "sigma_g": "sigma_G", "sigma_eta": "sigma_eta", "r": "r"}


def plot_layout(summary):
    """Choose the x-axis and panel keys for a summary.

    The x-axis is whichever of T and r takes more distinct values (T on a
    tie); panels split on every other varying parameter except k, which
    distinguishes curves.
    """
    counts = {key: len({getattr(s, key) for s in summary}) for key in _PANEL_KEYS}
    varying = {key for key, c in counts.items() if c > 1}
    x = "r" if counts["r"] > counts["T"] else "T"
    panel_keys = [key for key in _PANEL_KEYS if key in varying and key != x]
    return x, panel_keys


def emit_plot_script(summary, path, image="sweep.png"):
    """Write a gnuplot script: one panel per swept value, joint solid, individual dashed."""
    if not summary:
        raise UsageError("cannot plot an empty summary")
    x, panel_keys = plot_layout(summary)
    panels = sorted({tuple(getattr(s, key) for key in panel_keys) for s in summary})
    ks = sorted({s.k for s in summary})
    cols = 1 if len(panels) == 1 else 2
    nrows = math.ceil(len(panels) / cols)
    out = [
        "# gnuplot script written by jointstab",
        "set terminal pngcairo size {},{}".format(640 * cols, 480 * nrows),
        f"set output '{image}'",
        f"set multiplot layout {nrows},{cols}",
        f"set xlabel '{_LABELS[x]}'",
        "set ylabel 'portion of systems stabilized'",
        "set yrange [0:1.05]",
        "set key bottom right",
    ]
    for panel in panels:
        title = ", ".join(f"{_LABELS[key]} = {_fmt(v)}" for key, v in zip(panel_keys, panel))
        out.append(f"set title '{title}'")
        members = [s for s in summary
                   if tuple(getattr(s, key) for key in panel_keys) == panel]
        curves = []
        for method in METHODS:
            for ci, k in enumerate(ks, start=1):
                pts = sorted((getattr(s, x), s.mean_fraction, s.stderr)
                             for s in members if s.method == method and s.k == k)
                if pts:
                    curves.append((method, ci, k, pts))
        specs = [
            "'-' using 1:2:3 with yerrorlines dt {} lc {} title '{} k={}'".format(
                1 if method == "joint" else 2, ci, method, k)
            for method, ci, k, _ in curves
        ]
        out.append("plot " + ", \\\n     ".join(specs))
        for _, _, _, pts in curves:
            out.extend(f"{_fmt(px)} {_fmt(py)} {_fmt(pe)}" for px, py, pe in pts)
            out.append("e")
    out.append("unset multiplot")
    _write(path, "\n".join(out) + "\n")
