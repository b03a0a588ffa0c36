"""Experiment driver: convergence studies, CFL and wavenumber sweeps, single runs."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analytic import EigenmodeSolution, ErrorAccumulator
from .grid import build_tm_grid
from .schemes import (
    BlowupError,
    C4Stepper,
    ConfigurationError,
    RunConfig,
    StepError,
    initial_state,
    make_stepper,
    march,
    zero_state,
)

WORKERS_ENV = "COMPACT_MAXWELL_WORKERS"
CSV_COLUMNS = ("scheme", "N", "r", "kx", "ky", "T", "Z", "error", "order", "cg_iters_mean", "status")
SWEEP_AXES = ("N", "r", "k")


@dataclass
class ErrorRow:
    scheme: str
    N: int
    r: float
    kx: int
    ky: int
    T: float
    Z: float
    error: float
    order: float = math.nan
    cg_iters_mean: float = math.nan
    status: str = "ok"

    @property
    def k(self) -> float:
        return math.hypot(self.kx, self.ky)


@dataclass
class SweepSpec:
    axis: str
    values: list
    schemes: list
    fixed: RunConfig

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}")
        if not self.values:
            raise ConfigurationError("sweep needs at least one value")
        if any(not v > 0 for v in self.values):
            raise ConfigurationError("sweep values must be positive")

    def configs(self) -> list[RunConfig]:
        out = []
        for scheme in self.schemes:
            for v in self.values:
                if self.axis == "N":
                    upd = {"N": int(v)}
                elif self.axis == "r":
                    upd = {"r": float(v)}
                else:
                    upd = {"kx": int(v), "ky": int(v)}
                out.append(replace(self.fixed, scheme=scheme, **upd))
        return out


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_case(cfg: RunConfig) -> ErrorRow:
    """Mean error of one eigenmode run; failures become ``inf`` rows."""
    row = ErrorRow(cfg.scheme, cfg.N, cfg.r, cfg.kx, cfg.ky, cfg.T, cfg.Z, math.inf)
    try:
        grid = build_tm_grid(cfg.N)
        mode = EigenmodeSolution(cfg.kx, cfg.ky, cfg.Z)
        state = initial_state(grid, cfg.h_tau, mode)
        stepper = make_stepper(cfg, grid)
        acc = ErrorAccumulator(mode, grid, cfg.h_tau)
        march(state, stepper, cfg.n_steps, lambda s: acc.add(s.n, s.fields))
    except BlowupError:
        row.status = "blowup"
        return row
    except StepError:
        row.status = "cg_failure"
        return row
    except Exception as exc:  # a failed cell never aborts a sweep
        row.status = f"error: {type(exc).__name__}"
        return row
    row.error = acc.value
    if isinstance(stepper, C4Stepper):
        row.cg_iters_mean = stepper.mean_iterations()
    return row


def _sort_key(row: ErrorRow):
    return (row.scheme, row.kx, row.ky, row.r, row.N)


def run_cases(configs: Sequence[RunConfig], workers: int | None = None) -> list[ErrorRow]:
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_case, configs))
    else:
        rows = [run_case(c) for c in configs]
    return sorted(rows, key=_sort_key)


def observed_order(e_coarse: float, e_fine: float) -> float:
    if not (math.isfinite(e_coarse) and math.isfinite(e_fine)) or e_fine <= 0 or e_coarse <= 0:
        return math.nan
    return math.log2(e_coarse / e_fine)


def attach_orders(rows: list[ErrorRow]) -> list[ErrorRow]:
    """Order of each row relative to the row at half its ``N`` (same scheme and mode)."""
    by_key = {(r.scheme, r.kx, r.ky, r.r, r.N): r for r in rows}
    for r in rows:
        prev = by_key.get((r.scheme, r.kx, r.ky, r.r, r.N // 2)) if r.N % 2 == 0 else None
        r.order = observed_order(prev.error, r.error) if prev is not None else math.nan
    return rows


def run_convergence_study(spec: SweepSpec, workers: int | None = None) -> list[ErrorRow]:
    if spec.axis != "N":
        raise ConfigurationError("convergence study sweeps N")
    Ns = sorted(int(v) for v in spec.values)
    if any(b != 2 * a for a, b in zip(Ns, Ns[1:])):
        raise ConfigurationError(f"N list must be dyadic, got {Ns}")
    return attach_orders(run_cases(spec.configs(), workers))


def run_cfl_sweep(spec: SweepSpec, workers: int | None = None) -> list[ErrorRow]:
    if spec.axis != "r":
        raise ConfigurationError("CFL sweep varies r")
    if any(v > 1 / math.sqrt(2) + 1e-12 for v in spec.values):
        raise ConfigurationError("r values must lie in (0, 1/sqrt(2)]")
    return run_cases(spec.configs(), workers)


def run_wavenumber_sweep(spec: SweepSpec, workers: int | None = None) -> list[ErrorRow]:
    if spec.axis != "k":
        raise ConfigurationError("wavenumber sweep varies k")
    return run_cases(spec.configs(), workers)


# --- output ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def write_csv(rows: Iterable[ErrorRow], out=None) -> str:
    """Write rows with the fixed column schema; returns the text when ``out`` is None."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    text = buf.getvalue()
    if out is not None:
        Path(out).write_text(text)
    return text


def read_csv(path) -> list[ErrorRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for f in fields(ErrorRow):
                raw = rec[f.name]
                if f.name in ("scheme", "status"):
                    kw[f.name] = raw
                elif f.name in ("N", "kx", "ky"):
                    kw[f.name] = int(raw)
                else:
                    kw[f.name] = float(raw) if raw else math.nan
            rows.append(ErrorRow(**kw))
    return rows


def plot_series(rows: Iterable[ErrorRow], x: str) -> list[tuple[str, float, float]]:
    """``(series, x, error)`` triples, one series per scheme; ``x`` is ``N``, ``r`` or ``k``."""
    return [(r.scheme, float(getattr(r, x)), r.error) for r in rows]


def write_plot_data(rows: Iterable[ErrorRow], x: str, out) -> None:
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("series", x, "error"))
        for s, xv, y in plot_series(rows, x):
            w.writerow((s, _fmt(xv), _fmt(y)))


def dump_field(prefix, array: np.ndarray, component: str, n: int, tau: float) -> tuple[Path, Path]:
    """Raw little-endian float64 data plus a JSON header next to it."""
    prefix = Path(prefix)
    data, head = prefix.with_suffix(".bin"), prefix.with_suffix(".json")
    try:
        np.ascontiguousarray(array, dtype="<f8").tofile(data)
        head.write_text(json.dumps(
            {"component": component, "shape": list(array.shape), "n": int(n), "tau": float(tau)}
        ))
    except OSError as exc:
        raise OSError(f"cannot write field dump {data}: {exc}") from exc
    return data, head


def read_field(prefix) -> tuple[np.ndarray, dict]:
    prefix = Path(prefix)
    head = json.loads(prefix.with_suffix(".json").read_text())
    arr = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8").reshape(head["shape"])
    return arr, head


def run_single(cfg: RunConfig, out_dir, zero_init: bool = False, dump_every: int = 0) -> int:
    """March to ``T``, dump the fields and write ``manifest.json``; returns an exit status."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    grid = build_tm_grid(cfg.N)
    mode = EigenmodeSolution(cfg.kx, cfg.ky, cfg.Z)
    state = zero_state(grid, cfg.h_tau) if zero_init else initial_state(grid, cfg.h_tau, mode)
    stepper = make_stepper(cfg, grid)
    acc = None if zero_init else ErrorAccumulator(mode, grid, cfg.h_tau)
    files: list[str] = []

    def dump(s):
        for comp, arr in zip(("Ez", "Hx", "Hy"), s.fields):
            tau = s.tau if comp == "Ez" else s.tau + 0.5 * s.h_tau
            paths = dump_field(out / f"{comp}_{s.n:06d}", arr, comp, s.n, tau)
            files.extend(p.name for p in paths)

    def observe(s):
        if acc is not None:
            acc.add(s.n, s.fields)
        if dump_every and s.n % dump_every == 0 and s.n != cfg.n_steps:
            dump(s)

    status, t0 = "ok", time.perf_counter()
    final = state
    try:
        final = march(state, stepper, cfg.n_steps, observe)
    except BlowupError as exc:
        status = "blowup"
        final = None
        message = str(exc)
    except StepError as exc:
        status = "cg_failure"
        final = None
        message = str(exc)
    else:
        message = ""
        dump(final)
    wall = time.perf_counter() - t0
    manifest = {
        "scheme": cfg.scheme, "N": cfg.N, "r": cfg.r, "T": cfg.T, "Z": cfg.Z,
        "kx": cfg.kx, "ky": cfg.ky, "h_tau": cfg.h_tau, "steps": cfg.n_steps,
        "initial": "zero" if zero_init else "eigenmode",
        "params": cfg.params.as_dict() if cfg.params is not None else None,
        "error": (acc.value if acc is not None and status == "ok" else None),
        "status": status, "message": message,
        "cg": {
            "mean_iterations": stepper.mean_iterations() if isinstance(stepper, C4Stepper) else None,
            "max_iterations": (max(max(t) for t in stepper.iterations)
                               if isinstance(stepper, C4Stepper) and stepper.iterations else None),
        },
        "wall_time": wall,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return 0 if status == "ok" else 1


def print_table(rows: Sequence[ErrorRow], stream=None) -> None:
    (stream or sys.stdout).write(write_csv(rows))


__all__ = [
    "CSV_COLUMNS", "ErrorRow", "SweepSpec", "attach_orders", "dump_field", "observed_order",
    "plot_series", "read_csv", "read_field", "run_case", "run_cases", "run_cfl_sweep",
    "run_convergence_study", "run_single", "run_wavenumber_sweep", "worker_count",
    "write_csv", "write_plot_data",
]
