"""Benchmark harness: run configuration, solve orchestration, reports, studies.

A run has an offline stage (partition, layer factorizations, cell interface
operators, inner block LU) and an online stage (interface right-hand side,
preconditioned iteration on the polarized trace system, reconstruction).
Reports carry one wall-time entry per stage plus iteration and compression
statistics; all numerics are deterministic given the seed.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
import yaml

from .grid import ComplexField, Grid, PmlProfile, assemble_helmholtz, build_grid
from .io import save_field_array, save_pgm
from .layers import SolveOptions, outer_solve, reconstruct_volume, setup_layers, TraceSet
from .models import SlownessModel, load_model, synthetic_model


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_MODEL_KINDS = ("constant", "vertical-gradient", "lens", "rough-layered", "file")
_STRATEGIES = ("compressed-lu", "nested-polarized", "direct")


def npml_policy(nx: int, ny: int) -> int:
    """Collar width grows with the log of the problem size, floor of 8."""
    return max(8, round(math.log2(max(nx * ny, 2))))


@dataclass
class RunConfig:
    nx: int
    ny: int
    h: float
    f_hz: float                       # omega = pi * f_hz
    model_kind: str = "constant"
    model_params: dict = dc_field(default_factory=dict)
    L: int = 2
    L_c: int = 1
    inner_strategy: str = "compressed-lu"
    tol: float = 1e-5
    maxit: int = 60
    inner_eps: float | None = 1e-8
    inner_tol: float | None = None
    npml: int | None = None           # None = policy
    pml_reflection: float = 1e-8
    pml_order: int = 2
    sigma_max: float | None = None
    sources: list = dc_field(default_factory=list)   # (ix, iy, amplitude) interior coords
    out_dir: str | None = "out"
    write_pgm: bool = True
    seed: int = 0

    @property
    def omega(self) -> float:
        return math.pi * self.f_hz

    def resolved_npml(self) -> int:
        return self.npml if self.npml is not None else npml_policy(self.nx, self.ny)

    def validate(self) -> None:
        if self.nx < 4 or self.ny < 4 or self.h <= 0:
            raise ConfigError(f"bad grid: {self.nx} x {self.ny}, h = {self.h}")
        if self.f_hz <= 0:
            raise ConfigError(f"need f_hz > 0, got {self.f_hz}")
        if self.model_kind not in _MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if self.model_kind == "file":
            path = self.model_params.get("path")
            if not path:
                raise ConfigError("model kind 'file' needs model_params['path']")
            if not Path(path).exists():
                raise ConfigError(f"model file not found: {path}")
        if self.L < 1 or self.L_c < 1 or self.L * self.L_c < 1:
            raise ConfigError(f"need L, L_c >= 1, got L={self.L}, L_c={self.L_c}")
        if self.inner_strategy not in _STRATEGIES:
            raise ConfigError(f"unknown inner strategy {self.inner_strategy!r}")
        if not 0 < self.tol < 1:
            raise ConfigError(f"need tol in (0, 1), got {self.tol}")
        if not self.sources:
            raise ConfigError("at least one source is required")
        for s in self.sources:
            ix, iy = int(s[0]), int(s[1])
            if not (0 <= ix < self.nx and 0 <= iy < self.ny):
                raise ConfigError(f"source ({ix}, {iy}) outside interior "
                                  f"{self.nx} x {self.ny}")

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        try:
            grid = doc["grid"]
            model = dict(doc.get("model", {"kind": "constant"}))
            dec = doc.get("decomposition", {})
            tols = doc.get("tolerances", {})
            pml = doc.get("pml", {})
            out = doc.get("output", {})
            npml = grid.get("npml", "auto")
            cfg = RunConfig(
                nx=int(grid["nx"]), ny=int(grid["ny"]), h=float(grid["h"]),
                f_hz=float(doc["frequency_hz"]),
                model_kind=str(model.pop("kind")),
                model_params=model,
                L=int(dec.get("layers", 2)),
                L_c=int(dec.get("cells", 1)),
                inner_strategy=str(dec.get("inner_strategy", "compressed-lu")),
                tol=float(tols.get("outer", 1e-5)),
                maxit=int(tols.get("maxit", 60)),
                inner_eps=(None if tols.get("inner_eps", 1e-8) in (None, "none")
                           else float(tols.get("inner_eps", 1e-8))),
                inner_tol=(None if tols.get("inner_gmres") is None
                           else float(tols["inner_gmres"])),
                npml=None if npml in (None, "auto") else int(npml),
                pml_reflection=float(pml.get("reflection", 1e-8)),
                pml_order=int(pml.get("order", 2)),
                sigma_max=(None if pml.get("sigma_max") is None
                           else float(pml["sigma_max"])),
                sources=[(int(s["x"]), int(s["y"]), complex(s.get("amplitude", 1.0)))
                         for s in doc.get("sources", [])],
                out_dir=out.get("dir", "out"),
                write_pgm=bool(out.get("pgm", True)),
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed configuration: {exc}") from exc
        return cfg

    @staticmethod
    def from_yaml(path) -> "RunConfig":
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict):
            raise ConfigError(f"configuration root must be a mapping: {path}")
        return RunConfig.from_dict(doc)


STAGE_KEYS = ("lu_factorizations_s", "greens_functions_s", "local_solves_s",
              "sweeps_s", "recombination_s")

REPORT_COLUMNS = ("nx", "ny", "h", "npml", "f_hz", "omega", "model", "L", "L_c",
                  "inner_strategy", "tol", "seed", "iterations", "converged",
                  "trace_residual", "volume_residual") + STAGE_KEYS + (
                  "per_iteration_s", "total_s", "stored_scalars", "plr_ratio")


@dataclass
class RunReport:
    config: RunConfig
    iterations: int
    converged: bool
    residuals: list
    trace_residual: float
    volume_residual: float
    stage_seconds: dict
    per_iteration_s: float
    total_s: float
    stored_scalars: int
    plr_ratio: float | None
    field: ComplexField

    def row(self) -> dict:
        c = self.config
        row = {
            "nx": c.nx, "ny": c.ny, "h": c.h, "npml": c.resolved_npml(),
            "f_hz": c.f_hz, "omega": c.omega, "model": c.model_kind,
            "L": c.L, "L_c": c.L_c, "inner_strategy": c.inner_strategy,
            "tol": c.tol, "seed": c.seed,
            "iterations": self.iterations, "converged": self.converged,
            "trace_residual": self.trace_residual,
            "volume_residual": self.volume_residual,
            "per_iteration_s": self.per_iteration_s, "total_s": self.total_s,
            "stored_scalars": self.stored_scalars,
            "plr_ratio": "" if self.plr_ratio is None else self.plr_ratio,
        }
        for k in STAGE_KEYS:
            row[k] = self.stage_seconds.get(k, 0.0)
        return row


def build_problem(config: RunConfig) -> tuple[Grid, SlownessModel, ComplexField, SolveOptions]:
    config.validate()
    grid = build_grid(config.nx, config.ny, config.h, config.resolved_npml())
    if config.model_kind == "file":
        model = load_model(config.model_params["path"], grid)
    else:
        params = dict(config.model_params)
        if config.model_kind == "rough-layered":
            params.setdefault("seed", config.seed)
        model = synthetic_model(config.model_kind, grid, **params)
    ppw = model.c_min / (config.f_hz * config.h)
    if ppw < 8:
        warnings.warn(f"only {ppw:.1f} points per wavelength (c_min/(f h) < 8); "
                      "second-order accuracy degrades", stacklevel=2)
    if config.sigma_max is not None:
        profile = PmlProfile(config.sigma_max, config.pml_order)
    else:
        base = PmlProfile.default(grid, model.c_max, config.pml_reflection)
        profile = PmlProfile(base.sigma_max, config.pml_order)
    f = ComplexField.zeros(grid)
    for (ix, iy, amp) in config.sources:
        f.values += ComplexField.point_source(grid, int(ix), int(iy), amp).values
    options = SolveOptions(
        omega=config.omega, L=config.L, profile=profile,
        cells=None if config.inner_strategy == "direct" else config.L_c,
        inner_strategy=(config.inner_strategy if config.inner_strategy != "direct"
                        else "compressed-lu"),
        inner_eps=config.inner_eps, tol=config.tol,
        inner_tol=config.inner_tol, maxit=config.maxit)
    return grid, model, f, options


def _offline(options: SolveOptions, model: SlownessModel, stage: dict):
    """Timed offline stage; cell structures are timed as the Green's functions row."""
    t0 = time.perf_counter()
    plain = replace(options, cells=None)
    layers = setup_layers(plain, model)
    stage["lu_factorizations_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if options.cells is not None and len(layers) > 1:
        from .cells import CellSolver
        inner_tol = options.inner_tol if options.inner_tol is not None else 1e-2 * options.tol
        for lay in layers:
            lay.cells = CellSolver(lay, options.cells, strategy=options.inner_strategy,
                                   eps=options.inner_eps, tol=inner_tol)
    stage["greens_functions_s"] = time.perf_counter() - t0
    return layers


def _inner_storage(layers) -> tuple[int, float | None]:
    stored = 0
    dense = 0
    from .plr import PlrMatrix
    for lay in layers:
        if lay.cells is None:
            continue
        stored += lay.cells.stored_scalars()
        for cell in lay.cells.greens:
            for b in cell.blocks.values():
                dense += (b.shape[0] * b.shape[1]) if isinstance(b, PlrMatrix) else b.size
    return stored, (stored / dense if dense else None)


def run_solve(config: RunConfig, write: bool = True) -> RunReport:
    """Offline + online stages, report and artifact files."""
    t_start = time.perf_counter()
    grid, model, f, options = build_problem(config)
    stage: dict = {}
    layers = _offline(options, model, stage)
    u, stats = outer_solve(options, model, f, layers=layers, stage_seconds=stage)

    H = assemble_helmholtz(grid, model, config.omega, options.profile)
    r = H @ u.values.ravel() - f.values.ravel()
    vres = float(np.linalg.norm(r) / np.linalg.norm(f.values))
    stored, ratio = _inner_storage(layers)
    total = time.perf_counter() - t_start
    report = RunReport(
        config=config, iterations=stats.iterations, converged=stats.converged,
        residuals=list(stats.residuals),
        trace_residual=float(stats.residuals[-1]) if stats.residuals else 0.0,
        volume_residual=vres, stage_seconds=stage,
        per_iteration_s=(stage.get("sweeps_s", 0.0) / stats.iterations
                         if stats.iterations else 0.0),
        total_s=total, stored_scalars=stored, plr_ratio=ratio, field=u)
    if write and config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv([report.row()], out / "report.csv")
        dump_field(u, out / "field.helm-u",
                   pgm_path=(out / "field.pgm") if config.write_pgm else None)
    return report


def write_report_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def dump_field(u: ComplexField, path, pgm_path=None) -> None:
    save_field_array(u.values, path)
    if pgm_path is not None:
        save_pgm(u.values, pgm_path)


STUDY_COLUMNS = ("size", "N", "L", "L_c", "f_hz", "iterations", "converged",
                 "per_iteration_s", "online_s", "offline_s", "stored_scalars",
                 "volume_residual", "status")


def run_scaling_study(base: RunConfig, sizes: list[int], P_grid: list[tuple[int, int]],
                      repeats: int = 3, out_path=None) -> list[dict]:
    """Iterations, timing, and memory proxy across sizes and decompositions.

    Sizes are interior points per dimension on a fixed physical domain
    (h scales as 1/n); the frequency follows f ~ sqrt(n) anchored at the base
    config.  The online stage is repeated and the median per-iteration time
    reported.  Failures are recorded per case and the study continues.
    Appends one log-log slope row per (L, L_c) when >= 2 sizes succeeded.
    """
    rows: list[dict] = []
    for n in sizes:
        for (L, L_c) in P_grid:
            cfg = replace(
                base, nx=n, ny=n,
                h=base.h * base.nx / n,
                f_hz=base.f_hz * math.sqrt(n / base.nx),
                L=L, L_c=L_c, npml=None, out_dir=None,
                sources=[(n // 2, n // 2, 1.0)])
            row = {"size": n, "N": n * n, "L": L, "L_c": L_c, "f_hz": cfg.f_hz,
                   "status": "ok"}
            try:
                grid, model, f, options = build_problem(cfg)
                stage: dict = {}
                layers = _offline(options, model, stage)
                offline_s = stage["lu_factorizations_s"] + stage["greens_functions_s"]
                per_iter, online = [], []
                for _ in range(max(1, repeats)):
                    st: dict = {}
                    u, stats = outer_solve(options, model, f, layers=layers,
                                           stage_seconds=st)
                    online.append(st["local_solves_s"] + st["sweeps_s"]
                                  + st["recombination_s"])
                    per_iter.append(st["sweeps_s"] / max(stats.iterations, 1))
                H = assemble_helmholtz(grid, model, cfg.omega, options.profile)
                vres = float(np.linalg.norm(H @ u.values.ravel() - f.values.ravel())
                             / np.linalg.norm(f.values))
                stored, _ = _inner_storage(layers)
                row.update(iterations=stats.iterations, converged=stats.converged,
                           per_iteration_s=float(np.median(per_iter)),
                           online_s=float(np.median(online)), offline_s=offline_s,
                           stored_scalars=stored, volume_residual=vres)
            except Exception as exc:  # per-case failure: record and continue
                row.update(status=f"error: {exc}")
            rows.append(row)
    for (L, L_c) in P_grid:
        ok = [r for r in rows if r.get("status") == "ok"
              and r["L"] == L and r["L_c"] == L_c]
        if len(ok) >= 2:
            slope = fit_loglog_slope([r["N"] for r in ok],
                                     [r["per_iteration_s"] for r in ok])
            rows.append({"size": "slope", "N": "", "L": L, "L_c": L_c, "f_hz": "",
                         "per_iteration_s": slope, "status": "fit"})
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=STUDY_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(rows)
    return rows


def fit_loglog_slope(x, y) -> float:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def snapshot_iterations(config: RunConfig, out_dir=None) -> list:
    """Volume field after 0, 1, 2, ... outer iterations; the last is converged.

    Returns the list of fields (and writes HELM-U dumps when out_dir given).
    """
    grid, model, f, options = build_problem(config)
    layers = setup_layers(options, model)
    K = layers[0].partition.n_interfaces
    snaps = [reconstruct_volume(layers, TraceSet.zeros(K, grid.nxt), f)]

    def hook(p):
        snaps.append(reconstruct_volume(layers, p.recombine(), f))

    outer_solve(options, model, f, layers=layers, iterate_hook=hook)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, s in enumerate(snaps):
            dump_field(s, out / f"snapshot_{k:03d}.helm-u",
                       pgm_path=(out / f"snapshot_{k:03d}.pgm") if config.write_pgm else None)
    return snaps
