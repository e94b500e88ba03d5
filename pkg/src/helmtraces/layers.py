"""Layered interface reduction of the global Helmholtz problem.

The domain is split into horizontal layers; each interface between consecutive
layers carries the solution on the two adjacent grid rows.  Each layer solves
its own problem with absorbing collars appended at artificial boundaries, and
the global problem reduces to a banded system on the interface traces built
from exact discrete identities: truncating the global solution to a layer's
owned rows turns the stencil coupling into equivalent sources on the interface
row pairs, the local solve then reproduces the solution on owned rows and
vanishes on collar rows.  Sampling the owned interface rows gives reproduction
rows; sampling the first collar rows gives annihilation rows.  Summing the two
per interface yields the trace system applied by ``apply_trace_system``; keeping
them separate and splitting each trace into a down-going and an up-going part
yields the polarized system, whose triangular halves carry all one-way
transmission and are swept by the Gauss-Seidel preconditioner.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gmres import GmresStats, gmres
from .grid import (ComplexField, DimensionMismatchError, Grid, HelmholtzOperator,
                   PmlProfile, axis_sigma, shifted_sigma)
from .models import SlownessModel
from .sparse import Factorization, factorize


class PartitionError(ValueError):
    """Domain decomposition does not fit the grid."""


@dataclass(frozen=True)
class LayerPartition:
    """L contiguous bands of interior rows, extra rows assigned topmost first."""

    grid: Grid
    L: int
    row_ranges: tuple[tuple[int, int], ...]   # interior row coordinates

    @property
    def n_interfaces(self) -> int:
        return self.L - 1

    def interface_rows(self) -> list[int]:
        """Global grid row above each interface (the pair is (m, m + 1))."""
        return [self.grid.npml + r1 - 1 for (_, r1) in self.row_ranges[:-1]]

    def owned_global(self, idx: int) -> tuple[int, int]:
        """Owned global row range; edge layers own the outer collar rows."""
        r0, r1 = self.row_ranges[idx]
        g0 = 0 if idx == 0 else self.grid.npml + r0
        g1 = self.grid.nyt if idx == self.L - 1 else self.grid.npml + r1
        return g0, g1


def partition_layers(grid: Grid, L: int) -> LayerPartition:
    if L < 1:
        raise PartitionError(f"need L >= 1, got {L}")
    if grid.ny < 4 * L:
        raise PartitionError(f"{L} layers need >= {4 * L} interior rows, grid has {grid.ny}")
    base, rem = divmod(grid.ny, L)
    sizes = [base + (1 if i < rem else 0) for i in range(L)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    ranges = tuple((int(bounds[i]), int(bounds[i + 1])) for i in range(L))
    return LayerPartition(grid, L, ranges)


class LayerLocal:
    """One layer's local problem: owned rows plus absorbing collars.

    Collar rows carry the true neighboring media (always available because
    interfaces are interior), so the layer's outgoing extension matches the
    actual transmission across the interface; collar absorption uses the same
    profile as the outer boundary.
    """

    def __init__(self, partition: LayerPartition, idx: int, model: SlownessModel,
                 omega: float, profile: PmlProfile):
        grid = partition.grid
        self.partition = partition
        self.index = idx
        self.profile = profile
        self.g0, self.g1 = partition.owned_global(idx)
        p = grid.npml
        self.pad_top = p if idx > 0 else 0
        self.pad_bot = p if idx < partition.L - 1 else 0
        self.nloc = (self.g1 - self.g0) + self.pad_top + self.pad_bot
        self.offset = self.g0 - self.pad_top
        self.nxt = grid.nxt

        glob_sig_y = axis_sigma(grid.nyt, p, p, profile)
        sig_y = shifted_sigma(glob_sig_y, self.offset, self.nloc,
                              self.pad_top, self.pad_bot, profile)
        sig_x = axis_sigma(grid.nxt, p, p, profile)
        m_loc = model.m[self.g0 - self.pad_top: self.g1 + self.pad_bot, :]
        self.op = HelmholtzOperator(self.nxt, self.nloc, grid.h, omega, m_loc, sig_x, sig_y)
        self.factor: Factorization = factorize(self.op.matrix())

        iface = partition.interface_rows()
        self.top_iface = idx - 1 if idx > 0 else None
        self.bot_iface = idx if idx < partition.L - 1 else None
        # boundary rows in local indices: [n-1, n] then [m, m+1]
        self.brows: list[int] = []
        if self.top_iface is not None:
            mk = iface[self.top_iface]
            self.brows += [self.lrow(mk), self.lrow(mk + 1)]
            self.w_top = self.op.y_coupling(self.lrow(mk + 1))
        if self.bot_iface is not None:
            mk = iface[self.bot_iface]
            self._bot_pos = len(self.brows)
            self.brows += [self.lrow(mk), self.lrow(mk + 1)]
            self.w_bot = self.op.y_coupling(self.lrow(mk + 1))
        self.cells = None   # optional nested boundary-application backend

    def lrow(self, grow: int) -> int:
        return grow - self.offset

    # -- volume solves ------------------------------------------------------

    def solve_volume(self, rhs: np.ndarray) -> np.ndarray:
        """Local solve for stacked fields rhs (..., nloc, nxt)."""
        lead = rhs.shape[:-2]
        flat = rhs.reshape(-1, self.nloc * self.nxt).T
        sol = self.factor.solve(flat if flat.shape[1] > 1 else flat[:, 0])
        return sol.T.reshape(lead + (self.nloc, self.nxt))

    def restrict(self, f: np.ndarray) -> np.ndarray:
        """Zero-extend the owned-row slice of a global field into the local grid."""
        rhs = np.zeros((self.nloc, self.nxt), dtype=complex)
        rhs[self.pad_top: self.nloc - self.pad_bot, :] = f[self.g0: self.g1, :]
        return rhs

    # -- boundary-to-boundary application ------------------------------------

    def apply_boundary(self, src: np.ndarray) -> np.ndarray:
        """Response to sources on the boundary rows, sampled at those rows.

        src has shape (..., R, nxt) with R = len(self.brows); rows are raw
        source values.  Uses the direct factorization, or the nested cell
        backend when attached.
        """
        if self.cells is not None:
            return self.cells.apply(src)
        lead = src.shape[:-2]
        rhs = np.zeros(lead + (self.nloc, self.nxt), dtype=complex)
        for pos, row in enumerate(self.brows):
            rhs[..., row, :] += src[..., pos, :]
        sol = self.solve_volume(rhs)
        return sol[..., self.brows, :]

    # -- source/sample helpers in boundary-row coordinates --------------------

    def source_from_top(self, pair: np.ndarray, out: np.ndarray) -> None:
        """Equivalent sources on the top boundary rows from the trace pair at
        the layer's top interface: +w a at the owned row, -w b at the collar row."""
        out[..., 0, :] += -self.w_top * pair[..., 1, :]
        out[..., 1, :] += self.w_top * pair[..., 0, :]

    def source_from_bottom(self, pair: np.ndarray, out: np.ndarray) -> None:
        b = self._bot_pos
        out[..., b, :] += self.w_bot * pair[..., 1, :]
        out[..., b + 1, :] += -self.w_bot * pair[..., 0, :]

    def samples(self, sampled: np.ndarray) -> dict[str, np.ndarray]:
        """Name the boundary-row samples: N1/N0 = rows (n-1, n), M0/M1 = (m, m+1)."""
        out = {}
        if self.top_iface is not None:
            out["N1"] = sampled[..., 0, :]
            out["N0"] = sampled[..., 1, :]
        if self.bot_iface is not None:
            b = self._bot_pos
            out["M0"] = sampled[..., b, :]
            out["M1"] = sampled[..., b + 1, :]
        return out

    def volume_samples(self, w: np.ndarray) -> dict[str, np.ndarray]:
        return self.samples(w[..., self.brows, :])


def build_layer(partition: LayerPartition, idx: int, model: SlownessModel,
                omega: float, profile: PmlProfile) -> LayerLocal:
    if not 0 <= idx < partition.L:
        raise PartitionError(f"layer index {idx} outside 0..{partition.L - 1}")
    return LayerLocal(partition, idx, model, omega, profile)


def build_layers(partition: LayerPartition, model: SlownessModel, omega: float,
                 profile: PmlProfile) -> list[LayerLocal]:
    return [build_layer(partition, i, model, omega, profile) for i in range(partition.L)]


# -- trace containers ---------------------------------------------------------

@dataclass
class TraceSet:
    """Per interface, the complex values on the grid rows (m, m+1)."""

    values: np.ndarray   # (K, 2, nxt)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 3 or self.values.shape[1] != 2:
            raise DimensionMismatchError(f"trace array must be (K, 2, nxt), got {self.values.shape}")

    @staticmethod
    def zeros(n_interfaces: int, nxt: int) -> "TraceSet":
        return TraceSet(np.zeros((n_interfaces, 2, nxt), dtype=complex))

    def copy(self) -> "TraceSet":
        return TraceSet(self.values.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __add__(self, other: "TraceSet") -> "TraceSet":
        return TraceSet(self.values + other.values)

    def __sub__(self, other: "TraceSet") -> "TraceSet":
        return TraceSet(self.values - other.values)

    def __mul__(self, a) -> "TraceSet":
        return TraceSet(self.values * a)

    __rmul__ = __mul__


@dataclass
class PolarizedTraceSet:
    down: TraceSet
    up: TraceSet

    @staticmethod
    def zeros(n_interfaces: int, nxt: int) -> "PolarizedTraceSet":
        return PolarizedTraceSet(TraceSet.zeros(n_interfaces, nxt),
                                 TraceSet.zeros(n_interfaces, nxt))

    def recombine(self) -> TraceSet:
        return self.down + self.up

    def norm(self) -> float:
        return float(np.hypot(self.down.norm(), self.up.norm()))

    def __add__(self, other: "PolarizedTraceSet") -> "PolarizedTraceSet":
        return PolarizedTraceSet(self.down + other.down, self.up + other.up)

    def __sub__(self, other: "PolarizedTraceSet") -> "PolarizedTraceSet":
        return PolarizedTraceSet(self.down - other.down, self.up - other.up)

    def __mul__(self, a) -> "PolarizedTraceSet":
        return PolarizedTraceSet(self.down * a, self.up * a)

    __rmul__ = __mul__

    def ravel(self) -> np.ndarray:
        """Unknown ordering: down-going by interface ascending, then up-going
        by interface descending."""
        return np.concatenate([self.down.values.ravel(),
                               self.up.values[::-1].ravel()])

    @staticmethod
    def unravel(x: np.ndarray, n_interfaces: int, nxt: int) -> "PolarizedTraceSet":
        half = n_interfaces * 2 * nxt
        down = x[:half].reshape(n_interfaces, 2, nxt)
        up = x[half:].reshape(n_interfaces, 2, nxt)[::-1]
        return PolarizedTraceSet(TraceSet(down.copy()), TraceSet(up.copy()))


def _traces_shape(layers: Sequence[LayerLocal]) -> tuple[int, int]:
    part = layers[0].partition
    return part.n_interfaces, part.grid.nxt


# -- interface system ---------------------------------------------------------

def local_rhs_samples(layers: Sequence[LayerLocal], f: ComplexField
                      ) -> tuple[TraceSet, TraceSet]:
    """Per-layer solves of the restricted source, sampled at the boundary rows.

    Returns (down, up): down = samples from the layer above each interface at
    rows (m, m+1); up = samples from the layer below at rows (m, m+1).  Their
    sum is the right-hand side of the trace system; they are the natural
    polarized right-hand side.
    """
    K, nxt = _traces_shape(layers)
    fd = TraceSet.zeros(K, nxt)
    fu = TraceSet.zeros(K, nxt)
    for lay in layers:
        s = lay.volume_samples(lay.solve_volume(lay.restrict(f.values)))
        if lay.bot_iface is not None:
            fd.values[lay.bot_iface, 0] = s["M0"]
            fd.values[lay.bot_iface, 1] = s["M1"]
        if lay.top_iface is not None:
            fu.values[lay.top_iface, 0] = s["N1"]
            fu.values[lay.top_iface, 1] = s["N0"]
    return fd, fu


def local_rhs(layers: Sequence[LayerLocal], f: ComplexField) -> TraceSet:
    """Right-hand side of the interface trace system."""
    fd, fu = local_rhs_samples(layers, f)
    return fd + fu


def _boundary_sources(lay: LayerLocal, t: np.ndarray, top: bool, bottom: bool) -> np.ndarray:
    src = np.zeros((len(lay.brows), lay.nxt), dtype=complex)
    if top and lay.top_iface is not None:
        lay.source_from_top(t[lay.top_iface], src)
    if bottom and lay.bot_iface is not None:
        lay.source_from_bottom(t[lay.bot_iface], src)
    return src


def apply_trace_system(layers: Sequence[LayerLocal], t: TraceSet) -> TraceSet:
    """Matrix-free application of the interface system (identity minus the
    sampled layer responses to the equivalent interface sources)."""
    K, nxt = _traces_shape(layers)
    if t.values.shape[0] != K:
        raise DimensionMismatchError(f"trace set has {t.values.shape[0]} interfaces, expected {K}")
    out = t.copy()
    for lay in layers:
        src = _boundary_sources(lay, t.values, top=True, bottom=True)
        s = lay.samples(lay.apply_boundary(src))
        if lay.bot_iface is not None:
            out.values[lay.bot_iface, 0] -= s["M0"]
            out.values[lay.bot_iface, 1] -= s["M1"]
        if lay.top_iface is not None:
            out.values[lay.top_iface, 0] -= s["N1"]
            out.values[lay.top_iface, 1] -= s["N0"]
    return out


def apply_polarized_system(layers: Sequence[LayerLocal], p: PolarizedTraceSet
                           ) -> PolarizedTraceSet:
    """2x2 block operator [[D_down, U], [L, D_up]] over (down, up) traces.

    D_down/D_up are block triangular with identity diagonal blocks (downward
    and upward pair transmission); U and L hold the same-interface couplings,
    which vanish on correctly polarized traces.  Four sub-solves per layer,
    batched through one factorization call.
    """
    K, nxt = _traces_shape(layers)
    od = p.down.copy()
    ou = p.up.copy()
    for lay in layers:
        src = np.stack([
            _boundary_sources(lay, p.down.values, top=True, bottom=False),
            _boundary_sources(lay, p.down.values, top=False, bottom=True),
            _boundary_sources(lay, p.up.values, top=True, bottom=False),
            _boundary_sources(lay, p.up.values, top=False, bottom=True),
        ])
        td, bd, tu, bu = lay.apply_boundary(src)
        s_td, s_bd = lay.samples(td), lay.samples(bd)
        s_tu, s_bu = lay.samples(tu), lay.samples(bu)
        k_bot, k_top = lay.bot_iface, lay.top_iface
        if k_bot is not None and k_top is not None:
            od.values[k_bot, 0] -= s_td["M0"] + s_tu["M0"]
            od.values[k_bot, 1] -= s_td["M1"] + s_tu["M1"]
        if k_bot is not None:
            ou.values[k_bot, 0] -= s_bd["M0"]
            ou.values[k_bot, 1] -= s_bd["M1"]
            od.values[k_bot, 0] -= s_bu["M0"]
            od.values[k_bot, 1] -= s_bu["M1"]
        if k_top is not None:
            od.values[k_top, 0] -= s_tu["N1"]
            od.values[k_top, 1] -= s_tu["N0"]
            ou.values[k_top, 0] -= s_td["N1"]
            ou.values[k_top, 1] -= s_td["N0"]
            if k_bot is not None:
                ou.values[k_top, 0] -= s_bu["N1"] + s_bd["N1"]
                ou.values[k_top, 1] -= s_bu["N0"] + s_bd["N0"]
    return PolarizedTraceSet(od, ou)


def gauss_seidel_sweep(layers: Sequence[LayerLocal], v: PolarizedTraceSet
                       ) -> PolarizedTraceSet:
    """Approximate inverse of the polarized system: one downward block
    backsubstitution, the cross coupling, then one upward backsubstitution.
    One boundary application per layer per sweep."""
    L = len(layers)
    xd = v.down.copy()
    for l in range(1, L - 1):
        lay = layers[l]
        src = _boundary_sources(lay, xd.values, top=True, bottom=False)
        s = lay.samples(lay.apply_boundary(src))
        xd.values[lay.bot_iface, 0] += s["M0"]
        xd.values[lay.bot_iface, 1] += s["M1"]
    zeros = TraceSet.zeros(*_traces_shape(layers))
    coupled = apply_polarized_system(layers, PolarizedTraceSet(xd, zeros))
    r = v.up - coupled.up
    xu = r.copy()
    for l in range(L - 2, 0, -1):
        lay = layers[l]
        src = _boundary_sources(lay, xu.values, top=False, bottom=True)
        s = lay.samples(lay.apply_boundary(src))
        xu.values[lay.top_iface, 0] += s["N1"]
        xu.values[lay.top_iface, 1] += s["N0"]
    return PolarizedTraceSet(xd, xu)


def reconstruct_volume(layers: Sequence[LayerLocal], t: TraceSet, f: ComplexField
                       ) -> ComplexField:
    """Per-layer solves with the volume source plus interface equivalent
    sources; owned rows concatenate to the global field."""
    grid = layers[0].partition.grid
    out = ComplexField.zeros(grid)
    for lay in layers:
        rhs = lay.restrict(f.values)
        src = _boundary_sources(lay, t.values, top=True, bottom=True)
        for pos, row in enumerate(lay.brows):
            rhs[row, :] += src[pos, :]
        w = lay.solve_volume(rhs)
        out.values[lay.g0: lay.g1, :] = w[lay.pad_top: lay.nloc - lay.pad_bot, :]
    return out


# -- end-to-end solve ---------------------------------------------------------

@dataclass
class SolveOptions:
    """Solver configuration for one frequency."""

    omega: float
    L: int = 2
    profile: PmlProfile | None = None
    cells: int | None = None                  # cells per layer; None = direct layer solves
    inner_strategy: str = "compressed-lu"     # or "nested-polarized"
    inner_eps: float | None = 1e-8            # None disables block compression
    tol: float = 1e-5
    inner_tol: float | None = None            # default 1e-2 * tol
    maxit: int = 60
    restart: int | None = None


def setup_layers(options: SolveOptions, model: SlownessModel) -> list[LayerLocal]:
    """Offline stage: partition, local factorizations, optional cell structures."""
    profile = options.profile or PmlProfile.default(model.grid, model.c_max)
    partition = partition_layers(model.grid, options.L)
    layers = build_layers(partition, model, options.omega, profile)
    if options.cells is not None and partition.L > 1:
        from .cells import CellSolver
        inner_tol = options.inner_tol if options.inner_tol is not None else 1e-2 * options.tol
        for lay in layers:
            lay.cells = CellSolver(lay, options.cells, strategy=options.inner_strategy,
                                   eps=options.inner_eps, tol=inner_tol)
    return layers


def outer_solve(options: SolveOptions, model: SlownessModel, f: ComplexField,
                tol: float | None = None, *, layers: Sequence[LayerLocal] | None = None,
                stage_seconds: dict | None = None,
                iterate_hook=None) -> tuple[ComplexField, GmresStats]:
    """Full online pipeline: interface right-hand side, preconditioned GMRES on
    the polarized trace system, recombination, and volume reconstruction."""
    tol = options.tol if tol is None else tol
    grid = model.grid
    times = stage_seconds if stage_seconds is not None else {}

    t0 = time.perf_counter()
    if layers is None:
        layers = setup_layers(options, model)
        times["offline_s"] = time.perf_counter() - t0

    if f.norm() == 0:
        times.setdefault("local_solves_s", 0.0)
        times.setdefault("sweeps_s", 0.0)
        times.setdefault("recombination_s", 0.0)
        return ComplexField.zeros(grid), GmresStats(0, [0.0], True)

    if len(layers) == 1:
        t0 = time.perf_counter()
        lay = layers[0]
        u = ComplexField(lay.solve_volume(lay.restrict(f.values)), grid)
        times["local_solves_s"] = time.perf_counter() - t0
        times.setdefault("sweeps_s", 0.0)
        times.setdefault("recombination_s", 0.0)
        return u, GmresStats(0, [0.0], True)

    K, nxt = _traces_shape(layers)
    t0 = time.perf_counter()
    fd, fu = local_rhs_samples(layers, f)
    times["local_solves_s"] = time.perf_counter() - t0

    rhs = PolarizedTraceSet(fd, fu)

    def apply_A(x: np.ndarray) -> np.ndarray:
        p = PolarizedTraceSet.unravel(x, K, nxt)
        return apply_polarized_system(layers, p).ravel()

    def apply_P(x: np.ndarray) -> np.ndarray:
        p = PolarizedTraceSet.unravel(x, K, nxt)
        return gauss_seidel_sweep(layers, p).ravel()

    callback = None
    if iterate_hook is not None:
        def callback(xk):
            iterate_hook(PolarizedTraceSet.unravel(xk, K, nxt))

    t0 = time.perf_counter()
    x, stats = gmres(apply_A, apply_P, rhs.ravel(), tol=tol, maxit=options.maxit,
                     restart=options.restart, callback=callback)
    times["sweeps_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    traces = PolarizedTraceSet.unravel(x, K, nxt).recombine()
    u = reconstruct_volume(layers, traces, f)
    times["recombination_s"] = time.perf_counter() - t0
    return u, stats
