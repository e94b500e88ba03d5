"""Nested decomposition of each layer into cells with precomputed interface
operators.

Each layer is split into vertical cells separated by interior column pairs,
mirroring the outer row-pair reduction rotated a quarter turn.  For every cell
the response to unit sources on its boundary lines (the layer's interface rows
restricted to the cell's owned columns, and the cell's interface column pairs)
is precomputed from one factorization and stored as dense or PLR-compressed
blocks.  A boundary-to-boundary application then needs no volume solve: form
the inner right-hand side from the external sources, solve the banded inner
interface system, and sample back - a three-step composition of block
matvecs.  The inner system is solved either by a block LU with explicitly
inverted diagonal blocks or by the polarized sweep applied recursively.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gmres import gmres
from .grid import HelmholtzOperator, shifted_sigma
from .layers import LayerLocal, PartitionError
from .plr import PlrMatrix, compress
from .sparse import Factorization, factorize

_COND_LIMIT = 1e12
_SOLVE_CHUNK_SCALARS = 16_000_000


class NearSingularBlockError(RuntimeError):
    """A diagonal block of the inner system is too ill-conditioned to invert."""


Block = "np.ndarray | PlrMatrix"


def _as_block(A: np.ndarray, eps: float | None, seed: int):
    return compress(A, eps=eps, seed=seed) if eps is not None else A


def _bmat(B, X: np.ndarray) -> np.ndarray:
    return B.matmat(X) if isinstance(B, PlrMatrix) else B @ X


def _bdense(B) -> np.ndarray:
    return B.to_dense() if isinstance(B, PlrMatrix) else B


def _checked_inv(A: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NearSingularBlockError(f"{what}: condition estimate {cond:.2e} > {_COND_LIMIT:.0e}")
    return np.linalg.inv(A)


@dataclass(frozen=True)
class CellPartition:
    """Cells per layer with owned column ranges over the layer's full width."""

    C: int
    col_ranges: tuple[tuple[int, int], ...]   # layer-local column ranges, cover [0, nxt)
    iface_cols: tuple[int, ...]               # interface j lives at columns (r_j, r_j + 1)


def partition_cells(layer: LayerLocal, C: int) -> CellPartition:
    grid = layer.partition.grid
    if C < 1:
        raise PartitionError(f"need at least one cell, got {C}")
    if grid.nx < 4 * C:
        raise PartitionError(f"{C} cells need >= {4 * C} interior columns, grid has {grid.nx}")
    base, rem = divmod(grid.nx, C)
    sizes = [base + (1 if i < rem else 0) for i in range(C)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    p = grid.npml
    ranges = []
    for c in range(C):
        q0 = 0 if c == 0 else p + int(bounds[c])
        q1 = layer.nxt if c == C - 1 else p + int(bounds[c + 1])
        ranges.append((q0, q1))
    iface = tuple(p + int(bounds[j + 1]) - 1 for j in range(C - 1))
    return CellPartition(C, tuple(ranges), iface)


class CellGreens:
    """Interface-to-interface response blocks of one cell.

    Boundary lines: ``E`` = the layer's boundary rows over the cell's owned
    columns (row-major, rows outer); ``L``/``R`` = the cell's left/right
    interface column pairs, stacked as (line at r_j, line at r_j + 1), each of
    the layer's full height.  ``blocks[(out, in)]`` maps raw unit sources on
    line ``in`` to field samples on line ``out``.
    """

    def __init__(self, layer: LayerLocal, part: CellPartition, index: int, *,
                 eps: float | None = None, seed: int = 0):
        self.index = index
        self.q0, self.q1 = part.col_ranges[index]
        self.wc = self.q1 - self.q0
        self.pad_l = layer.partition.grid.npml if index > 0 else 0
        self.pad_r = layer.partition.grid.npml if index < part.C - 1 else 0
        self.ncol = self.wc + self.pad_l + self.pad_r
        self.offset = self.q0 - self.pad_l
        self.nrow = layer.nloc
        op = layer.op
        sig_x = shifted_sigma(op.sig_x, self.offset, self.ncol,
                              self.pad_l, self.pad_r, layer.profile)
        m_loc = op.m[:, self.q0 - self.pad_l: self.q1 + self.pad_r]
        self.op = HelmholtzOperator(self.ncol, self.nrow, op.h, op.omega,
                                    m_loc, sig_x, op.sig_y)
        self.factor: Factorization = factorize(self.op.matrix())

        lines = {"E": self._ext_points(layer)}
        if index > 0:
            a = self.lcol(part.iface_cols[index - 1])
            lines["L"] = self._col_points([a, a + 1])
        if index < part.C - 1:
            a = self.lcol(part.iface_cols[index])
            lines["R"] = self._col_points([a, a + 1])
        self.lines = lines
        self._solve_unit_sources(eps, seed)

    def lcol(self, layer_col: int) -> int:
        return layer_col - self.offset

    def _ext_points(self, layer: LayerLocal) -> np.ndarray:
        own = np.arange(self.lcol(self.q0), self.lcol(self.q1 - 1) + 1)
        rows = np.repeat(layer.brows, own.size)
        cols = np.tile(own, len(layer.brows))
        return rows * self.ncol + cols

    def _col_points(self, cols: list[int]) -> np.ndarray:
        rows = np.tile(np.arange(self.nrow), len(cols))
        cc = np.repeat(cols, self.nrow)
        return cc + rows * self.ncol

    def _solve_unit_sources(self, eps, seed):
        names = list(self.lines)
        pts = np.concatenate([self.lines[k] for k in names])
        splits = np.cumsum([len(self.lines[k]) for k in names])[:-1]
        n = self.nrow * self.ncol
        samples = {k: np.empty((len(self.lines[k]), len(pts)), dtype=complex) for k in names}
        chunk = max(16, _SOLVE_CHUNK_SCALARS // n)
        for lo in range(0, len(pts), chunk):
            hi = min(lo + chunk, len(pts))
            rhs = np.zeros((n, hi - lo), dtype=complex)
            rhs[pts[lo:hi], np.arange(hi - lo)] = 1.0
            sol = self.factor.solve(rhs)
            for k in names:
                samples[k][:, lo:hi] = sol[self.lines[k], :]
        self.blocks = {}
        parts = dict(zip(names, np.split(np.arange(len(pts)), splits)))
        for ko in names:
            for ki in names:
                dense = samples[ko][:, parts[ki]]
                self.blocks[(ko, ki)] = _as_block(dense, eps,
                                                  seed + 7 * self.index + len(ko) + 3 * len(ki))


def build_cell_greens(layer: LayerLocal, part: CellPartition, index: int, *,
                      eps: float | None = None, seed: int = 0) -> CellGreens:
    if not 0 <= index < part.C:
        raise PartitionError(f"cell index {index} outside 0..{part.C - 1}")
    return CellGreens(layer, part, index, eps=eps, seed=seed)


def _pair_source_matrix(w: np.ndarray, side: str) -> np.ndarray:
    """Map a trace pair (values at columns r, r+1) to raw sources on those lines.

    ``side='right'``: sources into the cell left of the interface; ``'left'``:
    into the cell right of it.  w is the column-coupling weight per row.
    """
    H = w.size
    W = np.diag(w)
    Z = np.zeros((H, H), dtype=complex)
    if side == "right":
        return np.block([[Z, W], [-W, Z]])
    return np.block([[Z, -W], [W, Z]])


class InnerSystem:
    """Banded interface system of one layer at the cell level.

    Raw per-interface families: ``trans[j]`` (transmission from interface j-1
    through cell j), ``btrans[j]`` (from j+1 through cell j+1), ``refl[j]``
    (same-interface responses).  The stored system is row-normalized so its
    diagonal blocks are exact identities: sub/sup blocks carry inv_diag of the
    raw rows.  Right-hand-side and sampling maps keep references to the cell
    blocks (the sparse-block source and sample factors of the reduction).
    """

    def __init__(self, n: int, refl: list, trans: list, btrans: list, *,
                 eps: float | None = None, seed: int = 0,
                 layer: LayerLocal | None = None, part: CellPartition | None = None,
                 cells: Sequence[CellGreens] | None = None, weights=None):
        self.layer = layer
        self.part = part
        self.cells = list(cells) if cells is not None else None
        self.H = n // 2
        self.J = len(refl)
        self.eps = eps
        self.weights = weights
        if weights is not None:
            self.src_right = [_pair_source_matrix(w, "right") for w in weights]
            self.src_left = [_pair_source_matrix(w, "left") for w in weights]
        self.refl, self.trans, self.btrans = [], [], []
        self.inv_diag, self.sub, self.sup = [], [], []
        for j in range(self.J):
            inv_d = _checked_inv(np.eye(n) - refl[j],
                                 f"inner interface {j} diagonal block")
            self.refl.append(_as_block(refl[j], eps, seed + 11 * j))
            self.trans.append(None if trans[j] is None
                              else _as_block(trans[j], eps, seed + 11 * j + 1))
            self.btrans.append(None if btrans[j] is None
                               else _as_block(btrans[j], eps, seed + 11 * j + 2))
            self.inv_diag.append(_as_block(inv_d, eps, seed + 11 * j + 3))
            self.sub.append(None if trans[j] is None
                            else _as_block(-inv_d @ trans[j], eps, seed + 11 * j + 4))
            self.sup.append(None if btrans[j] is None
                            else _as_block(-inv_d @ btrans[j], eps, seed + 11 * j + 5))

    @staticmethod
    def from_cells(layer: LayerLocal, part: CellPartition, cells: Sequence[CellGreens],
                   eps: float | None = None, seed: int = 0) -> "InnerSystem":
        op = layer.op
        weights = [op.x_coupling(r + 1) for r in part.iface_cols]
        src_right = [_pair_source_matrix(w, "right") for w in weights]
        src_left = [_pair_source_matrix(w, "left") for w in weights]
        J = part.C - 1
        refl, trans, btrans = [], [], []
        for j in range(J):
            refl.append(_bdense(cells[j].blocks[("R", "R")]) @ src_right[j]
                        + _bdense(cells[j + 1].blocks[("L", "L")]) @ src_left[j])
            trans.append(None if j == 0
                         else _bdense(cells[j].blocks[("R", "L")]) @ src_left[j - 1])
            btrans.append(None if j == J - 1
                          else _bdense(cells[j + 1].blocks[("L", "R")]) @ src_right[j + 1])
        return InnerSystem(2 * layer.nloc, refl, trans, btrans, eps=eps, seed=seed,
                           layer=layer, part=part, cells=cells, weights=weights)

    # -- matvecs (X: (J, 2H, k)) ----------------------------------------------

    def matvec_raw(self, X: np.ndarray) -> np.ndarray:
        """Un-normalized combined system: (I - refl) x_j - trans x_{j-1} - btrans x_{j+1}."""
        out = X.copy()
        for j in range(self.J):
            out[j] -= _bmat(self.refl[j], X[j])
            if self.trans[j] is not None:
                out[j] -= _bmat(self.trans[j], X[j - 1])
            if self.btrans[j] is not None:
                out[j] -= _bmat(self.btrans[j], X[j + 1])
        return out

    def matvec(self, X: np.ndarray) -> np.ndarray:
        """Stored system with identity diagonal blocks."""
        out = X.copy()
        for j in range(self.J):
            if self.sub[j] is not None:
                out[j] += _bmat(self.sub[j], X[j - 1])
            if self.sup[j] is not None:
                out[j] += _bmat(self.sup[j], X[j + 1])
        return out

    def normalize_rhs(self, rhs: np.ndarray) -> np.ndarray:
        return np.stack([_bmat(self.inv_diag[j], rhs[j]) for j in range(self.J)]) \
            if self.J else rhs

    def external_rhs(self, ext: list[np.ndarray]) -> np.ndarray:
        """Raw combined right-hand side from per-cell external sources
        (each (R * wc, k)): the source-to-inner sparse-block factor."""
        k = ext[0].shape[-1]
        rhs = np.zeros((self.J, 2 * self.H, k), dtype=complex)
        for j in range(self.J):
            rhs[j] = _bmat(self.cells[j].blocks[("R", "E")], ext[j]) \
                   + _bmat(self.cells[j + 1].blocks[("L", "E")], ext[j + 1])
        return rhs

    def external_rhs_split(self, ext: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """The same samples kept as (down-going, up-going) halves."""
        k = ext[0].shape[-1]
        fd = np.zeros((self.J, 2 * self.H, k), dtype=complex)
        fu = np.zeros_like(fd)
        for j in range(self.J):
            fd[j] = _bmat(self.cells[j].blocks[("R", "E")], ext[j])
            fu[j] = _bmat(self.cells[j + 1].blocks[("L", "E")], ext[j + 1])
        return fd, fu

    def sample_exterior(self, ext: list[np.ndarray], traces: np.ndarray) -> list[np.ndarray]:
        """Per-cell boundary-row samples from external sources plus inner traces
        (the inner-to-sample sparse-block factor applied after the inner solve)."""
        out = []
        for c, cell in enumerate(self.cells):
            w = _bmat(cell.blocks[("E", "E")], ext[c])
            if c > 0 and self.J:
                src = self.src_left[c - 1] @ traces[c - 1]
                w = w + _bmat(cell.blocks[("E", "L")], src)
            if c < self.part.C - 1 and self.J:
                src = self.src_right[c] @ traces[c]
                w = w + _bmat(cell.blocks[("E", "R")], src)
            out.append(w)
        return out

    def stored_scalars(self) -> int:
        total = 0
        for cell in self.cells:
            for b in cell.blocks.values():
                total += _block_scalars(b)
        for group in (self.refl, self.trans, self.btrans, self.inv_diag, self.sub, self.sup):
            for b in group:
                if b is not None:
                    total += _block_scalars(b)
        return total


def _block_scalars(B) -> int:
    if isinstance(B, PlrMatrix):
        return sum(leaf.stored for leaf in B.leaves)
    return B.size


def assemble_inner(layer: LayerLocal, cells: Sequence[CellGreens], *,
                   part: CellPartition | None = None, eps: float | None = None,
                   seed: int = 0) -> InnerSystem:
    if part is None:
        part = partition_cells(layer, len(cells))
    if len(cells) != part.C:
        raise PartitionError(f"{len(cells)} cell blocks for {part.C} cells")
    return InnerSystem.from_cells(layer, part, cells, eps=eps, seed=seed)


class InnerLU:
    """Block LU of the banded inner system, no pivoting, no fill beyond the band.

    Diagonal factors are inverted explicitly so both substitutions are pure
    block matvecs.  Built from (and stored in) the identity-diagonal form.
    """

    def __init__(self, system: InnerSystem, seed: int = 0):
        self.J = system.J
        self.sup = system.sup
        eps = system.eps
        self.L: list = [None] * self.J
        self.inv_U: list = []
        U_prev_inv = None
        for j in range(self.J):
            U = np.eye(2 * system.H, dtype=complex)
            if j > 0 and system.sub[j] is not None:
                Lj = _bmat(system.sub[j], U_prev_inv)
                self.L[j] = _as_block(Lj, eps, seed + 13 * j)
                if system.sup[j - 1] is not None:
                    U = U - Lj @ _bdense(system.sup[j - 1])
            U_prev_inv = _checked_inv(U, f"inner LU diagonal block {j}")
            self.inv_U.append(_as_block(U_prev_inv, eps, seed + 13 * j + 1))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Forward then backward substitution; rhs (J, 2H, k)."""
        J = self.J
        y = rhs.copy()
        for j in range(1, J):
            if self.L[j] is not None:
                y[j] -= _bmat(self.L[j], y[j - 1])
        x = np.empty_like(y)
        for j in range(J - 1, -1, -1):
            t = y[j]
            if j < J - 1 and self.sup[j] is not None:
                t = t - _bmat(self.sup[j], x[j + 1])
            x[j] = _bmat(self.inv_U[j], t)
        return x

    def apply_L(self, X: np.ndarray) -> np.ndarray:
        out = X.copy()
        for j in range(1, self.J):
            if self.L[j] is not None:
                out[j] += _bmat(self.L[j], X[j - 1])
        return out

    def apply_U(self, X: np.ndarray) -> np.ndarray:
        out = np.empty_like(X)
        for j in range(self.J):
            t = np.linalg.solve(_bdense(self.inv_U[j]), X[j])
            if j < self.J - 1 and self.sup[j] is not None:
                t = t + _bmat(self.sup[j], X[j + 1])
            out[j] = t
        return out


def block_lu_inner(system: InnerSystem, seed: int = 0) -> InnerLU:
    return InnerLU(system, seed=seed)


def _polarized_inner_solve(system: InnerSystem, fd: np.ndarray, fu: np.ndarray,
                           tol: float, maxit: int = 60) -> tuple[np.ndarray, bool]:
    """Recursive application of the polarized sweep to the inner system.

    fd/fu: (J, 2H) split right-hand side.  Returns the recombined traces.
    """
    J, n = system.J, 2 * system.H

    def apply_A(x):
        pd = x[:J * n].reshape(J, n, 1)
        pu = x[J * n:].reshape(J, n, 1)
        od, ou = pd.copy(), pu.copy()
        for j in range(J):
            if system.trans[j] is not None:
                od[j] -= _bmat(system.trans[j], pd[j - 1] + pu[j - 1])
            od[j] -= _bmat(system.refl[j], pu[j])
            ou[j] -= _bmat(system.refl[j], pd[j])
            if system.btrans[j] is not None:
                ou[j] -= _bmat(system.btrans[j], pd[j + 1] + pu[j + 1])
        return np.concatenate([od.ravel(), ou.ravel()])

    def apply_P(x):
        vd = x[:J * n].reshape(J, n, 1)
        vu = x[J * n:].reshape(J, n, 1)
        xd = vd.copy()
        for j in range(1, J):
            if system.trans[j] is not None:
                xd[j] += _bmat(system.trans[j], xd[j - 1])
        r = vu.copy()
        for j in range(J):
            r[j] += _bmat(system.refl[j], xd[j])
            if system.btrans[j] is not None:
                r[j] += _bmat(system.btrans[j], xd[j + 1])
        xu = r
        for j in range(J - 2, -1, -1):
            if system.btrans[j] is not None:
                xu[j] += _bmat(system.btrans[j], xu[j + 1])
        return np.concatenate([xd.ravel(), xu.ravel()])

    b = np.concatenate([fd.ravel(), fu.ravel()])
    x, stats = gmres(apply_A, apply_P, b, tol=tol, maxit=maxit)
    traces = x[:J * n].reshape(J, n) + x[J * n:].reshape(J, n)
    return traces, stats.converged


def inner_solve(layer: LayerLocal, rhs: np.ndarray, strategy: str, *,
                system: InnerSystem, lu: InnerLU | None = None,
                tol: float = 1e-7,
                rhs_split: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Solve the inner interface system for the given raw combined right-hand
    side (J, 2H).  ``compressed-lu`` substitutes through the block factors;
    ``nested-polarized`` runs the preconditioned iteration recursively.
    """
    rhs = np.asarray(rhs, dtype=complex)
    squeeze = rhs.ndim == 2
    X = rhs[..., None] if squeeze else rhs
    if strategy == "compressed-lu":
        if lu is None:
            lu = block_lu_inner(system)
        out = lu.solve(system.normalize_rhs(X))
    elif strategy == "nested-polarized":
        if rhs_split is None:
            fd, fu = X, np.zeros_like(X)
        else:
            fd, fu = rhs_split
            fd = fd[..., None] if fd.ndim == 2 else fd
            fu = fu[..., None] if fu.ndim == 2 else fu
        cols = []
        for k in range(X.shape[-1]):
            traces, ok = _polarized_inner_solve(system, fd[..., k], fu[..., k], tol)
            if not ok:
                raise RuntimeError("inner polarized iteration did not converge")
            cols.append(traces)
        out = np.stack(cols, axis=-1)
    else:
        raise ValueError(f"unknown inner strategy {strategy!r}")
    return out[..., 0] if squeeze else out


class CellSolver:
    """Boundary-application backend of one layer via its cell decomposition."""

    def __init__(self, layer: LayerLocal, C: int, *, strategy: str = "compressed-lu",
                 eps: float | None = 1e-8, tol: float = 1e-7, seed: int = 0):
        if strategy not in ("compressed-lu", "nested-polarized"):
            raise ValueError(f"unknown inner strategy {strategy!r}")
        self.layer = layer
        self.strategy = strategy
        self.tol = tol
        self.part = partition_cells(layer, C)
        self.greens = [build_cell_greens(layer, self.part, c, eps=eps, seed=seed + 101 * c)
                       for c in range(self.part.C)]
        self.system = InnerSystem.from_cells(layer, self.part, self.greens, eps=eps, seed=seed)
        self.lu = block_lu_inner(self.system, seed=seed) \
            if strategy == "compressed-lu" and self.system.J else None

    def stored_scalars(self) -> int:
        total = self.system.stored_scalars()
        if self.lu is not None:
            for group in (self.lu.L, self.lu.inv_U):
                for b in group:
                    if b is not None:
                        total += _block_scalars(b)
        return total

    def apply(self, src: np.ndarray) -> np.ndarray:
        """src (..., R, nxt) raw sources on the layer's boundary rows."""
        lead = src.shape[:-2]
        R, nxt = src.shape[-2:]
        flat = src.reshape(-1, R, nxt)
        k = flat.shape[0]
        ext = []
        for cell in self.greens:
            q = flat[:, :, cell.q0:cell.q1]                    # (k, R, wc)
            ext.append(q.reshape(k, R * cell.wc).T.copy())     # (R*wc, k)
        if self.system.J:
            if self.strategy == "compressed-lu":
                rhs = self.system.external_rhs(ext)
                traces = self.lu.solve(self.system.normalize_rhs(rhs))
            else:
                fd, fu = self.system.external_rhs_split(ext)
                traces = inner_solve(self.layer, self.system.external_rhs(ext),
                                     "nested-polarized", system=self.system,
                                     tol=self.tol, rhs_split=(fd, fu))
        else:
            traces = np.zeros((0, 2 * self.layer.nloc, k), dtype=complex)
        sampled = self.system.sample_exterior(ext, traces)
        out = np.zeros((k, R, nxt), dtype=complex)
        for cell, w in zip(self.greens, sampled):
            out[:, :, cell.q0:cell.q1] = w.T.reshape(k, R, cell.wc)
        return out.reshape(lead + (R, nxt))


def apply_green_nested(layer: LayerLocal, src: np.ndarray, lu: InnerLU | None,
                       system: InnerSystem) -> np.ndarray:
    """Three-step boundary-to-boundary application through the cell reduction:
    external sources to inner right-hand side, inner solve, sample back."""
    src = np.asarray(src, dtype=complex)
    lead = src.shape[:-2]
    R, nxt = src.shape[-2:]
    flat = src.reshape(-1, R, nxt)
    k = flat.shape[0]
    ext = [flat[:, :, c.q0:c.q1].reshape(k, R * c.wc).T.copy() for c in system.cells]
    if system.J:
        rhs = system.external_rhs(ext)
        if lu is None:
            lu = block_lu_inner(system)
        traces = lu.solve(system.normalize_rhs(rhs))
    else:
        traces = np.zeros((0, 2 * layer.nloc, k), dtype=complex)
    sampled = system.sample_exterior(ext, traces)
    out = np.zeros((k, R, nxt), dtype=complex)
    for cell, w in zip(system.cells, sampled):
        out[:, :, cell.q0:cell.q1] = w.T.reshape(k, R, cell.wc)
    return out.reshape(lead + (R, nxt))
