"""Discretized Helmholtz problems: regular grid, PML stretching, 5-point assembly.

The grid covers the physical interior plus an absorbing collar of ``npml`` points
on every side.  Absorption profiles vanish at the collar node adjacent to the
interior (and at the half-point just inside it), so the difference coefficients
coupling interior and collar are unstretched.  Subdomain operators built with
the same convention then agree exactly with the parent operator on the rows and
columns they own, which the interface reduction relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


class InvalidGridError(ValueError):
    """Grid parameters violate the dimension invariants."""


class DimensionMismatchError(ValueError):
    """Array dimensions do not match the grid they are used with."""


@dataclass(frozen=True)
class Grid:
    """Regular grid: ``nx`` x ``ny`` interior points, spacing ``h``, collar ``npml``.

    Unknowns are ordered row-major with x fastest, collar included:
    ``index(ix, iy) = iy * nxt + ix`` over the total extent ``nxt x nyt``.
    """

    nx: int
    ny: int
    h: float
    npml: int

    @property
    def nxt(self) -> int:
        return self.nx + 2 * self.npml

    @property
    def nyt(self) -> int:
        return self.ny + 2 * self.npml

    @property
    def n_total(self) -> int:
        return self.nxt * self.nyt

    def index(self, ix: int, iy: int) -> int:
        return iy * self.nxt + ix

    def point(self, k: int) -> tuple[int, int]:
        return k % self.nxt, k // self.nxt

    def interior_slices(self) -> tuple[slice, slice]:
        """(y, x) slices selecting the physical interior of a full-grid array."""
        p = self.npml
        return slice(p, p + self.ny), slice(p, p + self.nx)


def build_grid(nx: int, ny: int, h: float, npml: int) -> Grid:
    """Validated grid constructor.  ``npml = 0`` is the Dirichlet test mode."""
    if nx < 4 or ny < 4:
        raise InvalidGridError(f"need nx, ny >= 4, got ({nx}, {ny})")
    if not h > 0:
        raise InvalidGridError(f"need h > 0, got {h}")
    if npml != 0 and npml < 2:
        raise InvalidGridError(f"need npml >= 2 (or 0 for Dirichlet mode), got {npml}")
    return Grid(nx, ny, h, npml)


@dataclass(frozen=True)
class PmlProfile:
    """Polynomial absorption ramp: sigma(t) = sigma_max * t**order, t in [0, 1]."""

    sigma_max: float
    order: int = 2

    def __post_init__(self):
        if not self.sigma_max > 0:
            raise ValueError(f"need sigma_max > 0, got {self.sigma_max}")

    @staticmethod
    def default(grid: Grid, c_ref: float, reflection: float = 1e-8) -> "PmlProfile":
        """Quadratic ramp sized for a target normal-incidence reflection.

        The round-trip damping of a quadratic profile of width W is
        exp(-2 sigma_max W / (3 c)), so sigma_max = -1.5 ln(R) c / W.
        """
        w = max(grid.npml, 1) * grid.h
        return PmlProfile(sigma_max=-1.5 * np.log(reflection) * c_ref / w)


def pml_stretch(depth_fraction: float, profile: PmlProfile, omega: float) -> complex:
    """Complex coordinate stretch s = 1 + i sigma(t) / omega at relative depth t."""
    t = np.asarray(depth_fraction, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError(f"depth_fraction outside [0, 1]: {depth_fraction}")
    if not omega > 0:
        raise ValueError(f"need omega > 0, got {omega}")
    s = 1.0 + 1j * profile.sigma_max * t**profile.order / omega
    return complex(s) if np.isscalar(depth_fraction) else s


SigmaFn = Callable[[np.ndarray], np.ndarray]


def axis_sigma(n: int, pad_lo: int, pad_hi: int, profile: PmlProfile) -> SigmaFn:
    """sigma as a function of continuous axis coordinate xi in [-0.5, n - 0.5].

    The ramp is zero at the first collar node next to the owned region and
    reaches sigma_max at the outermost node, so depth is measured over
    (pad - 1) cells.  Negative depths clip to zero, which keeps the half-point
    between the owned region and the collar unstretched.
    """

    def sigma(xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        s = np.zeros_like(xi)
        if pad_lo > 0:
            t = np.clip(((pad_lo - 1) - xi) / max(pad_lo - 1, 1), 0.0, 1.0)
            s = s + profile.sigma_max * t**profile.order
        if pad_hi > 0:
            t = np.clip((xi - (n - pad_hi)) / max(pad_hi - 1, 1), 0.0, 1.0)
            s = s + profile.sigma_max * t**profile.order
        return s

    return sigma


def shifted_sigma(parent: SigmaFn, offset: int, n: int, pad_lo: int, pad_hi: int,
                  profile: PmlProfile) -> SigmaFn:
    """Axis profile of a subdomain: parent profile on owned points plus artificial
    ramps on appended collars.  ``offset`` maps local coordinate 0 to the parent
    coordinate, so owned points see exactly the parent absorption."""
    extra = axis_sigma(n, pad_lo, pad_hi, profile)

    def sigma(xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return parent(xi + offset) + extra(xi)

    return sigma


class HelmholtzOperator:
    """5-point Helmholtz operator on a (possibly padded) rectangular grid.

    Complex-symmetric form: fluxes carry s_y/s_x (x direction) and s_x/s_y
    (y direction) at half-points, the zeroth-order term carries s_x * s_y.
    With all stretches equal to one this is the classical stencil and the
    matrix is real-symmetric for real m.
    """

    def __init__(self, nxt: int, nyt: int, h: float, omega: float,
                 m: np.ndarray, sig_x: SigmaFn, sig_y: SigmaFn):
        if m.shape != (nyt, nxt):
            raise DimensionMismatchError(f"m shape {m.shape} != ({nyt}, {nxt})")
        self.nxt, self.nyt, self.h, self.omega = nxt, nyt, h, omega
        self.m = m
        self.sig_x, self.sig_y = sig_x, sig_y
        self._sx_n = self._stretch(sig_x(np.arange(nxt, dtype=float)))
        self._sx_h = self._stretch(sig_x(np.arange(nxt + 1, dtype=float) - 0.5))
        self._sy_n = self._stretch(sig_y(np.arange(nyt, dtype=float)))
        self._sy_h = self._stretch(sig_y(np.arange(nyt + 1, dtype=float) - 0.5))

    def _stretch(self, sig: np.ndarray) -> np.ndarray:
        if self.omega > 0:
            return 1.0 + 1j * sig / self.omega
        if np.any(sig != 0):
            raise ValueError("omega = 0 is only valid without absorption")
        return np.ones_like(sig, dtype=complex)

    def matrix(self) -> sp.csc_matrix:
        nxt, nyt, h = self.nxt, self.nyt, self.h
        h2 = h * h
        ax = self._sy_n[:, None] / self._sx_h[None, :]   # (nyt, nxt+1)
        ay = self._sx_n[None, :] / self._sy_h[:, None]   # (nyt+1, nxt)
        jj, ii = np.meshgrid(np.arange(nyt), np.arange(nxt), indexing="ij")
        idx = jj * nxt + ii
        diag = (ax[:, 1:] + ax[:, :-1] + ay[1:, :] + ay[:-1, :]) / h2 \
            - self._sx_n[None, :] * self._sy_n[:, None] * self.m * self.omega**2
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [diag.ravel()]
        cx = -np.broadcast_to(ax[:, 1:-1], (nyt, nxt - 1)) / h2
        left, right = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        rows += [left, right]
        cols += [right, left]
        vals += [cx.ravel(), cx.ravel()]
        cy = -np.broadcast_to(ay[1:-1, :], (nyt - 1, nxt)) / h2
        up, down = idx[:-1, :].ravel(), idx[1:, :].ravel()
        rows += [up, down]
        cols += [down, up]
        vals += [cy.ravel(), cy.ravel()]
        H = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nxt * nyt, nxt * nyt))
        return H.tocsc()

    def y_coupling(self, j_half: int) -> np.ndarray:
        """Magnitude of the coupling between rows j_half-1 and j_half, per column.

        The matrix entry is the negative of this, so equivalent interface
        sources carry these weights."""
        return (self._sx_n / self._sy_h[j_half]) / (self.h * self.h)

    def x_coupling(self, i_half: int) -> np.ndarray:
        """Coupling between columns i_half-1 and i_half, per row."""
        return (self._sy_n / self._sx_h[i_half]) / (self.h * self.h)


@dataclass
class ComplexField:
    """Complex solution or source values over a full grid (collar included)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.nyt, self.grid.nxt):
            raise DimensionMismatchError(
                f"field shape {self.values.shape} != grid ({self.grid.nyt}, {self.grid.nxt})")

    @staticmethod
    def zeros(grid: Grid) -> "ComplexField":
        return ComplexField(np.zeros((grid.nyt, grid.nxt), dtype=complex), grid)

    @staticmethod
    def point_source(grid: Grid, ix: int, iy: int, amplitude: complex = 1.0) -> "ComplexField":
        """Delta source of magnitude amplitude / h**2 at interior point (ix, iy)."""
        if not (0 <= ix < grid.nx and 0 <= iy < grid.ny):
            raise InvalidGridError(f"source ({ix}, {iy}) outside the interior")
        f = ComplexField.zeros(grid)
        f.values[grid.npml + iy, grid.npml + ix] = amplitude / grid.h**2
        return f

    def interior(self) -> np.ndarray:
        sy, sx = self.grid.interior_slices()
        return self.values[sy, sx]

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def global_operator(grid: Grid, model, omega: float, profile: PmlProfile) -> HelmholtzOperator:
    """Operator for the full padded grid of a slowness model."""
    if model.grid != grid:
        raise DimensionMismatchError("model grid does not match")
    p = grid.npml
    sig_x = axis_sigma(grid.nxt, p, p, profile)
    sig_y = axis_sigma(grid.nyt, p, p, profile)
    return HelmholtzOperator(grid.nxt, grid.nyt, grid.h, omega, model.m, sig_x, sig_y)


def assemble_helmholtz(grid: Grid, model, omega: float, profile: PmlProfile) -> sp.csc_matrix:
    """Global system matrix H with at most 5 nonzeros per row."""
    return global_operator(grid, model, omega, profile).matrix()
