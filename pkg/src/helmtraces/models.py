"""Squared-slowness media on a grid, synthetic benchmark models, and model file IO.

Model file format (HELM-M v1): one ASCII header line ``HELM-M v1 <nx> <ny>``
followed by nx*ny little-endian float64 values of m over the interior,
row-major with x fastest.  The absorbing collar is filled by edge replication
on load.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .grid import DimensionMismatchError, Grid


@dataclass
class SlownessModel:
    """Squared slowness m(x) = 1/c(x)^2 [s^2/m^2] over the full padded grid."""

    m: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        if self.m.shape != (self.grid.nyt, self.grid.nxt):
            raise DimensionMismatchError(
                f"m shape {self.m.shape} != grid ({self.grid.nyt}, {self.grid.nxt})")
        if not np.all(self.m > 0):
            raise ValueError("squared slowness must be positive everywhere")

    @staticmethod
    def from_interior(grid: Grid, m_int: np.ndarray) -> "SlownessModel":
        m_int = np.asarray(m_int, dtype=float)
        if m_int.shape != (grid.ny, grid.nx):
            raise DimensionMismatchError(
                f"interior shape {m_int.shape} != ({grid.ny}, {grid.nx})")
        return SlownessModel(np.pad(m_int, grid.npml, mode="edge"), grid)

    def interior(self) -> np.ndarray:
        sy, sx = self.grid.interior_slices()
        return self.m[sy, sx]

    @property
    def c_min(self) -> float:
        return float(1.0 / np.sqrt(self.m.max()))

    @property
    def c_max(self) -> float:
        return float(1.0 / np.sqrt(self.m.min()))


def synthetic_model(kind: str, grid: Grid, **params) -> SlownessModel:
    """Deterministic benchmark media.

    kinds: ``constant`` (c), ``vertical-gradient`` (c_top, c_bottom),
    ``lens`` (c0, dc, radius_frac), ``rough-layered`` (seed, c_lo, c_hi,
    n_layers) -- a piecewise-smooth layered medium with seeded lateral
    perturbations standing in for a marine survey model, contrast <= 3:1.
    """
    ny, nx = grid.ny, grid.nx
    if kind == "constant":
        c = float(params.get("c", 1500.0))
        if c <= 0:
            raise ValueError(f"need c > 0, got {c}")
        m_int = np.full((ny, nx), 1.0 / c**2)
    elif kind == "vertical-gradient":
        c_top = float(params.get("c_top", 1500.0))
        c_bottom = float(params.get("c_bottom", 3000.0))
        if c_top <= 0 or c_bottom <= 0:
            raise ValueError("need positive velocities")
        c = np.linspace(c_top, c_bottom, ny)[:, None] * np.ones((1, nx))
        m_int = 1.0 / c**2
    elif kind == "lens":
        c0 = float(params.get("c0", 2000.0))
        dc = float(params.get("dc", -400.0))
        radius_frac = float(params.get("radius_frac", 0.2))
        if c0 <= 0 or c0 + dc <= 0:
            raise ValueError("lens velocities must stay positive")
        jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        r2 = ((ii - nx / 2.0)**2 + (jj - ny / 2.0)**2) / (radius_frac * min(nx, ny))**2
        c = c0 + dc * np.exp(-r2)
        m_int = 1.0 / c**2
    elif kind == "rough-layered":
        seed = int(params.get("seed", 0))
        c_lo = float(params.get("c_lo", 1500.0))
        c_hi = float(params.get("c_hi", 3000.0))
        n_layers = int(params.get("n_layers", 6))
        rng = np.random.default_rng(seed)
        fracs = np.sort(rng.uniform(0.1, 0.9, size=n_layers - 1))
        vals = rng.uniform(c_lo, c_hi, size=n_layers)
        wiggle = gaussian_filter1d(rng.standard_normal((n_layers - 1, nx)),
                                   sigma=nx / 8.0, axis=1, mode="wrap")
        wiggle *= (0.03 * ny) / max(np.abs(wiggle).max(), 1e-12)
        depth = np.arange(ny, dtype=float)[:, None]
        c = np.full((ny, nx), vals[0])
        for i, fr in enumerate(fracs):
            c = np.where(depth >= fr * ny + wiggle[i], vals[i + 1], c)
        bump = gaussian_filter(rng.standard_normal((ny, nx)), sigma=max(ny / 16.0, 2.0))
        bump *= 0.05 / max(np.abs(bump).max(), 1e-12)
        c = np.clip(c * (1.0 + bump), 0.95 * c_lo, 1.1 * c_hi)
        m_int = 1.0 / c**2
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return SlownessModel.from_interior(grid, m_int)


_MODEL_MAGIC = "HELM-M v1"


def save_model(model: SlownessModel, path) -> None:
    grid = model.grid
    with open(path, "wb") as fh:
        fh.write(f"{_MODEL_MAGIC} {grid.nx} {grid.ny}\n".encode("ascii"))
        fh.write(model.interior().astype("<f8").tobytes())


def load_model(path, grid: Grid) -> SlownessModel:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 4 or " ".join(parts[:2]) != _MODEL_MAGIC:
            raise ValueError(f"not a {_MODEL_MAGIC} file: {header!r}")
        nx, ny = int(parts[2]), int(parts[3])
        if (nx, ny) != (grid.nx, grid.ny):
            raise DimensionMismatchError(
                f"file is {nx} x {ny}, grid interior is {grid.nx} x {grid.ny}")
        payload = fh.read(nx * ny * 8)
        if len(payload) != nx * ny * 8:
            raise OSError(f"truncated model file: {path}")
        m_int = np.frombuffer(payload, dtype="<f8").reshape(ny, nx)
    if not np.all(m_int > 0):
        raise ValueError("model file contains non-positive slowness values")
    return SlownessModel.from_interior(grid, m_int)
