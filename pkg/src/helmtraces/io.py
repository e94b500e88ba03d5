"""Field dump formats.

HELM-U v1: one ASCII header line ``HELM-U v1 <nx> <ny>`` followed by nx*ny
interleaved (real, imag) little-endian float64 pairs, row-major with x fastest.
The PGM dump is an 8-bit binary graymap of Re(u), normalized symmetrically so
zero maps to 128.
"""

from __future__ import annotations

import numpy as np

_FIELD_MAGIC = "HELM-U v1"


def save_field_array(u: np.ndarray, path) -> None:
    u = np.asarray(u, dtype=complex)
    ny, nx = u.shape
    inter = np.empty((ny, nx, 2), dtype="<f8")
    inter[..., 0] = u.real
    inter[..., 1] = u.imag
    with open(path, "wb") as fh:
        fh.write(f"{_FIELD_MAGIC} {nx} {ny}\n".encode("ascii"))
        fh.write(inter.tobytes())


def load_field_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 4 or " ".join(parts[:2]) != _FIELD_MAGIC:
            raise ValueError(f"not a {_FIELD_MAGIC} file: {header!r}")
        nx, ny = int(parts[2]), int(parts[3])
        payload = fh.read(nx * ny * 16)
        if len(payload) != nx * ny * 16:
            raise OSError(f"truncated field file: {path}")
    inter = np.frombuffer(payload, dtype="<f8").reshape(ny, nx, 2)
    return inter[..., 0] + 1j * inter[..., 1]


def save_pgm(u: np.ndarray, path) -> None:
    """Binary PGM of Re(u): [-max|Re u|, +max|Re u|] -> [0, 255], zero -> 128."""
    re = np.asarray(u).real
    ny, nx = re.shape
    peak = np.abs(re).max()
    if peak == 0:
        pix = np.full((ny, nx), 128, dtype=np.uint8)
    else:
        pix = np.clip(np.rint(128.0 + 127.0 * re / peak), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
