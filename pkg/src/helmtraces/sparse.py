"""Sparse direct kernels: LU factorization with fill-reducing ordering and solves.

Backed by SuperLU (scipy.sparse.linalg.splu) with its COLAMD ordering; the
contract here is solve accuracy plus an explicit tiny-pivot failure, not a
specific ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import DimensionMismatchError


class SingularPivotError(RuntimeError):
    """A pivot fell below 1e-14 times the largest entry magnitude.

    ``step`` is the elimination step (diagonal index) that failed, when known.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


_PIVOT_RTOL = 1e-14


@dataclass
class Factorization:
    """Immutable LU factorization; safe for concurrent solves."""

    n: int
    _lu: spla.SuperLU

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise DimensionMismatchError(f"rhs length {b.shape[0]} != {self.n}")
        return self._lu.solve(np.ascontiguousarray(b, dtype=complex))


def factorize(A: sp.spmatrix) -> Factorization:
    A = sp.csc_matrix(A, dtype=complex)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix is {A.shape}, not square")
    scale = max(np.abs(A.data).max(), 1.0) if A.nnz else 1.0
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SingularPivotError(str(exc)) from exc
    piv = np.abs(lu.U.diagonal())
    bad = np.where(~(piv > _PIVOT_RTOL * scale))[0]
    if bad.size:
        step = int(bad[0])
        raise SingularPivotError(
            f"pivot {piv[step]:.3e} below {_PIVOT_RTOL * scale:.3e} "
            f"at elimination step {step}", step=step)
    return Factorization(A.shape[0], lu)


def solve(F: Factorization, b: np.ndarray) -> np.ndarray:
    """Solve A x = b (or batched A X = B for 2D b, one system per column)."""
    return F.solve(b)
