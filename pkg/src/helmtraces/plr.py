"""Partitioned low-rank (PLR) compression of dense complex matrices.

Adaptive dyadic subdivision on index ranges: each node is stored as a rank-r
factor pair when that strictly beats dense storage at the requested accuracy,
else it is split in four; blocks at or below the leaf size stay dense.  Every
low-rank leaf satisfies ||block - U V||_F <= eps ||block||_F, which gives the
same bound globally because leaf errors are orthogonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DimensionMismatchError

_RANDOMIZED_MIN = 256
_OVERSAMPLE = 8
_POWER_ITERATIONS = 1


@dataclass
class PlrLeaf:
    r0: int
    r1: int
    c0: int
    c1: int
    dense: np.ndarray | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.r1 - self.r0, self.c1 - self.c0

    @property
    def rank(self) -> int | None:
        return None if self.dense is not None else self.u.shape[1]

    @property
    def stored(self) -> int:
        if self.dense is not None:
            return self.dense.size
        return self.u.size + self.v.size


@dataclass
class PlrMatrix:
    shape: tuple[int, int]
    eps: float
    max_leaf: int
    leaves: list[PlrLeaf] = field(default_factory=list)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matmat(v.reshape(-1, 1)).ravel()

    def matmat(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=complex)
        if V.shape[0] != self.shape[1]:
            raise DimensionMismatchError(f"operand rows {V.shape[0]} != {self.shape[1]}")
        out = np.zeros((self.shape[0],) + V.shape[1:], dtype=complex)
        for leaf in self.leaves:
            block = V[leaf.c0:leaf.c1]
            if leaf.dense is not None:
                out[leaf.r0:leaf.r1] += leaf.dense @ block
            elif leaf.rank:
                out[leaf.r0:leaf.r1] += leaf.u @ (leaf.v @ block)
        return out

    def to_dense(self) -> np.ndarray:
        A = np.zeros(self.shape, dtype=complex)
        for leaf in self.leaves:
            if leaf.dense is not None:
                A[leaf.r0:leaf.r1, leaf.c0:leaf.c1] = leaf.dense
            else:
                A[leaf.r0:leaf.r1, leaf.c0:leaf.c1] = leaf.u @ leaf.v
        return A


@dataclass(frozen=True)
class PlrStats:
    stored: int
    dense_equivalent: int
    ratio: float
    max_rank: int


def _truncation_rank(s: np.ndarray, tol: float) -> int:
    # smallest r with ||tail||_2 (Frobenius of discarded part) <= tol
    tails = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
    keep = np.where(tails > tol)[0]
    return int(keep[-1]) + 1 if keep.size else 0

def _reveal_svd(A: np.ndarray, tol: float):
    u, s, vh = np.linalg.svd(A, full_matrices=False)
    r = _truncation_rank(s, tol)
    return r, u[:, :r] * s[:r], vh[:r]


def _reveal_randomized(A: np.ndarray, tol: float, rng: np.random.Generator):
    m, n = A.shape
    k = 16
    while True:
        probe = rng.standard_normal((n, min(k + _OVERSAMPLE, n)))
        Y = A @ probe
        for _ in range(_POWER_ITERATIONS):
            Y = A @ (A.conj().T @ Y)
        Q, _ = np.linalg.qr(Y)
        B = Q.conj().T @ A
        u, s, vh = np.linalg.svd(B, full_matrices=False)
        r = _truncation_rank(s, tol)
        # trust the sketch only if the revealed rank fits well inside it
        if r < k or k + _OVERSAMPLE >= min(m, n):
            return r, (Q @ u[:, :r]) * s[:r], vh[:r]
        k *= 2


def compress(A: np.ndarray, eps: float = 1e-6, max_leaf: int = 32,
             seed: int = 0) -> PlrMatrix:
    """Compress a dense complex matrix; always succeeds (worst case all-dense)."""
    A = np.asarray(A, dtype=complex)
    if not 1e-14 < eps < 1:
        raise ValueError(f"need eps in (1e-14, 1), got {eps}")
    if max_leaf < 8:
        raise ValueError(f"need max_leaf >= 8, got {max_leaf}")
    rng = np.random.default_rng(seed)
    M = PlrMatrix(A.shape, eps, max_leaf)

    def descend(r0, r1, c0, c1):
        m, n = r1 - r0, c1 - c0
        block = A[r0:r1, c0:c1]
        if min(m, n) <= max_leaf:
            M.leaves.append(PlrLeaf(r0, r1, c0, c1, dense=block.copy()))
            return
        fnorm = np.linalg.norm(block)
        if fnorm == 0:
            M.leaves.append(PlrLeaf(r0, r1, c0, c1,
                                    u=np.zeros((m, 0), complex),
                                    v=np.zeros((0, n), complex)))
            return
        tol = eps * fnorm
        if min(m, n) <= _RANDOMIZED_MIN:
            r, u, v = _reveal_svd(block, tol)
        else:
            r, u, v = _reveal_randomized(block, tol, rng)
        if r * (m + n) < m * n:
            M.leaves.append(PlrLeaf(r0, r1, c0, c1, u=u, v=v))
            return
        rm, cm = r0 + m // 2, c0 + n // 2
        descend(r0, rm, c0, cm)
        descend(r0, rm, cm, c1)
        descend(rm, r1, c0, cm)
        descend(rm, r1, cm, c1)

    descend(0, A.shape[0], 0, A.shape[1])
    return M


def plr_matvec(M: PlrMatrix, v: np.ndarray) -> np.ndarray:
    return M.matvec(np.asarray(v, dtype=complex))


def stats(M: PlrMatrix) -> PlrStats:
    stored = sum(leaf.stored for leaf in M.leaves)
    dense_equivalent = M.shape[0] * M.shape[1]
    ranks = [leaf.rank for leaf in M.leaves if leaf.rank is not None]
    return PlrStats(stored=stored, dense_equivalent=dense_equivalent,
                    ratio=stored / dense_equivalent if dense_equivalent else 1.0,
                    max_rank=max(ranks) if ranks else 0)
