"""Right-preconditioned GMRES with modified Gram-Schmidt and Givens rotations.

Right preconditioning keeps the monitored residual equal to the true residual
of the original system.  One reorthogonalization pass is applied whenever the
basis loses orthogonality beyond 1e-8.  No restart by default; a restart
length can be given.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class BreakdownError(RuntimeError):
    """Arnoldi produced a non-finite quantity (numerical breakdown)."""


@dataclass
class GmresStats:
    iterations: int
    residuals: list[float] = field(default_factory=list)
    converged: bool = False


Operator = Callable[[np.ndarray], np.ndarray]

_REORTH_TRIGGER = 1e-8


def _identity(x: np.ndarray) -> np.ndarray:
    return x


def gmres(apply_A: Operator, apply_P: Operator | None, b: np.ndarray,
          tol: float = 1e-5, maxit: int = 100, restart: int | None = None,
          callback: Callable[[np.ndarray], None] | None = None,
          ) -> tuple[np.ndarray, GmresStats]:
    """Solve A x = b with right preconditioner P (A P^-1 y = b, x = P^-1 y).

    Returns (x, stats); non-convergence is reported through stats, not raised.
    ``callback`` receives the current solution estimate after each iteration.
    """
    if not 0 < tol < 1:
        raise ValueError(f"need tol in (0, 1), got {tol}")
    if maxit < 1:
        raise ValueError(f"need maxit >= 1, got {maxit}")
    apply_P = apply_P or _identity
    b = np.asarray(b, dtype=complex)
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), GmresStats(0, [0.0], True)

    x = np.zeros_like(b)
    stats = GmresStats(0)
    cycle = maxit if restart is None else min(restart, maxit)

    while stats.iterations < maxit:
        r = b - apply_A(x) if stats.iterations else b.copy()
        beta = np.linalg.norm(r)
        steps = min(cycle, maxit - stats.iterations)
        V = np.empty((steps + 1, n), dtype=complex)
        H = np.zeros((steps + 1, steps), dtype=complex)
        cs = np.zeros(steps, dtype=complex)
        sn = np.zeros(steps, dtype=complex)
        g = np.zeros(steps + 1, dtype=complex)
        V[0] = r / beta
        g[0] = beta
        j_used = 0
        happy = False

        for j in range(steps):
            w = apply_A(apply_P(V[j]))
            wnorm0 = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], w)
                w -= H[i, j] * V[i]
            if np.linalg.norm(w) < _REORTH_TRIGGER * wnorm0:
                for i in range(j + 1):
                    c = np.vdot(V[i], w)
                    H[i, j] += c
                    w -= c * V[i]
            hnext = np.linalg.norm(w)
            if not np.isfinite(hnext):
                raise BreakdownError(f"non-finite Arnoldi norm at iteration {stats.iterations + j + 1}")
            H[j + 1, j] = hnext
            happy = hnext <= 1e-14 * max(bnorm, 1.0)
            if not happy:
                V[j + 1] = w / hnext
            for i in range(j):
                t = np.conj(cs[i]) * H[i, j] + np.conj(sn[i]) * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            d = np.hypot(abs(H[j, j]), abs(H[j + 1, j]))
            if d == 0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / d, H[j + 1, j] / d
            H[j, j] = np.conj(cs[j]) * H[j, j] + np.conj(sn[j]) * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = np.conj(cs[j]) * g[j]
            res = abs(g[j + 1]) / bnorm
            stats.residuals.append(res)
            stats.iterations += 1
            j_used = j + 1
            if callback is not None:
                callback(x + _krylov_solution(apply_P, V, H, g, j_used))
            if res <= tol or happy:
                break

        x = x + _krylov_solution(apply_P, V, H, g, j_used)
        if stats.residuals[-1] <= tol or happy:
            stats.converged = True
            break

    if stats.residuals and stats.residuals[-1] <= tol:
        stats.converged = True
    return x, stats


def _krylov_solution(apply_P, V, H, g, j):
    y = np.linalg.solve(H[:j, :j], g[:j])
    return apply_P(V[:j].T @ y)
