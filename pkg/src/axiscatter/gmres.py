"""Full-memory GMRES with modified Gram-Schmidt and Givens rotations."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["GmresResult", "gmres"]

# re-orthogonalise when the new vector lost this fraction of its norm
_REORTH = 0.7071
# stagnation: less than 1% residual reduction over this many iterations
_STALL_WINDOW = 20
_STALL_FACTOR = 0.99
_BREAKDOWN = 1e-14


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = False
    stagnated: bool = False


def gmres(matvec: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray, tol: float = 1e-9,
          max_iter: int = 500, restart: Optional[int] = None,
          x0: Optional[np.ndarray] = None) -> GmresResult:
    """Solve ``matvec(x) = rhs`` to relative residual ``tol``.

    ``history[k]`` is the residual norm after ``k`` iterations divided by
    ``||rhs||``, so ``history[0]`` is 1 for a zero initial guess.  With
    ``restart=None`` the Krylov basis is never discarded and the history is
    non-increasing.  ``stagnated`` is set on an unconverged exit when the
    Krylov space became invariant or the last iterations made no progress.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    b = np.asarray(rhs, complex)
    n = b.size
    bnorm = np.linalg.norm(b)
    x = np.zeros(n, complex) if x0 is None else np.array(x0, complex)
    if bnorm == 0:
        return GmresResult(np.zeros(n, complex), 0, [0.0], True)
    m_cap = max_iter if restart is None else min(restart, max_iter)
    history = []
    total = 0
    while True:
        r = b - matvec(x) if np.any(x) else b.copy()
        beta = np.linalg.norm(r)
        if not history:
            history.append(beta / bnorm)
        if beta / bnorm <= tol:
            return GmresResult(x, total, history, True)
        m = min(m_cap, max_iter - total)
        V = np.zeros((m + 1, n), complex)
        H = np.zeros((m + 1, m), complex)
        cs = np.zeros(m, complex)
        sn = np.zeros(m, complex)
        g = np.zeros(m + 1, complex)
        g[0] = beta
        V[0] = r / beta
        k_done = 0
        for k in range(m):
            w = np.array(matvec(V[k].copy()), dtype=complex)
            wnorm0 = np.linalg.norm(w)
            for j in range(k + 1):
                H[j, k] = np.vdot(V[j], w)
                w -= H[j, k] * V[j]
            if np.linalg.norm(w) < _REORTH * wnorm0:
                for j in range(k + 1):
                    c = np.vdot(V[j], w)
                    H[j, k] += c
                    w -= c * V[j]
            hnext = np.linalg.norm(w)
            if hnext <= _BREAKDOWN * wnorm0:
                hnext = 0.0     # Krylov space is invariant
            H[k + 1, k] = hnext
            for j in range(k):
                t = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
                H[j + 1, k] = -np.conj(sn[j]) * H[j, k] + np.conj(cs[j]) * H[j + 1, k]
                H[j, k] = t
            a, bb = H[k, k], H[k + 1, k]
            rho = np.hypot(abs(a), abs(bb))
            if rho == 0:
                cs[k], sn[k] = 1.0, 0.0
            elif a == 0:
                cs[k], sn[k] = 0.0, 1.0
            else:
                cs[k] = abs(a) / rho
                sn[k] = (a / abs(a)) * np.conj(bb) / rho
            H[k, k] = cs[k] * a + sn[k] * bb
            H[k + 1, k] = 0.0
            total += 1
            if hnext == 0 and abs(H[k, k]) <= _BREAKDOWN * wnorm0:
                # A V_k adds no new direction: the residual cannot decrease
                history.append(history[-1])
                break
            g[k + 1] = -np.conj(sn[k]) * g[k]
            g[k] = cs[k] * g[k]
            k_done = k + 1
            res = abs(g[k + 1]) / bnorm
            history.append(res)
            if res <= tol or hnext == 0:
                break
            V[k + 1] = w / hnext
        y = np.linalg.solve(np.triu(H[:k_done, :k_done]), g[:k_done])
        x = x + V[:k_done].T @ y
        if history[-1] <= tol:
            return GmresResult(x, total, history, True)
        breakdown = hnext == 0
        if total >= max_iter or breakdown:
            return GmresResult(x, total, history, False, stagnated=breakdown or _stalled(history))


def _stalled(history) -> bool:
    if len(history) <= _STALL_WINDOW:
        return False
    return history[-1] > _STALL_FACTOR * history[-1 - _STALL_WINDOW]
