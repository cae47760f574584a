"""Quadratic-form Lyapunov candidates V(x) = x^T L L^T x and their derivatives."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def tril_size(n: int) -> int:
    return n * (n + 1) // 2


def _vec(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"dimension mismatch: expected {n}, got {x.shape[-1]}")
    return x


@dataclass(frozen=True)
class LyapunovCandidate:
    """A quadratic Lyapunov candidate defined by its Cholesky factor.

    ``L`` must be lower triangular with a strictly positive diagonal, which
    makes ``P = L L^T`` symmetric positive definite by construction.
    """

    L: np.ndarray
    P: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] < 1:
            raise ValueError("L must be a square matrix with n >= 1")
        if not np.all(np.isfinite(L)):
            raise ValueError("L must be finite")
        if np.any(np.triu(L, 1) != 0.0):
            raise ValueError("L must be lower triangular")
        if np.any(np.diag(L) <= 0.0):
            raise ValueError("diagonal of L must be strictly positive")
        P = L @ L.T
        P = 0.5 * (P + P.T)
        L.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "P", P)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @classmethod
    def identity(cls, n: int) -> "LyapunovCandidate":
        return cls(np.eye(n))

    @classmethod
    def from_packed(cls, n: int, entries) -> "LyapunovCandidate":
        """Build from n(n+1)/2 lower-triangular entries stored row-major."""
        entries = np.asarray(entries, dtype=float).ravel()
        if entries.size != tril_size(n):
            raise ValueError(f"expected {tril_size(n)} entries for n={n}, got {entries.size}")
        L = np.zeros((n, n))
        L[np.tril_indices(n)] = entries
        return cls(L)

    def packed(self) -> np.ndarray:
        return self.L[np.tril_indices(self.n)].copy()


def eval_V(cand: LyapunovCandidate, x) -> float | np.ndarray:
    """x^T P x. Accepts a single state or a stack of states (rows)."""
    x = _vec(x, cand.n)
    return np.einsum("...i,ij,...j->...", x, cand.P, x)


def eval_Vdot(cand: LyapunovCandidate, x, xdot) -> float | np.ndarray:
    x = _vec(x, cand.n)
    xdot = _vec(xdot, cand.n)
    return 2.0 * np.einsum("...i,ij,...j->...", x, cand.P, xdot)


def residual(cand: LyapunovCandidate, x, xdot, lam: float, gamma: float = 0.0):
    """Stability residual Vdot + lam*V + gamma; non-positive where the decay condition holds."""
    if lam < 0 or gamma < 0:
        raise ValueError("lambda and gamma must be non-negative")
    return eval_Vdot(cand, x, xdot) + lam * eval_V(cand, x) + gamma


def spectral_bounds(cand: LyapunovCandidate) -> tuple[float, float]:
    """(lambda_min(P), lambda_max(P)), so that k1|x|^2 <= V(x) <= k2|x|^2."""
    w = np.linalg.eigvalsh(cand.P)
    return float(w[0]), float(w[-1])
