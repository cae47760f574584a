"""Model-free CBF safety layer on commanded joint velocities.

Each obstacle i contributes the halfspace

    grad h_i(q) . v  >=  -alpha * (h_i(q) - eps_c),   eps_c = eps / alpha,

and the filter returns the point of the intersection closest to the
reference velocity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import LyapunovCandidate, eval_V, spectral_bounds

log = logging.getLogger(__name__)


class SingularGradientError(ValueError):
    """The safety-function gradient is undefined (q at an obstacle center)."""


class InfeasibleFilterError(RuntimeError):
    def __init__(self, message: str, active_set):
        super().__init__(message)
        self.active_set = list(active_set)


@dataclass(frozen=True)
class Obstacle:
    center: tuple
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in np.ravel(self.center))
        if not c:
            raise ValueError("obstacle center must be nonempty")
        if not self.radius > 0:
            raise ValueError("obstacle radius must be > 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class SafetySpec:
    obstacles: tuple
    alpha: float
    epsilon: float = 0.0
    C_h: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.C_h > 0:
            raise ValueError("C_h must be > 0")

    @property
    def epsilon_c(self) -> float:
        return self.epsilon / self.alpha

    def to_dict(self) -> dict:
        d = {
            "obstacles": [{"center": list(o.center), "radius": o.radius} for o in self.obstacles],
            "alpha": self.alpha,
            "epsilon": self.epsilon,
        }
        if self.C_h != 1.0:
            d["C_h"] = self.C_h
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SafetySpec":
        obs = tuple(Obstacle(tuple(o["center"]), o["radius"]) for o in d.get("obstacles", []))
        return cls(obs, float(d["alpha"]), float(d.get("epsilon", 0.0)), float(d.get("C_h", 1.0)))


@dataclass
class FilterResult:
    v_safe: np.ndarray
    active_constraints: list
    modified: bool
    multipliers: np.ndarray = field(repr=False, default=None)
    kkt_residual: float = 0.0


def h_q(q, obs: Obstacle) -> float:
    """Distance to the obstacle center minus its radius."""
    d = np.asarray(q, dtype=float) - np.asarray(obs.center)
    return float(np.linalg.norm(d) - obs.radius)


def grad_h_q(q, obs: Obstacle) -> np.ndarray:
    d = np.asarray(q, dtype=float) - np.asarray(obs.center)
    nrm = np.linalg.norm(d)
    if nrm == 0.0:
        raise SingularGradientError("q coincides with the obstacle center; gradient undefined")
    return d / nrm


def alpha_e(k1: float, lam: float, alpha: float, C_h: float = 1.0) -> float:
    if not alpha > 0 or not k1 > 0 or not C_h > 0:
        raise ValueError("need alpha > 0, k1 > 0, C_h > 0")
    if not lam > alpha:
        raise ValueError(f"the safety margin requires lambda > alpha (lambda={lam}, alpha={alpha})")
    return k1 * (lam - alpha) / C_h


def constraint_rows(q, spec: SafetySpec) -> tuple[np.ndarray, np.ndarray]:
    """(G, b) with the filter constraints written as G v >= b."""
    G = np.array([grad_h_q(q, o) for o in spec.obstacles]).reshape(len(spec.obstacles), -1)
    h = np.array([h_q(q, o) for o in spec.obstacles])
    b = -spec.alpha * (h - spec.epsilon_c)
    return G, b


def kkt_residual(v, v_ref, G, b, mu) -> float:
    s = G @ v - b
    stat = np.max(np.abs(v - v_ref - G.T @ mu), initial=0.0)
    primal = max(0.0, -float(np.min(s, initial=0.0)))
    dual = max(0.0, -float(np.min(mu, initial=0.0)))
    comp = float(np.max(np.abs(mu * s), initial=0.0))
    return max(stat, primal, dual, comp)


def min_norm_project(v_ref, G, b, tol: float = 1e-10, max_iter: int = 200):
    """min ||v - v_ref||^2  s.t.  G v >= b, by the dual active-set method of Goldfarb and Idnani.

    Returns (v, mu, active) with mu the multipliers of every row. Raises
    InfeasibleFilterError when the constraints have no common point.
    """
    v_ref = np.asarray(v_ref, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, v_ref.size)
    b = np.asarray(b, dtype=float).ravel()
    v = v_ref.copy()
    active: list[int] = []
    u: list[float] = []
    scale = 1.0 + np.max(np.abs(b), initial=0.0) + np.max(np.abs(v_ref), initial=0.0)

    for _ in range(max_iter):
        s = G @ v - b
        if s.size == 0:
            break
        p = int(np.argmin(s))
        if s[p] >= -tol * scale:
            break
        n_p = G[p]
        u_p = 0.0
        for _ in range(max_iter):
            if active:
                N = G[active].T
                r = np.linalg.solve(N.T @ N, N.T @ n_p)
                z = n_p - N @ r
            else:
                r = np.zeros(0)
                z = n_p.copy()
            t1, k = np.inf, None
            for j in range(len(active)):
                if r[j] > 1e-14 and u[j] / r[j] < t1:
                    t1, k = u[j] / r[j], j
            zz = float(z @ z)
            t2 = np.inf
            if zz > 1e-14 * float(n_p @ n_p):
                t2 = -(float(n_p @ v) - b[p]) / zz
            t = min(t1, t2)
            if not np.isfinite(t):
                raise InfeasibleFilterError("safety constraints are infeasible", active + [p])
            if np.isfinite(t2):
                v = v + t * z
            u = [uj - t * rj for uj, rj in zip(u, r)]
            u_p += t
            if t2 <= t1:
                active.append(p)
                u.append(u_p)
                break
            del active[k]
            del u[k]
        else:
            raise RuntimeError("active-set iteration limit reached")
    mu = np.zeros(len(b))
    for j, idx in enumerate(active):
        mu[idx] = max(u[j], 0.0)
    return v, mu, sorted(active)


def safe_velocity(q, v_ref, spec: SafetySpec) -> FilterResult:
    v_ref = np.asarray(v_ref, dtype=float)
    if not spec.obstacles:
        return FilterResult(v_ref.copy(), [], False, np.zeros(0), 0.0)
    G, b = constraint_rows(q, spec)
    v, mu, active = min_norm_project(v_ref, G, b)
    res = kkt_residual(v, v_ref, G, b, mu)
    modified = bool(np.any(v != v_ref))
    return FilterResult(v, active, modified, mu, res)


def initial_set_margin(q0, e0, cand: LyapunovCandidate, spec: SafetySpec, lam: float, d_margin: float = 0.0) -> float:
    """-V(e0) + alpha_e * min_i h_i(q0) + d_margin."""
    k1, _ = spectral_bounds(cand)
    ae = alpha_e(k1, lam, spec.alpha, spec.C_h)
    h_min = min(h_q(q0, o) for o in spec.obstacles) if spec.obstacles else np.inf
    return float(-eval_V(cand, e0) + ae * h_min + d_margin)


def check_initial_set(q0, e0, cand: LyapunovCandidate, spec: SafetySpec, lam: float, d_margin: float = 0.0) -> bool:
    return initial_set_margin(q0, e0, cand, spec, lam, d_margin) >= 0.0
