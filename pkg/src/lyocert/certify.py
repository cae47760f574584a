"""Bisection search for the largest certifiable decay rate, plus slack extraction."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import LyapunovCandidate, residual
from .dataio import Dataset
from .nn import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)


@dataclass
class BisectionConfig:
    lambda_min: float = 0.0
    lambda_max: float = 20.0
    resolution: float = 0.25
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    warm_start: bool = False

    def __post_init__(self):
        if self.lambda_min < 0 or not self.lambda_min < self.lambda_max:
            raise ValueError("need 0 <= lambda_min < lambda_max")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")


@dataclass
class Certificate:
    lambda_best: float
    epsilon: float
    candidate: LyapunovCandidate
    gamma: float
    n_train: int
    history: list = field(default_factory=list)
    never_converged: bool = False
    seed: int = 0
    resolution: float | None = None
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.candidate.n


def stacked_residuals(cand: LyapunovCandidate, ds: Dataset, lam: float) -> np.ndarray:
    """Vdot + lam*V for every sample, trajectories in order."""
    X, Xd = ds.stacked()
    if X.shape[1] != cand.n:
        raise ValueError(f"dimension mismatch: certificate n={cand.n}, data n={X.shape[1]}")
    return residual(cand, X, Xd, lam, 0.0)


def compute_epsilon(cand: LyapunovCandidate, ds: Dataset, lam: float) -> float:
    """Smallest eps >= 0 with Vdot + lam*V - eps <= 0 on every sample."""
    r = stacked_residuals(cand, ds, lam)
    if r.size == 0:
        raise ValueError("empty dataset")
    worst = 0.0
    for v in r:
        if v > worst:
            worst = float(v)
    return worst


def validate_certificate(cert: Certificate, test: Dataset) -> tuple[int, int]:
    """Count test samples violating Vdot + lambda*V - eps <= 0."""
    r = stacked_residuals(cert.candidate, test, cert.lambda_best)
    return int(np.count_nonzero(r - cert.epsilon > 0)), int(r.size)


def validate_per_trajectory(cert: Certificate, test: Dataset) -> tuple[int, int]:
    """Trajectory-level variant: a trajectory counts once if any of its samples violates."""
    bad = 0
    for tr in test.trajectories:
        one = Dataset((tr,), test.role)
        if np.any(stacked_residuals(cert.candidate, one, cert.lambda_best) - cert.epsilon > 0):
            bad += 1
    return bad, len(test)


def bisect(
    lambda_min: float,
    lambda_max: float,
    resolution: float,
    feasible: Callable[[float], object],
):
    """Generic driver: ``feasible(lam)`` returns a truthy payload on success.

    Returns (lambda_best, payload_at_best, history) where history lists
    (lam, converged) in the order tried.
    """
    lo, hi = lambda_min, lambda_max
    best, payload = lambda_min, None
    history = []
    while True:
        lam = 0.5 * (lo + hi)
        res = feasible(lam)
        ok = bool(res)
        history.append((lam, ok))
        if ok:
            best, payload, lo = lam, res, lam
        else:
            hi = lam
        if hi - lo < resolution:
            break
    return best, payload, history


def expected_iterations(lambda_min: float, lambda_max: float, resolution: float) -> int:
    """Midpoints evaluated by ``bisect`` before the bracket drops strictly below the resolution."""
    return max(1, math.floor(math.log2((lambda_max - lambda_min) / resolution)) + 1)


def bisect_lambda(ds: Dataset, cfg: BisectionConfig) -> Certificate:
    """Binary search for the largest decay rate whose training reaches zero hinge loss."""
    if not ds.has_xdot:
        raise ValueError("training data must carry derivatives")
    last: dict = {"result": None, "params": None}

    def feasible(lam):
        tcfg = replace(cfg.train_cfg, lam=lam)
        init = last["params"] if cfg.warm_start else None
        res: TrainResult = train(ds, tcfg, init_params=init)
        last["result"] = res
        log.info("lambda=%.6g converged=%s loss=%.3g epochs=%d", lam, res.converged, res.final_loss, res.epochs_used)
        if res.converged:
            last["params"] = res.params
            return res
        return None

    best, res, history = bisect(cfg.lambda_min, cfg.lambda_max, cfg.resolution, feasible)
    never = res is None
    if never:
        # Keep the lowest-loss attempt so that an epsilon can still be reported.
        res = last["result"]
    eps = compute_epsilon(res.candidate, ds, best)
    return Certificate(
        lambda_best=best,
        epsilon=eps,
        candidate=res.candidate,
        gamma=cfg.train_cfg.gamma,
        n_train=ds.n_samples,
        history=history,
        never_converged=never,
        seed=cfg.train_cfg.seed,
        resolution=cfg.resolution,
        loss_history=list(res.loss_history),
    )


# -- JSON --------------------------------------------------------------------

def candidate_to_dict(cand: LyapunovCandidate, lam: float, gamma: float, epsilon, seed: int) -> dict:
    return {
        "n": cand.n,
        "L": cand.L.tolist(),
        "lambda": float(lam),
        "gamma": float(gamma),
        "epsilon": None if epsilon is None else float(epsilon),
        "seed": int(seed),
    }


def certificate_to_dict(cert: Certificate) -> dict:
    d = candidate_to_dict(cert.candidate, cert.lambda_best, cert.gamma, cert.epsilon, cert.seed)
    d["history"] = [[float(lam), bool(ok)] for lam, ok in cert.history]
    d["never_converged"] = cert.never_converged
    d["n_train"] = cert.n_train
    if cert.resolution is not None:
        d["resolution"] = cert.resolution
    return d


def certificate_from_dict(d: dict) -> Certificate:
    L = np.asarray(d["L"], dtype=float)
    if L.shape != (d["n"], d["n"]):
        raise ValueError("certificate L does not match n")
    return Certificate(
        lambda_best=float(d["lambda"]),
        epsilon=float(d.get("epsilon") or 0.0),
        candidate=LyapunovCandidate(L),
        gamma=float(d["gamma"]),
        n_train=int(d.get("n_train", 0)),
        history=[(float(a), bool(b)) for a, b in d.get("history", [])],
        never_converged=bool(d.get("never_converged", False)),
        seed=int(d.get("seed", 0)),
        resolution=d.get("resolution"),
    )
