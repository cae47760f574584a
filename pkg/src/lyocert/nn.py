"""Cholesky-factor network and hinge-loss training.

A two-hidden-layer ReLU perceptron maps an input vector to n(n+1)/2 raw
scalars. The first n raw scalars go through softplus and become the
diagonal of L; the remaining ones fill the strictly-lower triangle row by
row. Gradients are computed by hand (no autodiff dependency).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import LyapunovCandidate, tril_size
from .dataio import Dataset

log = logging.getLogger(__name__)

INPUT_MODES = ("constant", "per-sample")
OPTIMIZERS = ("gd", "adam")


_TINY = np.finfo(float).tiny


def softplus(t):
    # floored so that a very negative input still gives a positive value
    return np.maximum(np.logaddexp(0.0, t), _TINY)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _offdiag_index(n: int):
    return np.tril_indices(n, -1)


def assemble_L(raw, n: int | None = None) -> np.ndarray:
    """Map raw outputs (..., n(n+1)/2) to lower-triangular factors (..., n, n)."""
    raw = np.asarray(raw, dtype=float)
    m = raw.shape[-1]
    if n is None:
        n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if m != tril_size(n):
        raise ValueError(f"raw output must have length {tril_size(n)} for n={n}, got {m}")
    L = np.zeros(raw.shape[:-1] + (n, n))
    idx = np.arange(n)
    L[..., idx, idx] = softplus(raw[..., :n])
    r, c = _offdiag_index(n)
    L[..., r, c] = raw[..., n:]
    return L


def _raw_grad_from_L(gL: np.ndarray, raw: np.ndarray, n: int) -> np.ndarray:
    g = np.empty(raw.shape)
    idx = np.arange(n)
    g[..., :n] = gL[..., idx, idx] * _sigmoid(raw[..., :n])
    r, c = _offdiag_index(n)
    g[..., n:] = gL[..., r, c]
    return g


@dataclass
class NetworkParams:
    """Weights stored as (fan_in, fan_out); three affine layers, ReLU between."""

    weights: list
    biases: list

    @classmethod
    def init(cls, n: int, rng: np.random.Generator, d_in: int | None = None, hidden: int = 32):
        d_in = 2 * n if d_in is None else d_in
        sizes = [d_in, hidden, hidden, tril_size(n)]
        W, b = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            W.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            b.append(rng.uniform(-lim, lim, size=fan_out))
        return cls(W, b)

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, theta: np.ndarray) -> "NetworkParams":
        return self.view_of(np.array(theta, dtype=float))

    def view_of(self, theta: np.ndarray) -> "NetworkParams":
        """Params with this layout whose arrays are views into ``theta``."""
        W, b, k = [], [], 0
        for w0, b0 in zip(self.weights, self.biases):
            W.append(theta[k : k + w0.size].reshape(w0.shape))
            k += w0.size
            b.append(theta[k : k + b0.size])
            k += b0.size
        if k != theta.size:
            raise ValueError("flat parameter vector has the wrong length")
        return NetworkParams(W, b)

    def forward(self, Z: np.ndarray):
        acts = [Z]
        a = Z
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W + b
            if i < len(self.weights) - 1:
                a = np.maximum(a, 0.0)
            acts.append(a)
        return a, acts

    def backward(self, acts, g_out):
        """Parameter gradients given dLoss/d(output) for the batch of ``acts``."""
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        g = g_out
        for i in reversed(range(len(self.weights))):
            gW[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0)
        return NetworkParams(gW, gb)


@dataclass
class TrainConfig:
    lam: float = 1.0
    gamma: float = 1e-3
    learning_rate: float = 1e-2
    max_epochs: int = 5000
    restarts: int = 3
    seed: int = 0
    input_mode: str = "constant"
    hidden: int = 32
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0 (strict satisfaction margin)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 0 or self.restarts < 1:
            raise ValueError("max_epochs must be >= 0 and restarts >= 1")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class TrainResult:
    converged: bool
    final_loss: float
    epochs_used: int
    candidate: LyapunovCandidate
    loss_history: list = field(default_factory=list)
    params: NetworkParams | None = field(default=None, repr=False)
    restart: int = 0


def _features(X: np.ndarray, Xd: np.ndarray, lam: float) -> np.ndarray:
    """Rows vec(x (2 xdot + lam x)^T), so that Vdot + lam*V == features @ vec(P)."""
    W = 2.0 * Xd + lam * X
    return np.einsum("ni,nj->nij", X, W).reshape(len(X), -1)


def hinge_loss(cand: LyapunovCandidate, ds: Dataset, lam: float, gamma: float) -> float:
    """Mean over all samples of max(0, Vdot + lam*V + gamma)."""
    X, Xd = ds.stacked()
    if X.shape[1] != cand.n:
        raise ValueError("dimension mismatch between candidate and data")
    h = _features(X, Xd, lam) @ cand.P.ravel() + gamma
    return float(np.mean(np.maximum(h, 0.0)))


loss = hinge_loss


class _Objective:
    """Hinge loss of a network over a fixed dataset, with analytic gradient."""

    def __init__(self, ds: Dataset, lam: float, gamma: float, input_mode: str, d_in: int):
        self.X, self.Xd = ds.stacked()
        self.n = self.X.shape[1]
        self.N = len(self.X)
        self.lam, self.gamma, self.mode = lam, gamma, input_mode
        self.W = 2.0 * self.Xd + lam * self.X
        self.F = _features(self.X, self.Xd, lam)
        if input_mode == "constant":
            self.Z = np.ones((1, d_in))
        else:
            self.Z = np.hstack([self.X, self.Xd])
            if self.Z.shape[1] != d_in:
                raise ValueError(f"per-sample mode needs d_in == 2n = {self.Z.shape[1]}")

    def residuals(self, L):
        if L.ndim == 2:
            P = L @ L.T
            return self.F @ (0.5 * (P + P.T)).ravel() + self.gamma
        y = np.einsum("nji,nj->ni", L, self.X)
        z = np.einsum("nji,nj->ni", L, self.W)
        return np.einsum("ni,ni->n", y, z) + self.gamma

    def value(self, params: NetworkParams) -> float:
        raw, _ = params.forward(self.Z)
        L = assemble_L(raw[0] if self.mode == "constant" else raw, self.n)
        return float(np.mean(np.maximum(self.residuals(L), 0.0)))

    def value_and_grad(self, params: NetworkParams):
        raw, acts = params.forward(self.Z)
        n = self.n
        if self.mode == "constant":
            L = assemble_L(raw[0], n)
            h = self.residuals(L)
            active = h > 0
            val = float(np.mean(np.maximum(h, 0.0)))
            M = (active.astype(float) @ self.F).reshape(n, n) / self.N
            gL = (M + M.T) @ L
            g_raw = _raw_grad_from_L(gL, raw[0], n)[None, :]
        else:
            L = assemble_L(raw, n)
            h = self.residuals(L)
            active = (h > 0).astype(float) / self.N
            val = float(np.mean(np.maximum(h, 0.0)))
            M = self.F.reshape(-1, n, n) * active[:, None, None]
            gL = np.einsum("nij,njk->nik", M + M.transpose(0, 2, 1), L)
            g_raw = _raw_grad_from_L(gL, raw, n)
        return val, params.backward(acts, g_raw)


def _per_sample_fixed_L(obj: _Objective, params: NetworkParams, chunk: int = 256) -> np.ndarray:
    """Among the per-sample factors, the one with the smallest worst-case residual."""
    raw, _ = params.forward(obj.Z)
    Ls = assemble_L(raw, obj.n)
    Ps = np.einsum("nij,nkj->nik", Ls, Ls).reshape(len(Ls), -1)
    F = obj.F
    best, best_val = 0, np.inf
    for s in range(0, len(Ps), chunk):
        worst = (F @ Ps[s : s + chunk].T).max(axis=0)
        j = int(np.argmin(worst))
        if worst[j] < best_val:
            best, best_val = s + j, worst[j]
    return Ls[best]


def _candidate(obj: _Objective, params: NetworkParams) -> LyapunovCandidate:
    if obj.mode == "constant":
        raw, _ = params.forward(obj.Z)
        return LyapunovCandidate(assemble_L(raw[0], obj.n))
    return LyapunovCandidate(_per_sample_fixed_L(obj, params))


def _run_single(obj: _Objective, params: NetworkParams, cfg: TrainConfig):
    history = []
    epochs = 0
    lr = cfg.learning_rate
    theta = params.flat()
    params = params.view_of(theta)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for epochs in range(cfg.max_epochs + 1):
        val, grad = obj.value_and_grad(params)
        history.append(val)
        if val == 0.0 or epochs == cfg.max_epochs:
            break
        g = grad.flat()
        if cfg.optimizer == "gd":
            theta -= lr * g
        else:
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            k = epochs + 1
            theta -= lr * (m / (1 - b1**k)) / (np.sqrt(v / (1 - b2**k)) + eps)
    return params.copy(), history, epochs


def train(ds: Dataset, cfg: TrainConfig, init_params: NetworkParams | None = None) -> TrainResult:
    """Full-batch gradient descent on the hinge loss with random restarts.

    Restarts stop at the first run whose loss hits exactly zero. With
    ``init_params`` the first restart starts from a copy of those weights.
    """
    n = ds.n
    d_in = 2 * n
    obj = _Objective(ds, cfg.lam, cfg.gamma, cfg.input_mode, d_in)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best = None
    for r in range(cfg.restarts):
        if r == 0 and init_params is not None:
            params = init_params.copy()
        else:
            params = NetworkParams.init(n, np.random.default_rng(streams[r]), d_in, cfg.hidden)
        params, history, epochs = _run_single(obj, params, cfg)
        cand = _candidate(obj, params)
        final = hinge_loss(cand, ds, cfg.lam, cfg.gamma)
        res = TrainResult(final == 0.0, final, epochs, cand, history, params, r)
        log.debug("lambda=%g restart %d: loss %.3g after %d epochs", cfg.lam, r, final, epochs)
        if best is None or res.final_loss < best.final_loss:
            best = res
        if res.converged:
            break
    return best


def gradient_check(params: NetworkParams, ds: Dataset, cfg: TrainConfig, step: float = 1e-5) -> float:
    """Max relative error between backprop gradients and central finite differences.

    Entries are compared as |a - f| / max(|a|, |f|, floor), where the floor is
    1e-6 of the largest gradient entry so that entries at round-off level do
    not dominate the maximum.
    """
    obj = _Objective(ds, cfg.lam, cfg.gamma, cfg.input_mode, params.d_in)
    _, g = obj.value_and_grad(params)
    analytic = g.flat()
    theta = params.flat()
    fd = np.empty_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += step
        tm[k] -= step
        fd[k] = (obj.value(params.with_flat(tp)) - obj.value(params.with_flat(tm))) / (2 * step)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-6 * scale)
    return float(np.max(np.abs(analytic - fd) / denom))


def analytic_gradient(params: NetworkParams, ds: Dataset, cfg: TrainConfig) -> NetworkParams:
    obj = _Objective(ds, cfg.lam, cfg.gamma, cfg.input_mode, params.d_in)
    return obj.value_and_grad(params)[1]
