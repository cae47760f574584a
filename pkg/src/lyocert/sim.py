"""Velocity-controlled joint plant, data generation and closed-loop obstacle scenarios.

Each joint follows  M_i qdd_i = M_i a_ff_i - K_i (qd_i - v_cmd_i) + d_i,  i.e. a
built-in proportional velocity loop whose error decays at rate K_i / M_i.
a_ff is the command increment of the last period divided by dt, so the
tracking error decays at that rate even while the command moves. Setting
PlantConfig.feedforward=False drops it. The plant is integrated with RK4,
holding the command, a_ff and the disturbance constant over each step.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cbf import (
    InfeasibleFilterError,
    SafetySpec,
    SingularGradientError,
    h_q,
    initial_set_margin,
    safe_velocity,
)
from .dataio import Dataset, Trajectory, differentiate, trajectory_to_csv

log = logging.getLogger(__name__)


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("LYOCERT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class PlantConfig:
    n_joints: int = 2
    inertia: tuple = (1.0, 1.0)
    velocity_gain: tuple = (3.0, 5.0)
    disturbance_bound: float = 0.0
    dt: float = 0.008
    seed: int = 0
    feedforward: bool = True

    def __post_init__(self):
        M = np.broadcast_to(np.asarray(self.inertia, dtype=float), (self.n_joints,))
        K = np.broadcast_to(np.asarray(self.velocity_gain, dtype=float), (self.n_joints,))
        object.__setattr__(self, "inertia", tuple(M.tolist()))
        object.__setattr__(self, "velocity_gain", tuple(K.tolist()))
        if self.n_joints < 1:
            raise ValueError("n_joints must be >= 1")
        if np.any(M <= 0) or np.any(K <= 0):
            raise ValueError("inertia and velocity_gain must be positive")
        if self.disturbance_bound < 0:
            raise ValueError("disturbance_bound must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.dt * np.max(K / M) >= 0.5:
            raise ValueError("dt * max(K/M) must be < 0.5")

    @property
    def rates(self) -> np.ndarray:
        return np.asarray(self.velocity_gain) / np.asarray(self.inertia)

    @classmethod
    def from_dict(cls, d: dict) -> "PlantConfig":
        known = {"n_joints", "inertia", "velocity_gain", "disturbance_bound", "dt", "seed", "feedforward"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plant config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("inertia", "velocity_gain"):
            if k in d:
                d[k] = tuple(np.ravel(d[k]).tolist())
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "n_joints": self.n_joints,
            "inertia": list(self.inertia),
            "velocity_gain": list(self.velocity_gain),
            "disturbance_bound": self.disturbance_bound,
            "dt": self.dt,
            "seed": self.seed,
            "feedforward": self.feedforward,
        }


def step(q, qd, v_cmd, cfg: PlantConfig, rng: np.random.Generator | None = None, v_prev=None):
    """Advance (q, qd) by one period cfg.dt.

    v_prev is the command of the previous period; it only matters when
    cfg.feedforward is set.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    v = np.asarray(v_cmd, dtype=float)
    M = np.asarray(cfg.inertia)
    K = np.asarray(cfg.velocity_gain)
    if cfg.disturbance_bound > 0:
        if rng is None:
            raise ValueError("a random generator is required when disturbance_bound > 0")
        d = rng.uniform(-cfg.disturbance_bound, cfg.disturbance_bound, size=q.shape)
    else:
        d = 0.0
    a_ff = 0.0
    if cfg.feedforward and v_prev is not None:
        a_ff = (v - np.asarray(v_prev, dtype=float)) / cfg.dt

    def acc(vel):
        return a_ff + (-K * (vel - v) + d) / M

    h = cfg.dt
    k1q, k1v = qd, acc(qd)
    k2q, k2v = qd + 0.5 * h * k1v, acc(qd + 0.5 * h * k1v)
    k3q, k3v = qd + 0.5 * h * k2v, acc(qd + 0.5 * h * k2v)
    k4q, k4v = qd + h * k3v, acc(qd + h * k3v)
    q_next = q + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    qd_next = qd + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return q_next, qd_next


def _rollout_streams(seed: int, count: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def tracking_rollout(cfg: PlantConfig, duration: float, ref_velocity, rng: np.random.Generator, source_id: str = "") -> Trajectory:
    """One velocity-step rollout; the state recorded is the error e = qd_ref - qd."""
    n = cfg.n_joints
    steps = int(round(duration / cfg.dt))
    if steps < 2:
        raise ValueError("duration must cover at least 2 control periods")
    ref = np.broadcast_to(np.asarray(ref_velocity, dtype=float), (n,))
    q = np.zeros(n)
    qd = rng.uniform(0.0, 1.0, size=n)
    E = np.empty((steps + 1, n))
    E[0] = ref - qd
    for k in range(steps):
        q, qd = step(q, qd, ref, cfg, rng)
        E[k + 1] = ref - qd
    t = cfg.dt * np.arange(steps + 1)
    return differentiate(Trajectory(t, E, source_id=source_id))


def generate_training_data(
    cfg: PlantConfig,
    n_T: int,
    duration: float = 2.0,
    ref_velocity=1.5,
    role: str = "train",
) -> Dataset:
    """n_T rollouts from qd0 ~ Unif([0,1]^n) toward a constant reference velocity.

    The default reference (1.5 rad/s per joint) lies outside the box of
    initial velocities so that every rollout starts with a non-trivial error.
    """
    if n_T < 1:
        raise ValueError("n_T must be >= 1")
    rngs = _rollout_streams(cfg.seed, n_T)
    width = max(3, len(str(n_T - 1)))
    jobs = [(rngs[i], f"rollout_{i:0{width}d}") for i in range(n_T)]
    with ThreadPoolExecutor(max_workers()) as pool:
        trajs = list(pool.map(lambda j: tracking_rollout(cfg, duration, ref_velocity, *j), jobs))
    return Dataset(tuple(trajs), role)


def linear_system_data(
    A,
    n_T: int,
    duration: float,
    dt: float,
    seed: int,
    radius: float = 1.0,
    role: str = "train",
) -> Dataset:
    """Trajectories of xdot = A x, sampled exactly via the matrix exponential.

    Initial conditions are uniformly random directions at the given radius.
    Derivatives are obtained numerically from the sampled states.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    steps = int(round(duration / dt))
    Phi = _expm(A * dt)
    rng = np.random.default_rng(seed)
    t = dt * np.arange(steps + 1)
    trajs = []
    for i in range(n_T):
        x0 = rng.normal(size=n)
        x0 *= radius / np.linalg.norm(x0)
        X = np.empty((steps + 1, n))
        X[0] = x0
        for k in range(steps):
            X[k + 1] = Phi @ X[k]
        trajs.append(differentiate(Trajectory(t, X, source_id=f"linear_{i:03d}")))
    return Dataset(tuple(trajs), role)


def _expm(M: np.ndarray, terms: int = 30) -> np.ndarray:
    """Matrix exponential by scaling and squaring of a Taylor series."""
    norm = np.linalg.norm(M, 1)
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    X = M / (2**s)
    out = np.eye(len(M))
    term = np.eye(len(M))
    for k in range(1, terms):
        term = term @ X / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


# -- closed loop ---------------------------------------------------------------

def reference_path(waypoints, segment_time: float):
    """Piecewise-linear q_ref(t) through the waypoints, holding the last one."""
    W = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if len(W) == 1:
        return lambda t: W[0].copy()

    def q_ref(t):
        s = t / segment_time
        i = int(np.floor(s))
        if i >= len(W) - 1:
            return W[-1].copy()
        frac = s - i
        return W[i] + frac * (W[i + 1] - W[i])

    return q_ref


@dataclass
class ScenarioResult:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    v_cmd: np.ndarray
    h: np.ndarray
    modified: np.ndarray
    min_h: float
    violated: bool
    filter_activity: float
    qdot_max: float
    dt: float
    initial_set_ok: bool | None = None
    initial_set_margin: float | None = None
    events: list = field(default_factory=list)
    halted: bool = False

    @property
    def tolerance(self) -> float:
        """Per-step reach of h across the boundary: max |qd| * dt."""
        return self.qdot_max * self.dt

    def trajectory(self) -> Trajectory:
        return Trajectory(self.t, self.q, self.qd, source_id="scenario")

    def to_csv(self) -> str:
        extra = {f"h{i}": self.h[:, i] for i in range(self.h.shape[1])}
        return trajectory_to_csv(self.trajectory(), extra)

    def summary(self) -> dict:
        return {
            "min_h": self.min_h,
            "violated": self.violated,
            "filter_activity": self.filter_activity,
            "qdot_max": self.qdot_max,
            "tolerance": self.tolerance,
            "initial_set_ok": self.initial_set_ok,
            "halted": self.halted,
            "events": [[t, kind] for t, kind in self.events],
        }


def run_scenario(
    cfg: PlantConfig,
    spec: SafetySpec,
    waypoints,
    k_p: float,
    cert=None,
    duration: float = 6.0,
    segment_time: float = 2.0,
    q0=None,
    use_filter: bool = True,
) -> ScenarioResult:
    """Closed loop: v_ref = k_p (q_ref - q), filtered, then applied to the plant."""
    n = cfg.n_joints
    W = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if W.shape[1] != n:
        raise ValueError("waypoints must have one coordinate per joint")
    q_ref = reference_path(W, segment_time)
    q = W[0].copy() if q0 is None else np.asarray(q0, dtype=float).copy()
    qd = np.zeros(n)
    rng = np.random.default_rng(cfg.seed)
    steps = int(round(duration / cfg.dt))
    k_obs = len(spec.obstacles)

    t = cfg.dt * np.arange(steps + 1)
    Q = np.empty((steps + 1, n))
    QD = np.empty((steps + 1, n))
    V = np.zeros((steps + 1, n))
    H = np.empty((steps + 1, k_obs))
    mod = np.zeros(steps + 1, dtype=bool)
    events = []
    halted = False
    init_ok, init_margin = None, None

    for k in range(steps + 1):
        Q[k], QD[k] = q, qd
        H[k] = [h_q(q, o) for o in spec.obstacles]
        v_ref = k_p * (q_ref(t[k]) - q)
        v = v_ref
        if halted:
            v = np.zeros(n)
        elif use_filter and k_obs:
            try:
                fr = safe_velocity(q, v_ref, spec)
                v, mod[k] = fr.v_safe, fr.modified
            except SingularGradientError:
                events.append((float(t[k]), "singular_gradient"))
                v, mod[k] = np.zeros(n), True
            except InfeasibleFilterError:
                events.append((float(t[k]), "filter_infeasible"))
                v, mod[k], halted = np.zeros(n), True, True
        if k == 0 and cert is not None and k_obs:
            try:
                init_margin = initial_set_margin(q, qd - v, cert.candidate, spec, cert.lambda_best)
                init_ok = init_margin >= 0.0
            except ValueError as e:
                events.append((0.0, f"initial_set_unchecked: {e}"))
            if init_ok is False:
                log.warning("initial state is outside the certified initial set (margin %.3g)", init_margin)
                events.append((0.0, "initial_set_violated"))
        V[k] = v
        if k < steps:
            q, qd = step(q, qd, v, cfg, rng, v_prev=V[k - 1] if k else None)

    min_h = float(H.min()) if k_obs else np.inf
    return ScenarioResult(
        t=t,
        q=Q,
        qd=QD,
        v_cmd=V,
        h=H,
        modified=mod,
        min_h=min_h,
        violated=bool(min_h < 0),
        filter_activity=float(mod.mean()),
        qdot_max=float(np.max(np.linalg.norm(QD, axis=1))),
        dt=cfg.dt,
        initial_set_ok=init_ok,
        initial_set_margin=init_margin,
        events=events,
        halted=halted,
    )


@dataclass
class SweepResult:
    alphas: list
    epsilons: list
    min_h: np.ndarray
    tolerance: np.ndarray
    failed: list
    tie_tol: float = 1e-4

    def alpha_monotone(self) -> bool:
        """For each epsilon, min_h does not increase as alpha grows."""
        M = self.min_h
        return bool(np.all(np.diff(M, axis=0) <= self.tie_tol))

    def epsilon_monotone(self) -> bool:
        """For each alpha, min_h does not decrease as epsilon grows."""
        M = self.min_h
        return bool(np.all(np.diff(M, axis=1) >= -self.tie_tol))

    def verdicts(self) -> list[str]:
        return [
            f"alpha_monotone: {'PASS' if self.alpha_monotone() else 'FAIL'}",
            f"epsilon_monotone: {'PASS' if self.epsilon_monotone() else 'FAIL'}",
            f"failed_cells: {len(self.failed)}",
        ]

    def to_csv(self) -> str:
        lines = ["alpha," + ",".join(f"eps={e:.17g}" for e in self.epsilons)]
        for a, row in zip(self.alphas, self.min_h):
            lines.append(f"{a:.17g}," + ",".join("nan" if np.isnan(v) else f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"


def sweep_table(
    cfg: PlantConfig,
    spec_template: SafetySpec,
    alphas,
    epsilons,
    waypoints,
    k_p: float,
    cert=None,
    **scenario_kw,
) -> SweepResult:
    """min_h over an (alpha, epsilon) grid; alphas and epsilons are sorted ascending."""
    alphas = sorted(float(a) for a in alphas)
    epsilons = sorted(float(e) for e in epsilons)
    cells = [(i, j) for i in range(len(alphas)) for j in range(len(epsilons))]

    def run(cell):
        i, j = cell
        spec = SafetySpec(spec_template.obstacles, alphas[i], epsilons[j], spec_template.C_h)
        return run_scenario(cfg, spec, waypoints, k_p, cert=cert, **scenario_kw)

    M = np.full((len(alphas), len(epsilons)), np.nan)
    T = np.full_like(M, np.nan)
    failed = []
    with ThreadPoolExecutor(max_workers()) as pool:
        futures = {cell: pool.submit(run, cell) for cell in cells}
        for (i, j), fut in futures.items():
            try:
                r = fut.result()
            except Exception as e:  # cell-level failure is reported, not fatal
                failed.append(((alphas[i], epsilons[j]), repr(e)))
                continue
            if r.halted:
                failed.append(((alphas[i], epsilons[j]), "filter_infeasible"))
            M[i, j] = r.min_h
            T[i, j] = r.tolerance
    return SweepResult(alphas, epsilons, M, T, failed)
