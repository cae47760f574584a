"""Certify the decay rate of xdot = [[0, 1], [-1, -2]] x from sampled trajectories.

Prints the bisection history, the certified lambda and epsilon, and the
analytic check (A + lambda/2 I Hurwitz). Writes the loss curve of the
final accepted training run to --out.
"""
import argparse
from pathlib import Path

import numpy as np

from lyocert.certify import BisectionConfig, bisect_lambda
from lyocert.dataio import atomic_write_text
from lyocert.nn import TrainConfig
from lyocert.sim import linear_system_data

A = np.array([[0.0, 1.0], [-1.0, -2.0]])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--trajectories", type=int, default=10)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--lr", type=float, default=None, help="override the learning rate")
    p.add_argument("--out", default="results/linear")
    args = p.parse_args()

    for seed in args.seeds:
        ds = linear_system_data(A, args.trajectories, args.duration, 0.01, seed=seed)
        tcfg = TrainConfig(seed=seed) if args.lr is None else TrainConfig(seed=seed, learning_rate=args.lr)
        cert = bisect_lambda(ds, BisectionConfig(0.0, 4.0, 0.25, tcfg))
        lam = cert.lambda_best
        ok = bool(np.all(np.linalg.eigvals(A + 0.5 * lam * np.eye(2)).real < -1e-12))
        print(f"seed={seed} lambda_best={lam:g} epsilon={cert.epsilon:.3g} analytic_feasible={ok}")
        print("  history: " + " ".join(f"{l:g}:{'ok' if c else 'fail'}" for l, c in cert.history))
        print(f"  P = {cert.candidate.P.tolist()}")
        lines = ["epoch,loss"] + [f"{i},{v:.17g}" for i, v in enumerate(cert.loss_history)]
        atomic_write_text(Path(args.out) / f"loss_seed{seed}.csv", "\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
