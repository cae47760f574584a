"""min_h over an (alpha, epsilon) grid on the simulated two-joint plant.

Certifies (lambda, epsilon) from plant rollouts, then runs the obstacle
scenario for every grid cell and prints the table with its monotonicity
verdicts.
"""
import argparse
from pathlib import Path

import numpy as np

from lyocert.cbf import Obstacle, SafetySpec
from lyocert.certify import BisectionConfig, bisect_lambda
from lyocert.dataio import atomic_write_text
from lyocert.nn import TrainConfig
from lyocert.sim import PlantConfig, generate_training_data, sweep_table


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--disturbance", type=float, default=0.05)
    p.add_argument("--no-feedforward", action="store_true", help="plain velocity loop without command feedforward")
    p.add_argument("--out", default="results/table")
    args = p.parse_args()

    ds = generate_training_data(PlantConfig(seed=args.seed), 99, duration=2.0)
    cert = bisect_lambda(ds, BisectionConfig(0.0, 20.0, 0.25, TrainConfig(seed=args.seed)))
    print(f"certified lambda={cert.lambda_best:g} epsilon={cert.epsilon:.3g}")

    plant = PlantConfig(disturbance_bound=args.disturbance, seed=args.seed, feedforward=not args.no_feedforward)
    spec = SafetySpec((Obstacle((0.6, 0.5), 0.25),), alpha=1.0)
    alphas = [0.5, 1, 2, 4, 10, 20, 30, 50]
    epsilons = sorted({0.0, cert.epsilon, 0.04, 0.06, 0.07, 0.08})
    s = sweep_table(plant, spec, alphas, epsilons, [(0.0, 0.0), (0.6, 0.5)], 1.0, cert=cert, duration=8.0)

    print("alpha  " + " ".join(f"eps={e:<8.3g}" for e in s.epsilons))
    for a, row in zip(s.alphas, s.min_h):
        flag = "<lambda" if a < cert.lambda_best else ""
        print(f"{a:<6g} " + " ".join(f"{v:+.2e}   " for v in row) + flag)
    print(f"tolerance (max |qd| dt) = {np.nanmax(s.tolerance):.2e}")
    for line in s.verdicts():
        print(line)
    atomic_write_text(Path(args.out) / "sweep.csv", s.to_csv())


if __name__ == "__main__":
    main()
