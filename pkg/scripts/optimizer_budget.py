"""How the certified rate depends on the optimizer's learning rate.

For each learning rate and seed, runs the linear-system and plant
certifications and prints lambda_best next to the analytic ceilings
(2 for the linear system, 2 min K/M = 6 for the plant).
"""
import argparse

import numpy as np

from lyocert.certify import BisectionConfig, bisect_lambda
from lyocert.nn import TrainConfig, train
from lyocert.sim import PlantConfig, generate_training_data, linear_system_data

A = np.array([[0.0, 1.0], [-1.0, -2.0]])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lrs", type=float, nargs="+", default=[1e-3, 3e-3, 1e-2])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--plant", action="store_true", help="also run the (slower) plant certification")
    args = p.parse_args()

    for lr in args.lrs:
        for seed in range(args.seeds):
            ds = linear_system_data(A, 10, 5.0, 0.01, seed=seed)
            tcfg = TrainConfig(seed=seed, learning_rate=lr)
            at1 = train(ds, TrainConfig(lam=1.0, seed=seed, learning_rate=lr))
            lin = bisect_lambda(ds, BisectionConfig(0.0, 4.0, 0.25, tcfg)).lambda_best
            line = f"lr={lr:g} seed={seed} linear: converged@1={at1.converged} ({at1.epochs_used} ep) lambda={lin:g}"
            if args.plant:
                pds = generate_training_data(PlantConfig(seed=seed), 99, duration=2.0)
                line += f"  plant: lambda={bisect_lambda(pds, BisectionConfig(0.0, 20.0, 0.25, tcfg)).lambda_best:g}"
            print(line, flush=True)


if __name__ == "__main__":
    main()
