"""Held-out violation rate of a plant certificate and its Chernoff bound.

598 rollouts are split into 99 for certification and 499 for testing.
"""
import argparse

from lyocert.bounds import chernoff_bound
from lyocert.certify import BisectionConfig, bisect_lambda, validate_certificate, validate_per_trajectory
from lyocert.dataio import split_dataset
from lyocert.nn import TrainConfig
from lyocert.sim import PlantConfig, generate_training_data


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--disturbance", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=0.01)
    args = p.parse_args()

    ds = generate_training_data(PlantConfig(seed=args.seed, disturbance_bound=args.disturbance), 598, duration=2.0)
    train_ds, test_ds = split_dataset(ds, 99, seed=args.seed)
    cert = bisect_lambda(train_ds, BisectionConfig(0.0, 20.0, 0.25, TrainConfig(seed=args.seed)))
    c_hat, m = validate_certificate(cert, test_ds)
    t_hat, t_m = validate_per_trajectory(cert, test_ds)
    print(f"lambda={cert.lambda_best:g} epsilon={cert.epsilon:.3g}")
    print(f"samples: {c_hat}/{m} violate, bound {chernoff_bound(c_hat, m, args.delta).c_bar:.4f}")
    print(f"trajectories: {t_hat}/{t_m} violate, bound {chernoff_bound(t_hat, t_m, args.delta).c_bar:.4f}")


if __name__ == "__main__":
    main()
