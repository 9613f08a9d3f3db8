"""Median trajectory straightness of OT-coupled and independently coupled fields."""

import argparse

import numpy as np

from sgfm.distributions import derive_seed, make_distribution, sample
from sgfm.flow import IntegrationConfig, LearnedField, integrate_trajectory, straightness, train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=2000)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--trajectories", type=int, default=200)
    args = parser.parse_args()

    source, target = make_distribution("uniform_square"), make_distribution("eight_gaussians")
    cfg = IntegrationConfig("euler", 20)
    for coupling in ("ot", "independent"):
        values = []
        for seed in range(args.seeds):
            field = LearnedField(train(source, target, coupling, args.epochs, seed=derive_seed(seed, "train")).params)
            x0 = sample(source, args.trajectories, seed=derive_seed(seed, "trajectories"))
            values.append(straightness(integrate_trajectory(field, x0, cfg)))
        values = np.concatenate(values)
        print(f"{coupling:12s} median straightness {np.median(values):.4f} over {len(values)} trajectories")


if __name__ == "__main__":
    main()
