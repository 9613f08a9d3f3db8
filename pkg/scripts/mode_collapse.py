"""Compare the spread of IS and optimization-based samples on the S-curve task.

Optimization pulls every particle towards the line x1 = x2, so the
standard deviation of x1 - x2 shrinks far below the IS value.
"""

import argparse
import json

import numpy as np

from sgfm.distributions import GuidanceLoss, make_distribution
from sgfm.flow import IntegrationConfig, LearnedField, train
from sgfm.guidance import GuidanceProblem, SamplerConfig, guide


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/s_curve_mode_collapse.json")
    parser.add_argument("--epochs", type=int, default=2000)
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--out", default="mode_collapse.npz")
    args = parser.parse_args()

    with open(args.config) as fh:
        opt = SamplerConfig(**json.load(fh)["sampler"])
    source = make_distribution("gaussian_std")
    field = LearnedField(train(source, make_distribution("s_curve"), "ot", args.epochs, seed=2).params)
    problem = GuidanceProblem(source, field, GuidanceLoss("s_curve_task"), IntegrationConfig("euler", 20))

    is_points = guide(problem, SamplerConfig("is", n_particles=10_000), args.n, seed=0).x1
    opt_points = guide(problem, opt, args.n, seed=0).x1
    is_spread = np.std(is_points[:, 0] - is_points[:, 1])
    opt_spread = np.std(opt_points[:, 0] - opt_points[:, 1])
    print(f"std(x1 - x2)  IS {is_spread:.4f}  opt {opt_spread:.4f}  ratio {opt_spread / is_spread:.3f}")
    np.savez(args.out, is_points=is_points, opt_points=opt_points)


if __name__ == "__main__":
    main()
