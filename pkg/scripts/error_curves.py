"""IS error against the particle budget for the uniform -> 8 Gaussians task.

Trains an OT field (or loads one with --checkpoint), then prints median W1
per budget for each NFE and writes the rows to a CSV.
"""

import argparse
import csv
import time

from sgfm import net
from sgfm.distributions import GuidanceLoss, make_distribution
from sgfm.evaluation import OracleSpec, error_curve, summarize
from sgfm.flow import IntegrationConfig, LearnedField, train
from sgfm.guidance import GuidanceProblem, SamplerConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=20000)
    parser.add_argument("--checkpoint", help="load a trained field instead of training")
    parser.add_argument("--nfe", type=int, nargs="+", default=[2, 20, 100])
    parser.add_argument("--budgets", type=int, nargs="+", default=[100, 1000, 10000])
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--out", default="error_curves.csv")
    args = parser.parse_args()

    source, target = make_distribution("uniform_square"), make_distribution("eight_gaussians")
    loss = GuidanceLoss("eight_gaussian_task")
    if args.checkpoint:
        params, _, _ = net.load_checkpoint(args.checkpoint)
    else:
        start = time.perf_counter()
        result = train(source, target, "ot", args.epochs, seed=1)
        params = result.params
        net.save_checkpoint("eight_gaussians_ot.json", params, result.opt_state)
        print(f"trained {args.epochs} epochs in {time.perf_counter() - start:.0f}s")

    oracle = OracleSpec(target, loss)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nfe", "budget", "seed", "w1", "w2", "wall_ms"])
        for nfe in args.nfe:
            problem = GuidanceProblem(source, LearnedField(params), loss, IntegrationConfig("euler", nfe))
            rows = error_curve(problem, oracle, {"is": SamplerConfig("is")}, args.budgets, range(args.seeds))
            writer.writerows([nfe, r.budget, r.seed, r.w1, r.w2, r.wall_ms] for r in rows)
            for s in summarize(rows):
                print(f"nfe {nfe:3d}  budget {s.budget:6d}  median W1 {s.median_w1:.4f}  "
                      f"IQR [{s.q25_w1:.4f}, {s.q75_w1:.4f}]")


if __name__ == "__main__":
    main()
