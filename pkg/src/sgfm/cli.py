"""Command line entry point: ``sgfm train|guide|eval|bench``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import net
from .config import ConfigError, RunConfig, load_config
from .evaluation import OracleSpec, Row, error_curve, oracle_guided_samples, summarize, wasserstein
from .flow import TABLEAUX, AffineField, DivergenceError, LearnedField, integrate_trajectory, train
from .guidance import GuidanceProblem, guide

log = logging.getLogger("sgfm")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
RESULT_COLUMNS = ["sampler", "budget", "seed", "w1", "w2", "wall_ms"]


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12g" % value
    return str(value)


def _header(command: str, cfg: RunConfig, **extra) -> list[str]:
    fields = {"config_hash": cfg.digest(), "seed": cfg.seed, **extra}
    return [f"# sgfm {command} " + " ".join(f"{k}={fmt(v)}" for k, v in fields.items())]


def write_csv(path: Path, header: list[str], columns: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse an sgfm CSV into (header key/values, rows as dicts)."""
    meta: dict = {}
    lines = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        k, v = token.split("=", 1)
                        meta[k] = v
            elif line.strip():
                lines.append(line)
    return meta, list(csv.DictReader(lines))


def _points(rows: list[dict]) -> np.ndarray:
    return np.array([[float(r["x1"]), float(r["x2"])] for r in rows], dtype=float).reshape(-1, 2)


def _threads() -> int:
    raw = os.environ.get("SGFM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SGFM_THREADS must be an integer, got {raw!r}", "SGFM_THREADS")


def parse_analytic(text: str) -> AffineField:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--analytic expects sigma,mu numbers, got {text!r}", "--analytic")
    if len(values) not in (2, 3):
        raise ConfigError("--analytic expects sigma,mu or sigma,mu1,mu2", "--analytic")
    try:
        return AffineField(values[0], np.array(values[1:]))
    except ValueError as exc:
        raise ConfigError(f"--analytic: {exc}", "--analytic") from exc


def load_field(cfg: RunConfig, checkpoint: Optional[str], analytic: Optional[str]):
    if analytic is not None:
        return parse_analytic(analytic)
    path = Path(checkpoint) if checkpoint else Path(cfg.output_dir) / "checkpoint.json"
    try:
        params, _, _ = net.load_checkpoint(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise OSError(f"{path}: unreadable checkpoint ({exc})") from exc
    expected = tuple(cfg.model.hidden)
    if params.hidden != expected or params.activation != cfg.model.activation:
        raise ConfigError(
            f"model.hidden: checkpoint has {params.hidden}/{params.activation}, "
            f"config expects {expected}/{cfg.model.activation}",
            "model.hidden",
        )
    return LearnedField(params)


def _problem(cfg: RunConfig, field, steps: Optional[int] = None) -> GuidanceProblem:
    return GuidanceProblem(cfg.task.source_spec(), field, cfg.task.guidance_loss(), cfg.integration_config(steps))


def _oracle(cfg: RunConfig) -> OracleSpec:
    return OracleSpec(cfg.task.target_spec(), cfg.task.guidance_loss(), cfg.eval.oracle_proposals,
                      cfg.sub_seed("oracle"))


# -- commands --------------------------------------------------------------


def cmd_train(cfg: RunConfig, out: Path, args) -> None:
    m = cfg.model
    result = train(cfg.task.source_spec(), cfg.task.target_spec(), coupling=m.coupling, epochs=m.epochs,
                   batch_size=m.batch_size, seed=cfg.sub_seed("train"), hidden=tuple(m.hidden),
                   activation=m.activation, lr=m.lr)
    meta = {"config_hash": cfg.digest(), "seed": cfg.seed, "epochs": m.epochs, "coupling": m.coupling}
    out.mkdir(parents=True, exist_ok=True)
    net.save_checkpoint(out / "checkpoint.json", result.params, result.opt_state, meta)
    write_csv(out / "loss_history.csv", _header("train", cfg, coupling=m.coupling),
              ["epoch", "loss"], enumerate(result.losses.tolist()))
    log.info("wrote %s", out / "checkpoint.json")


def cmd_guide(cfg: RunConfig, out: Path, args) -> None:
    problem = _problem(cfg, load_field(cfg, args.checkpoint, args.analytic))
    sampler = cfg.sampler_config()
    result = guide(problem, sampler, cfg.guide.n, seed=cfg.sub_seed("guide"))
    budget = (sampler.n_particles or cfg.guide.n) if sampler.variant == "is" else sampler.n_iterations
    header = _header("guide", cfg, sampler=sampler.variant, nfe=problem.integration.nfe,
                     scheme=problem.integration.scheme, loss_scale=float(cfg.task.loss_scale), budget=budget)
    weight = 1.0 / len(result.x1)
    rows = ((x[0], x[1], weight, sampler.variant, cfg.seed) for x in result.x1)
    write_csv(out / "samples.csv", header, ["x1", "x2", "weight", "sampler", "seed"], rows)
    if cfg.guide.trajectory:
        k = min(cfg.guide.trajectory_particles, len(result.x0))
        traj = integrate_trajectory(problem.field, result.x0[:k], problem.integration)
        rows = ((t, p[0], p[1], i) for t, states in zip(traj.times, traj.states) for i, p in enumerate(states))
        write_csv(out / "trajectory.csv", header, ["t", "x1", "x2", "particle_id"], rows)
    log.info("wrote %s", out / "samples.csv")


def cmd_eval(cfg: RunConfig, out: Path, args) -> None:
    files = args.samples or [str(Path(cfg.output_dir) / "samples.csv")]
    if args.reference:
        reference = _points(read_csv(args.reference)[1])
    else:
        reference = oracle_guided_samples(_oracle(cfg), cfg.eval.n_oracle, seed=cfg.sub_seed("oracle"))
    rows = []
    w_seed = cfg.sub_seed("subsample")
    for path in files:
        meta, data = read_csv(path)
        if not data:
            raise OSError(f"{path}: no sample rows")
        pts = _points(data)
        rows.append(Row(data[0]["sampler"], int(meta.get("budget", len(pts))), int(data[0]["seed"]),
                        wasserstein(pts, reference, 1, seed=w_seed), wasserstein(pts, reference, 2, seed=w_seed),
                        0.0))
    rows.sort(key=lambda r: (r.sampler, r.budget, r.seed))
    write_csv(out / "results.csv", _header("eval", cfg), RESULT_COLUMNS,
              ((r.sampler, r.budget, r.seed, r.w1, r.w2, r.wall_ms) for r in rows))


def run_bench(cfg: RunConfig, field, threads: int = 1) -> dict[int, list[Row]]:
    """Error-curve rows per NFE; rows are computed per seed, possibly concurrently."""
    oracle = _oracle(cfg)
    samplers = cfg.eval_samplers()
    scheme = cfg.integration_config()
    jobs = []
    for nfe in cfg.eval.nfe:
        stages = len(TABLEAUX[scheme.scheme][1])
        if nfe % stages:
            raise ConfigError(f"eval.nfe: {nfe} is not a multiple of {stages} for scheme {scheme.scheme}", "eval.nfe")
        problem = _problem(cfg, field, nfe // stages)
        for seed in cfg.eval.seeds:
            jobs.append((nfe, problem, seed))

    def run(job):
        nfe, problem, seed = job
        return nfe, error_curve(problem, oracle, samplers, cfg.eval.budgets, [seed], cfg.eval.n_generated,
                                cfg.eval.n_oracle, timing=cfg.eval.timing)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    table: dict[int, list[Row]] = {nfe: [] for nfe in cfg.eval.nfe}
    for nfe, rows in results:
        table[nfe].extend(rows)
    return {nfe: sorted(rows, key=lambda r: (r.sampler, r.budget, r.seed)) for nfe, rows in table.items()}


def cmd_bench(cfg: RunConfig, out: Path, args) -> None:
    field = load_field(cfg, args.checkpoint, args.analytic)
    table = run_bench(cfg, field, _threads())
    summary = []
    for nfe, rows in table.items():
        write_csv(out / f"results_nfe{nfe}.csv", _header("bench", cfg, nfe=nfe), RESULT_COLUMNS,
                  ((r.sampler, r.budget, r.seed, r.w1, r.w2, r.wall_ms) for r in rows))
        summary.extend((s.sampler, s.budget, nfe, s.median_w1, s.q25_w1, s.q75_w1, s.mean_w1, s.std_w1,
                        s.median_w2, s.mean_w2, s.std_w2) for s in summarize(rows))
    write_csv(out / "summary.csv", _header("bench", cfg),
              ["sampler", "budget", "nfe", "median_w1", "q25_w1", "q75_w1", "mean_w1", "std_w1",
               "median_w2", "mean_w2", "std_w2"], summary)


COMMANDS = {"train": cmd_train, "guide": cmd_guide, "eval": cmd_eval, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgfm", description="Train flow fields and draw guided samples.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--checkpoint", help="checkpoint file (default: <output_dir>/checkpoint.json)")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        p.add_argument("--analytic", metavar="SIGMA,MU", help="use the affine Gaussian field instead of a checkpoint")
        if name == "eval":
            p.add_argument("--samples", nargs="+", help="sample CSVs to score")
            p.add_argument("--reference", help="reference sample CSV (default: oracle draws)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.output_dir)
        start = time.perf_counter()
        COMMANDS[args.command](cfg, out, args)
        log.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
    except ConfigError as exc:
        print(f"sgfm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError) as exc:
        print(f"sgfm: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"sgfm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
