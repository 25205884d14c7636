"""Command-line entry point: ``abundmap {simulate,fit,summarize,partition-bench,validate}``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
from scipy import linalg

from . import dataio
from .gibbs import Chain, GibbsSampler, initial_state
from .lattice import CellGrid, LatticeError, build_adjacency, partition_stripes
from .model import DataError, HyperParams, InvariantError
from .parallel import ThetaSchedule, bench_theta_sweep
from .simulate import SimConfig, simulate_dataset
from .stat_kernels import TruncationError
from .summaries import summarize_chain, write_summary_csvs

log = logging.getLogger("abundmap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sections(args, *names, required=()):
    conf = dataio.load_config(args.config) if args.config else {}
    for name in required:
        if name not in conf:
            raise dataio.ConfigError(f"config needs a [{name}] section")
    return conf


def cmd_simulate(args) -> int:
    conf = _sections(args, required=("simulate",))
    cfg: SimConfig = conf["simulate"]
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or Path(args.config).parent / "sim_out")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    data, truth = simulate_dataset(cfg)
    dataio.write_dataset(data, out)
    dataio.write_truth(truth, out)
    dataio.write_config({"simulate": cfg}, out / "resolved_config.ini")
    counts = np.bincount(data.y, minlength=4)
    print(f"simulated {data.n_cells} cells, {data.n_sites} sites (y counts {counts.tolist()}) "
          f"in {time.perf_counter() - t0:.2f} s -> {out}")
    return EXIT_OK


def _fit_config(args) -> dataio.RunConfig:
    conf = _sections(args)
    cfg = conf.get("fit", dataio.RunConfig())
    for key in ("cells", "sites", "out_dir", "mode", "seed", "iterations", "burn_in", "workers", "L"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    dataio.RunConfig(**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__})  # re-validate
    return cfg


def cmd_fit(args) -> int:
    cfg = _fit_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_config({"fit": cfg}, out / "resolved_config.ini")
    data = dataio.read_dataset(cfg.cells, cfg.sites, cfg.threshold)
    hyper = HyperParams(cfg.prior_var_beta, cfg.car_scale, cfg.alpha_cap)
    schedule = ThetaSchedule(partition_stripes(data.adj, data.grid, cfg.L), cfg.mode, cfg.workers)
    sampler = GibbsSampler(data, hyper, seed=cfg.seed, schedule=schedule,
                           check_every=cfg.check_every)
    ckpt = out / "checkpoint.npz"
    sweep_log = out / "sweeps.csv"
    if args.resume and ckpt.exists():
        state, chain = dataio.load_checkpoint(ckpt)
        log.info("resuming from sweep %d", state.sweep)
        append = sweep_log.exists()
    else:
        state = initial_state(data)
        P, n = data.n_covariates, data.n_cells
        chain = Chain(np.empty(0, np.int64), np.empty((0, 2)), np.empty((0, P)), np.empty((0, n)))
        append = False
    t0 = time.perf_counter()
    n_prop = n_acc = 0
    while state.sweep < cfg.iterations:
        target = min(state.sweep + cfg.checkpoint_every, cfg.iterations)
        part = sampler.run(state, target, cfg.burn_in, cfg.thin)
        chain = chain.extend(part)
        for r in part.reports:
            n_prop += r.n_missed_chained
            n_acc += r.mh_accept_rate * r.n_missed_chained
        dataio.write_sweep_log(part.reports, sweep_log, append=append)
        append = True
        chain.reports = []
        dataio.save_checkpoint(ckpt, state, chain)
        log.info("sweep %d / %d", state.sweep, cfg.iterations)
    dataio.write_chain(chain, data, out / "chain.csv")
    rate = n_acc / n_prop if n_prop else float("nan")
    print(f"fit done: {chain.n_draws} draws retained, MH acceptance {rate:.3f}, "
          f"wall time {time.perf_counter() - t0:.1f} s -> {out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    cfg = _fit_config(args)
    out = Path(args.out or cfg.out_dir)
    data = dataio.read_dataset(cfg.cells, cfg.sites, cfg.threshold)
    chain = dataio.read_chain(args.chain or Path(cfg.out_dir) / "chain.csv", data)
    mid = tuple(args.midpoints) if args.midpoints else cfg.midpoints
    cs, frames, coef = summarize_chain(data, chain.alpha, chain.beta, chain.theta, mid)
    paths = write_summary_csvs(frames, coef, out)
    checks = cs.check()
    print(coef[["name", "display", "significant"]].to_string(index=False))
    print(f"{len(paths)} files -> {out}; invariants {'ok' if all(checks.values()) else checks}")
    return EXIT_OK


def cmd_partition_bench(args) -> int:
    conf = _sections(args)
    cfg = conf.get("bench", dataio.BenchConfig())
    grid = CellGrid.rectangle(cfg.nx, cfg.ny)
    adj = build_adjacency(grid, 1.5)
    gen = np.random.default_rng(cfg.seed)
    n_sites = np.bincount(gen.integers(0, grid.size, cfg.sites), minlength=grid.size)
    table = bench_theta_sweep(adj, grid, cfg.L_values, cfg.workers, cfg.repetitions,
                              n_sites=n_sites, car_scale=cfg.car_scale, seed=cfg.seed)
    out = Path(args.out or cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False, float_format="%.6g")
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_validation_suite

    if args.quick:
        report = run_validation_suite(seeds=(0,), n_kernel=20_000, n_outer=1500, faults=False)
    else:
        report = run_validation_suite()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out, index=False)
    n_fail = int((~report.passed).sum())
    print(f"{len(report) - n_fail}/{len(report)} checks passed -> {out}")
    return EXIT_OK if n_fail == 0 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="abundmap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("-o", "--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the sampler")
    f.add_argument("-c", "--config")
    f.add_argument("--cells")
    f.add_argument("--sites")
    f.add_argument("-o", "--out-dir", dest="out_dir")
    f.add_argument("--mode", choices=("sequential", "parallel"))
    f.add_argument("--workers", type=int)
    f.add_argument("-L", type=int, dest="L")
    f.add_argument("--seed", type=int)
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", type=int, dest="burn_in")
    f.add_argument("--resume", action="store_true", help="continue from checkpoint.npz")
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("summarize", help="posterior summary CSVs")
    m.add_argument("-c", "--config")
    m.add_argument("--cells")
    m.add_argument("--sites")
    m.add_argument("--chain")
    m.add_argument("-o", "--out")
    m.add_argument("--midpoints", type=float, nargs=4)
    m.set_defaults(func=cmd_summarize, out_dir=None)

    b = sub.add_parser("partition-bench", help="time spatial-effect sweeps")
    b.add_argument("-c", "--config")
    b.add_argument("-o", "--out")
    b.set_defaults(func=cmd_partition_bench)

    v = sub.add_parser("validate", help="run the oracle suite")
    v.add_argument("-o", "--out", default="validation_report.csv")
    v.add_argument("--quick", action="store_true")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataError, LatticeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, TruncationError, FloatingPointError, linalg.LinAlgError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
