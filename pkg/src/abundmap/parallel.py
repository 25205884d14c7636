"""Boundary-separator schedule for the spatial-effect Gibbs sweep.

Phase 1 updates the boundary cells one after another. Phase 2 sweeps every
block in ascending cell order; blocks only read their own effects and the
(now fixed) boundary effects, so they may run concurrently. Each cell
consumes exactly one pre-drawn standard normal indexed by its id, so the
result does not depend on how blocks are scheduled.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
import pandas as pd

from .lattice import (
    AdjacencyStructure,
    LatticeError,
    SeparatorPartition,
    partition_stripes,
    sequential_step_count,
    validate_partition,
)

__all__ = ["ThetaSchedule", "run_theta_sweep", "bench_theta_sweep", "sweep_cells"]

_POOLS: dict[int, ThreadPoolExecutor] = {}


def _pool(workers: int) -> ThreadPoolExecutor:
    pool = _POOLS.get(workers)
    if pool is None:
        pool = _POOLS[workers] = ThreadPoolExecutor(max_workers=workers,
                                                    thread_name_prefix="theta")
    return pool


@numba.njit(nogil=True, cache=True)
def sweep_cells(cells, nbr_start, nbr_end, indices, w_plus, theta,
                resid_sum, n_sites, inv_car, noise):  # pragma: no cover - compiled
    """Single-site Gibbs updates of ``theta`` over ``cells`` in order, in place.

    Cell ``i`` draws from the normal with precision
    ``n_i + w_{i+} / car_scale`` and mean
    ``(resid_sum_i + sum_j w_ij theta_j / car_scale) / precision``.
    """
    for k in range(cells.size):
        i = cells[k]
        s = 0.0
        for p in range(nbr_start[i], nbr_end[i]):
            s += theta[indices[p]]
        prec = n_sites[i] + w_plus[i] * inv_car
        theta[i] = (resid_sum[i] + inv_car * s) / prec + noise[i] / np.sqrt(prec)


@dataclass(frozen=True)
class ThetaSchedule:
    """How to run one spatial-effect sweep.

    mode ``"sequential"`` runs the boundary pass and then each block on the
    calling thread; ``"parallel"`` queues the blocks on a pool of
    ``workers`` threads. Both visit cells in the same order per block.
    """

    partition: SeparatorPartition
    mode: str = "sequential"
    workers: int = 1

    def __post_init__(self):
        if self.mode not in ("sequential", "parallel"):
            raise ValueError("mode must be 'sequential' or 'parallel'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def build(cls, adj, grid, L: int = 1, mode: str = "sequential", workers: int = 1):
        return cls(partition_stripes(adj, grid, L), mode, workers)

    def validate(self, adj: AdjacencyStructure) -> None:
        validate_partition(self.partition, adj)

    @property
    def critical_path(self) -> int:
        return sequential_step_count(self.partition)


def _logged_sweep(cells, nbr_start, nbr_end, indices, w_plus, theta,
                  resid_sum, n_sites, inv_car, noise, reads, writes):
    for i in cells:
        nb = indices[nbr_start[i]:nbr_end[i]]
        reads.update(int(j) for j in nb)
        writes.add(int(i))
        prec = n_sites[i] + w_plus[i] * inv_car
        s = 0.0
        for j in nb:
            s += theta[j]
        theta[i] = (resid_sum[i] + inv_car * s) / prec + noise[i] / np.sqrt(prec)


def run_theta_sweep(
    schedule: ThetaSchedule,
    theta: np.ndarray,
    adj: AdjacencyStructure,
    resid_sum: np.ndarray,
    n_sites: np.ndarray,
    car_scale: float,
    noise: np.ndarray,
    *,
    nbr_end: np.ndarray | None = None,
    access_log: dict | None = None,
) -> np.ndarray:
    """One full sweep of ``theta`` (modified in place and returned).

    Args:
        resid_sum: per-cell sum over sites of ``z_P - v_i^T beta``.
        n_sites: sites per cell.
        noise: one standard normal per cell, indexed by cell id.
        nbr_end: optional override of each cell's neighbour-list end offset.
        access_log: when a dict is given, runs an instrumented pure-Python
            sweep and records, per phase-2 block, the sets of cells read and
            written (keys ``("block", k)``), plus the boundary phase under
            ``"boundary"``.

    Raises:
        LatticeError: if the partition does not match the adjacency size.
    """
    part = schedule.partition
    n = adj.size
    covered = part.boundary.size + sum(b.size for b in part.blocks)
    if theta.shape != (n,) or covered != n:
        raise LatticeError("partition/adjacency mismatch")
    start = adj.indptr[:-1]
    end = adj.indptr[1:] if nbr_end is None else nbr_end
    w_plus = adj.n_neighbors.astype(np.float64)
    inv_car = 1.0 / car_scale
    n_sites = np.asarray(n_sites, dtype=np.float64)
    args = (start, end, adj.indices, w_plus, theta, resid_sum, n_sites, inv_car, noise)

    if access_log is not None:
        reads, writes = set(), set()
        _logged_sweep(part.boundary, *args, reads, writes)
        access_log["boundary"] = (reads, writes)
        for k, blk in enumerate(part.blocks):
            reads, writes = set(), set()
            _logged_sweep(blk, *args, reads, writes)
            access_log[("block", k)] = (reads, writes)
        return theta

    if part.boundary.size:
        sweep_cells(part.boundary, *args)
    if schedule.mode == "sequential" or schedule.workers == 1 or len(part.blocks) < 2:
        for blk in part.blocks:
            sweep_cells(blk, *args)
    else:
        futures = [_pool(schedule.workers).submit(sweep_cells, blk, *args)
                   for blk in part.blocks]
        for f in futures:
            f.result()
    return theta


def bench_theta_sweep(
    adj: AdjacencyStructure,
    grid,
    L_values,
    worker_counts,
    repetitions: int = 20,
    *,
    n_sites: np.ndarray | None = None,
    car_scale: float = 0.1,
    seed: int = 0,
) -> pd.DataFrame:
    """Time spatial-effect sweeps across block counts and worker counts.

    The baseline is ``L = 1`` on one worker. Each row reports the median
    wall time over ``repetitions`` sweeps.

    Returns:
        DataFrame with columns ``L, workers, cells, critical_path,
        ms_per_sweep, speedup``.
    """
    n = adj.size
    rng = np.random.default_rng(seed)
    n_sites = np.zeros(n) if n_sites is None else np.asarray(n_sites, float)
    resid = rng.standard_normal(n) * n_sites
    noise = rng.standard_normal((repetitions + 1, n))

    def timed(schedule):
        theta = np.zeros(n)
        run_theta_sweep(schedule, theta, adj, resid, n_sites, car_scale, noise[0])  # warm-up
        times = []
        for r in range(repetitions):
            t0 = time.perf_counter()
            run_theta_sweep(schedule, theta, adj, resid, n_sites, car_scale, noise[r + 1])
            times.append(time.perf_counter() - t0)
        return 1e3 * float(np.median(times))

    base = timed(ThetaSchedule(partition_stripes(adj, grid, 1), "sequential", 1))
    rows = []
    for L in L_values:
        part = partition_stripes(adj, grid, L)
        for w in worker_counts:
            if L == 1 and w == 1:
                ms = base
            else:
                ms = timed(ThetaSchedule(part, "parallel" if w > 1 else "sequential", w))
            rows.append(dict(L=L, workers=w, cells=n, critical_path=sequential_step_count(part),
                             ms_per_sweep=ms, speedup=base / ms))
    return pd.DataFrame(rows, columns=["L", "workers", "cells", "critical_path",
                                       "ms_per_sweep", "speedup"])
