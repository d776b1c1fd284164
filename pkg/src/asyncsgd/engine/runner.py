"""Engine execution: lock-free threaded runs and the simulated-delay mode.

Both modes share the compiled batch-gradient kernel, the same seeded
per-epoch row orders, and the same stepsize accounting, so a single-worker
threaded run is bit-identical to a simulated run with no delays.

Stream layout: SeedSequence(config.seed) spawns three children, consumed by
(0) row sampling, (1) delay draws, (2) auxiliary noise.  Row orders are
always drawn on the control thread, so they do not depend on worker count.
"""

from __future__ import annotations

import heapq
import threading
import time

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence

from ..model import Problem, objective
from . import _kernels as kernels
from .config import (DelayStats, RunConfig, RunResult, SharedState,
                     StepsizeSchedule, TraceRecord, stepsize)

__all__ = [
    "run_threads",
    "run_simulated",
    "run_sync_averaged",
    "polyak_average",
    "run_streams",
]


def run_streams(seed: int):
    """(sampling, delay, noise) generators for one run seed."""
    ss = SeedSequence(seed).spawn(3)
    return tuple(Generator(PCG64(s)) for s in ss)


def _initial_x(config: RunConfig, dim: int) -> np.ndarray:
    if config.x0 is None:
        return np.zeros(dim)
    x0 = np.asarray(config.x0, dtype=np.float64)
    if x0.shape != (dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({dim},)")
    return x0.copy()


def _epoch_plan(config: RunConfig, n_rows: int):
    """Number of epochs and steps per epoch implied by the config."""
    if config.total_steps is not None:
        return 1, config.total_steps
    return config.epochs, -(-n_rows // config.batch)


def _epoch_order(config: RunConfig, rng: Generator, n_rows: int,
                 steps: int) -> np.ndarray:
    """Row visit order for one epoch (length defines the short final batch)."""
    if config.sampling == "permute" and config.total_steps is None:
        return rng.permutation(n_rows).astype(np.int64)
    return rng.integers(0, n_rows, size=steps * config.batch, dtype=np.int64)


def _epoch_alpha(schedule: StepsizeSchedule, epoch: int) -> float:
    if schedule.variant == "epoch_backoff":
        return schedule.epoch_alpha(epoch)
    return 0.0


def run_threads(problem: Problem, config: RunConfig,
                f_star: float = 0.0) -> RunResult:
    """Lock-free asynchronous run over real worker threads.

    Workers share one parameter vector and one step counter.  Each worker
    repeatedly reads the vector coordinate by coordinate, computes a
    mini-batch gradient at that (possibly inconsistent) read, claims the
    next step index by atomic fetch-increment, and writes the scaled
    gradient back through per-coordinate atomic adds.  Workers rendezvous
    at epoch boundaries, where the trace row and the epoch wall time are
    recorded against a quiescent snapshot.
    """
    if config.mode != "threads":
        raise ValueError("config.mode must be 'threads'")
    ds = problem.dataset
    d = problem.dim
    m = config.workers
    rng_sample, _, _ = run_streams(config.seed)

    shared = SharedState.fresh(_initial_x(config, d))
    x, counter = shared.x, shared.counter
    avg_sums = np.zeros((m, d))
    avg_meta = np.zeros((m, 1), dtype=np.int64)
    bufs = [(np.zeros(d), np.zeros(d), np.zeros(d, dtype=np.int8),
             np.zeros(d, dtype=np.int64)) for _ in range(m)]

    epochs, steps_per_epoch = _epoch_plan(config, ds.n_rows)
    barrier = threading.Barrier(m + 1)
    state: dict = {}
    failures: list = []
    empty_ks = np.empty(0, dtype=np.int64)

    def work(w: int) -> None:
        xbuf, gbuf, seen, touched = bufs[w]
        try:
            for _ in range(epochs):
                barrier.wait()
                kernels.run_worker_epoch(
                    x, counter, ds.indptr, ds.indices, ds.data, ds.labels,
                    problem.loss_kind, state["order"], config.batch,
                    state["lo"][w], state["hi"][w],
                    config.schedule.kind_code, config.schedule.alpha,
                    config.schedule.beta, state["epoch_alpha"],
                    config.average_burn_in,
                    1 if config.accumulate_average else 0,
                    1 if config.racy else 0,
                    avg_sums[w], avg_meta[w],
                    state["ks"][w] if state["ks"] is not None else empty_ks,
                    xbuf, gbuf, seen, touched)
                barrier.wait()
        except threading.BrokenBarrierError:
            return
        except BaseException as err:  # propagate worker panic to the caller
            failures.append(err)
            barrier.abort()

    threads = [threading.Thread(target=work, args=(w,), daemon=True)
               for w in range(m)]
    for t in threads:
        t.start()

    trace: list = []
    epoch_times: list = []
    ks_chunks: list = []
    try:
        for epoch in range(epochs):
            order = _epoch_order(config, rng_sample, ds.n_rows, steps_per_epoch)
            nb = -(-order.shape[0] // config.batch)
            lo = [w * nb // m for w in range(m)]
            hi = [(w + 1) * nb // m for w in range(m)]
            ks = None
            if config.record_ks:
                ks = [np.zeros(hi[w] - lo[w], dtype=np.int64) for w in range(m)]
            state.update(order=order, lo=lo, hi=hi, ks=ks,
                         epoch_alpha=_epoch_alpha(config.schedule, epoch))
            barrier.wait()
            t0 = time.perf_counter()
            barrier.wait()
            dt = time.perf_counter() - t0
            epoch_times.append(dt)
            if ks is not None:
                ks_chunks.extend(ks)
            if epoch % config.snapshot_every == 0 or epoch == epochs - 1:
                snap = x.copy()
                trace.append(TraceRecord(
                    epoch=epoch, steps=int(counter[0]),
                    gap=objective(problem, snap) - f_star,
                    epoch_seconds=dt))
    except threading.BrokenBarrierError:
        pass
    finally:
        barrier.abort()
        for t in threads:
            t.join()
    if failures:
        raise RuntimeError("worker thread failed") from failures[0]

    shared.avg_accumulator = avg_sums.sum(axis=0)
    shared.avg_count = int(avg_meta.sum())
    return RunResult(
        x_final=shared.x,
        avg_accumulator=shared.avg_accumulator,
        avg_count=shared.avg_count,
        trace=trace, epoch_times=epoch_times,
        total_steps=shared.steps,
        ks=np.concatenate(ks_chunks) if ks_chunks else None)


def run_simulated(problem: Problem, config: RunConfig,
                  f_star: float = 0.0) -> RunResult:
    """Single-threaded deterministic run with an explicit delay queue.

    The gradient at step k is evaluated on the stale vector holding
    exactly the updates i with i + D_i <= k - 1 (D_i drawn from the delay
    model when update i is issued).  A parallel fully-incorporated vector
    tracks every issued update immediately; epoch gaps are measured on it,
    mirroring the quiescent epoch boundary of the threaded mode.  Every
    realized delay is recorded.
    """
    if config.mode != "simulated":
        raise ValueError("config.mode must be 'simulated'")
    ds = problem.dataset
    d = problem.dim
    rng_sample, rng_delay, _ = run_streams(config.seed)

    shared = SharedState.fresh(_initial_x(config, d))
    x = shared.x
    x_tilde = x.copy()
    gbuf = np.zeros(d)
    seen = np.zeros(d, dtype=np.int8)
    touched = np.zeros(d, dtype=np.int64)
    avg_sum = shared.avg_accumulator
    avg_count = 0

    epochs, steps_per_epoch = _epoch_plan(config, ds.n_rows)
    sched = config.schedule
    burn_in = config.average_burn_in
    delays_all: list = []
    pending: list = []  # (apply_at_step, issue_k, coord_idx, coord_delta)
    k = 0
    trace: list = []
    epoch_times: list = []
    ks_list: list = []
    rows_list: list = []
    grads_list: list = []

    for epoch in range(epochs):
        order = _epoch_order(config, rng_sample, ds.n_rows, steps_per_epoch)
        nb = -(-order.shape[0] // config.batch)
        delays = config.delay.sample(rng_delay, nb)
        ep_alpha = _epoch_alpha(sched, epoch)
        t0 = time.perf_counter()
        for bi in range(nb):
            rows = order[bi * config.batch:(bi + 1) * config.batch]
            step = k + 1
            while pending and pending[0][0] <= step:
                _, _, idx, delta = heapq.heappop(pending)
                x[idx] += delta
            nt = kernels.grad_batch(ds.indptr, ds.indices, ds.data, ds.labels,
                                    rows, problem.loss_kind, x,
                                    gbuf, seen, touched)
            tidx = touched[:nt].copy()
            gvals = gbuf[tidx].copy()
            kernels.clear_touched(gbuf, seen, touched, nt)

            k += 1
            a_k = (sched.alpha * float(k) ** -sched.beta
                   if sched.variant == "poly" else ep_alpha)
            delta = -(a_k * gvals)
            d_k = int(delays[bi])
            delays_all.append(d_k)
            heapq.heappush(pending, (k + d_k + 1, k, tidx, delta))
            x_tilde[tidx] += delta

            if config.accumulate_average and k > burn_in:
                avg_sum += x
                avg_count += 1
            if config.record_ks:
                ks_list.append(k)
            if config.record_rows:
                rows_list.append(rows.copy())
            if config.record_grads:
                g = np.zeros(d)
                g[tidx] = gvals
                grads_list.append(g)
        dt = time.perf_counter() - t0
        epoch_times.append(dt)
        ep_delays = np.asarray(delays, dtype=np.int64)
        if epoch % config.snapshot_every == 0 or epoch == epochs - 1:
            # epoch_seconds is 0 here: simulated runs have no physical
            # duration and their trace must be bit-reproducible
            trace.append(TraceRecord(
                epoch=epoch, steps=k,
                gap=objective(problem, x_tilde) - f_star,
                epoch_seconds=0.0,
                max_delay=int(ep_delays.max()) if ep_delays.size else 0,
                mean_delay=float(ep_delays.mean()) if ep_delays.size else 0.0))

    while pending:
        _, _, idx, delta = heapq.heappop(pending)
        x[idx] += delta
    shared.counter[0] = k
    shared.avg_count = avg_count

    return RunResult(
        x_final=shared.x,
        avg_accumulator=shared.avg_accumulator,
        avg_count=shared.avg_count,
        trace=trace, epoch_times=epoch_times,
        total_steps=shared.steps,
        delay_stats=DelayStats.from_delays(np.asarray(delays_all, np.int64)),
        ks=np.asarray(ks_list, dtype=np.int64) if ks_list else None,
        step_rows=rows_list if config.record_rows else None,
        step_grads=grads_list if config.record_grads else None)


def run_sync_averaged(problem: Problem, config: RunConfig,
                      f_star: float = 0.0) -> RunResult:
    """Lock-synchronized comparator: per round, each of the m workers
    computes a mini-batch gradient at the same vector, a lock-guarded
    accumulator averages them, and a single worker applies the averaged
    update.  Exists for speedup comparisons against the lock-free path.
    """
    ds = problem.dataset
    d = problem.dim
    m = config.workers
    rng_sample, _, _ = run_streams(config.seed)

    x = _initial_x(config, d)
    gsum = np.zeros(d)
    bufs = [(np.zeros(d), np.zeros(d, dtype=np.int8),
             np.zeros(d, dtype=np.int64)) for _ in range(m)]
    lock = threading.Lock()
    barrier = threading.Barrier(m)
    epochs, steps_per_epoch = _epoch_plan(config, ds.n_rows)
    state: dict = {}
    failures: list = []
    start_gate = threading.Barrier(m + 1)
    k_holder = [0]

    def work(w: int) -> None:
        gbuf, seen, touched = bufs[w]
        try:
            for epoch in range(epochs):
                start_gate.wait()
                order, rounds, ep_alpha = (state["order"], state["rounds"],
                                           state["epoch_alpha"])
                nrows = order.shape[0]
                for r in range(rounds):
                    lo = (r * m + w) * config.batch
                    hi = min(lo + config.batch, nrows)
                    barrier.wait()
                    n_contrib = 0
                    if lo < nrows:
                        nt = kernels.grad_batch(
                            ds.indptr, ds.indices, ds.data, ds.labels,
                            order[lo:hi], problem.loss_kind, x,
                            gbuf, seen, touched)
                        tidx = touched[:nt]
                        with lock:
                            gsum[tidx] += gbuf[tidx]
                            state["contrib"] += 1
                        kernels.clear_touched(gbuf, seen, touched, nt)
                    barrier.wait()
                    if w == 0:
                        k_holder[0] += 1
                        k = k_holder[0]
                        a_k = (config.schedule.alpha * float(k) ** -config.schedule.beta
                               if config.schedule.variant == "poly" else ep_alpha)
                        with lock:
                            if state["contrib"]:
                                x[:] = x - (a_k / state["contrib"]) * gsum
                            gsum[:] = 0.0
                            state["contrib"] = 0
                    barrier.wait()
                start_gate.wait()
        except threading.BrokenBarrierError:
            return
        except BaseException as err:
            failures.append(err)
            barrier.abort()
            start_gate.abort()

    threads = [threading.Thread(target=work, args=(w,), daemon=True)
               for w in range(m)]
    for t in threads:
        t.start()

    trace: list = []
    epoch_times: list = []
    try:
        for epoch in range(epochs):
            order = _epoch_order(config, rng_sample, ds.n_rows, steps_per_epoch)
            rounds = -(-order.shape[0] // (m * config.batch))
            state.update(order=order, rounds=rounds, contrib=0,
                         epoch_alpha=_epoch_alpha(config.schedule, epoch))
            start_gate.wait()
            t0 = time.perf_counter()
            start_gate.wait()
            dt = time.perf_counter() - t0
            epoch_times.append(dt)
            trace.append(TraceRecord(
                epoch=epoch, steps=k_holder[0],
                gap=objective(problem, x) - f_star, epoch_seconds=dt))
    except threading.BrokenBarrierError:
        pass
    finally:
        start_gate.abort()
        barrier.abort()
        for t in threads:
            t.join()
    if failures:
        raise RuntimeError("sync-averaged worker failed") from failures[0]

    return RunResult(
        x_final=x, avg_accumulator=np.zeros(d), avg_count=0,
        trace=trace, epoch_times=epoch_times, total_steps=k_holder[0])


def polyak_average(result: RunResult) -> np.ndarray:
    """Mean of the accumulated read snapshots."""
    if result.avg_count <= 0:
        raise ValueError("no snapshots were accumulated (empty accumulator)")
    return result.avg_accumulator / result.avg_count
