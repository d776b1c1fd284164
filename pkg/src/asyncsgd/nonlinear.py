"""Stochastic root finding for a residual operator under noisy observations.

Runs the same asynchronous update machinery as the gradient engine but with
g = R(x) + xi in place of a sampled gradient: the goal is the root of R.
Two built-in problems ship: an affine residual R(x) = H (x - x_star) with
Gaussian observation noise (every statistic about it is exact, so it drives
the statistical acceptance tests), and a wrapper exposing a data problem's
gradient as the residual (sampling noise plays the role of xi).

Noise is drawn by the harness, not by the operator, so the realized noise
trace can be replayed through the linearized recursion
Delta_{k+1} = (I - alpha_k H) Delta_k - alpha_k xi_k, the exact oracle for
affine problems.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.random import Generator

from .engine import _kernels as kernels
from .engine.config import (DelayStats, RunConfig, RunResult,
                            StepsizeSchedule, TraceRecord, stepsize)
from .engine.runner import _epoch_alpha, _initial_x, run_streams
from .model import Problem

__all__ = [
    "ResidualProblem",
    "affine_problem",
    "gradient_problem",
    "run_nonlinear",
    "linearized_reference",
    "assumption_linearity_ratio",
]


@dataclass
class ResidualProblem:
    """Residual operator with the side information the checks need.

    residual maps a point to R(x); noise(x, k, rng) returns the additive
    observation noise for step k.  observation, when given, supplies the
    full noisy view g directly (the recorded noise is then g - R(x)); this
    is how the gradient wrapper reproduces the engine's iterates exactly.
    hess is the derivative of R at the root, sigma the covariance of the
    noise at the root, gamma the local-expansion order of R.
    """

    dim: int
    residual: Callable[[np.ndarray], np.ndarray]
    noise: Callable[[np.ndarray, int, Generator], np.ndarray] | None
    x_star: np.ndarray
    hess: np.ndarray
    sigma: np.ndarray
    gamma: float = 1.0
    observation: Callable[[np.ndarray, int, Generator], np.ndarray] | None = None
    linear: bool = False
    curvature_ok: bool = True
    root_tol: float = 1e-10

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=np.float64)
        self.hess = np.ascontiguousarray(self.hess, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.x_star.shape != (self.dim,):
            raise ValueError("x_star has the wrong shape")
        if self.hess.shape != (self.dim, self.dim):
            raise ValueError("hess must be dim x dim")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        r0 = np.linalg.norm(self.residual(self.x_star))
        if r0 > self.root_tol:
            raise ValueError(
                f"residual at x_star has norm {r0:.3e} > {self.root_tol:g}")
        if self.curvature_ok:
            sym = (self.hess + self.hess.T) / 2.0
            if np.linalg.eigvalsh(sym).min() <= 0:
                raise ValueError("symmetric part of hess must be positive "
                                 "definite (or set curvature_ok=False)")

    def quadratic_gap(self, x: np.ndarray) -> float:
        """(1/2) (x - x_star)^T H (x - x_star); exact f - f* when R is affine."""
        delta = x - self.x_star
        return 0.5 * float(delta @ (self.hess @ delta))


def affine_problem(hess: np.ndarray, sigma: np.ndarray,
                   x_star: np.ndarray | None = None) -> ResidualProblem:
    """R(x) = H (x - x_star) observed under N(0, sigma) noise.

    sigma may be the zero matrix for a noise-free iteration.
    """
    hess = np.ascontiguousarray(hess, dtype=np.float64)
    d = hess.shape[0]
    x_star = np.zeros(d) if x_star is None else np.asarray(x_star, np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    chol = (np.zeros((d, d)) if not sigma.any()
            else np.linalg.cholesky(sigma))

    def residual(x):
        return hess @ (x - x_star)

    def noise(x, k, rng):
        return chol @ rng.standard_normal(d)

    return ResidualProblem(dim=d, residual=residual, noise=noise,
                           x_star=x_star, hess=hess, sigma=sigma,
                           gamma=1.0, linear=True)


def gradient_problem(problem: Problem, info, batch: int = 1) -> ResidualProblem:
    """Expose a data problem's full gradient as the residual to solve.

    The observation draws `batch` rows uniformly (from the run's sampling
    stream) and evaluates their mean gradient through the same compiled
    kernel the engine uses, so an i.i.d.-sampling engine run with the same
    seed produces bit-identical iterates; the implied noise xi is the
    sampling error.  info is the problem's second-order summary.
    """
    from .model import _full_gradient

    ds = problem.dataset
    n = problem.n_rows
    d = problem.dim
    gbuf = np.zeros(d)
    seen = np.zeros(d, dtype=np.int8)
    touched = np.zeros(d, dtype=np.int64)

    def residual(x):
        return _full_gradient(problem, x)

    def observation(x, k, rng):
        rows = rng.integers(0, n, size=batch, dtype=np.int64)
        nt = kernels.grad_batch(ds.indptr, ds.indices, ds.data, ds.labels,
                                rows, problem.loss_kind, x, gbuf, seen, touched)
        g = np.zeros(d)
        tidx = touched[:nt]
        g[tidx] = gbuf[tidx]
        kernels.clear_touched(gbuf, seen, touched, nt)
        return g

    sigma = info.grad_cov / batch
    # the logistic minimizer is solved to grad norm 1e-8, not 1e-10
    root_tol = 1e-10 if problem.loss == "least_squares" else 1e-8
    return ResidualProblem(dim=problem.dim, residual=residual, noise=None,
                           x_star=info.x_star, hess=info.hessian,
                           sigma=sigma, gamma=1.0, observation=observation,
                           root_tol=root_tol)


def _total_steps(problem: ResidualProblem, config: RunConfig) -> int:
    if config.total_steps is None:
        raise ValueError("nonlinear runs need config.total_steps")
    return config.total_steps


def run_nonlinear(problem: ResidualProblem, config: RunConfig,
                  record_noise: bool = False,
                  force_generic: bool = False) -> RunResult:
    """Asynchronous root-finding run; same update semantics as the engine.

    Simulated mode uses the delay queue (affine Gaussian problems take a
    compiled fast path unless force_generic is set; behaviour is
    identical).  Threads mode runs real workers with atomic coordinate
    updates; the residual map must tolerate concurrent calls on distinct
    inputs.
    """
    if config.mode == "simulated":
        if problem.linear and not record_noise and not force_generic:
            return _run_affine_fast(problem, config)
        return _run_simulated_generic(problem, config, record_noise)
    return _run_threads_nonlinear(problem, config)


def _draw_noise_matrix(problem: ResidualProblem, n: int,
                       rng: Generator) -> np.ndarray:
    """Pre-draw the whole Gaussian noise trace (row k-1 serves step k)."""
    z = rng.standard_normal((n, problem.dim))
    if not problem.sigma.any():
        return np.zeros((n, problem.dim))
    chol = np.linalg.cholesky(problem.sigma)
    return z @ chol.T


def _run_affine_fast(problem: ResidualProblem, config: RunConfig) -> RunResult:
    n = _total_steps(problem, config)
    d = problem.dim
    _, rng_delay, rng_noise = run_streams(config.seed)
    noise = _draw_noise_matrix(problem, n, rng_noise)
    delays = config.delay.sample(rng_delay, n)

    sched = config.schedule
    if sched.variant == "poly":
        alphas = sched.alpha * np.arange(1, n + 1, dtype=np.float64) ** -sched.beta
    else:
        alphas = np.full(n, sched.epoch_alpha(0))

    apply_at = np.arange(1, n + 1, dtype=np.int64) + delays + 1
    apply_order = np.argsort(apply_at, kind="stable").astype(np.int64)
    apply_key = apply_at[apply_order]

    x = _initial_x(config, d)
    avg_sum = np.zeros(d)
    updates_ws = np.zeros((n, d))
    t0 = time.perf_counter()
    navg = kernels.simulate_linear(problem.hess, problem.x_star, noise, alphas,
                                   apply_order, apply_key, x, avg_sum,
                                   config.average_burn_in, updates_ws)
    dt = time.perf_counter() - t0
    # one summary trace row; request dense traces via force_generic
    trace = [TraceRecord(
        epoch=0, steps=n, gap=float(np.sum((x - problem.x_star) ** 2)),
        epoch_seconds=0.0,
        max_delay=int(delays.max()) if n else 0,
        mean_delay=float(delays.mean()) if n else 0.0)]
    return RunResult(
        x_final=x, avg_accumulator=avg_sum, avg_count=int(navg),
        trace=trace, epoch_times=[dt], total_steps=n,
        delay_stats=DelayStats.from_delays(delays))


def _run_simulated_generic(problem: ResidualProblem, config: RunConfig,
                           record_noise: bool) -> RunResult:
    import heapq

    n = _total_steps(problem, config)
    d = problem.dim
    rng_sample, rng_delay, rng_noise = run_streams(config.seed)
    delays = config.delay.sample(rng_delay, n)
    noise_mat = None
    if problem.linear and problem.observation is None:
        noise_mat = _draw_noise_matrix(problem, n, rng_noise)

    sched = config.schedule
    ep_alpha = _epoch_alpha(sched, 0)
    x = _initial_x(config, d)
    avg_sum = np.zeros(d)
    avg_count = 0
    pending: list = []
    noise_rec = np.zeros((n, d)) if record_noise else None
    trace: list = []
    t0 = time.perf_counter()

    for k in range(1, n + 1):
        while pending and pending[0][0] <= k:
            _, _, delta = heapq.heappop(pending)
            x += delta
        if config.accumulate_average and k > config.average_burn_in:
            avg_sum += x
            avg_count += 1
        if problem.observation is not None:
            g = problem.observation(x, k, rng_sample)
            xi = g - problem.residual(x)
        else:
            xi = (noise_mat[k - 1] if noise_mat is not None
                  else problem.noise(x, k, rng_noise))
            g = problem.residual(x) + xi
        if record_noise:
            noise_rec[k - 1] = xi
        a_k = (sched.alpha * float(k) ** -sched.beta
               if sched.variant == "poly" else ep_alpha)
        heapq.heappush(pending, (k + int(delays[k - 1]) + 1, k, -(a_k * g)))
        if k % config.snapshot_every == 0:
            trace.append(TraceRecord(
                epoch=0, steps=k,
                gap=float(np.sum((x - problem.x_star) ** 2)),
                epoch_seconds=0.0,
                max_delay=int(delays[:k].max()),
                mean_delay=float(delays[:k].mean())))

    while pending:
        _, _, delta = heapq.heappop(pending)
        x += delta
    dt = time.perf_counter() - t0

    result = RunResult(
        x_final=x, avg_accumulator=avg_sum, avg_count=avg_count,
        trace=trace, epoch_times=[dt], total_steps=n,
        delay_stats=DelayStats.from_delays(delays))
    result.noise_trace = noise_rec
    return result


def _run_threads_nonlinear(problem: ResidualProblem,
                           config: RunConfig) -> RunResult:
    n = _total_steps(problem, config)
    d = problem.dim
    m = config.workers
    x = _initial_x(config, d)
    counter = np.zeros(1, dtype=np.int64)
    avg_sums = np.zeros((m, d))
    avg_counts = np.zeros(m, dtype=np.int64)
    all_coords = np.arange(d, dtype=np.int64)
    sched = config.schedule
    ep_alpha = _epoch_alpha(sched, 0)
    _, _, rng_noise = run_streams(config.seed)
    worker_rngs = [Generator(np.random.PCG64(s))
                   for s in np.random.SeedSequence(config.seed).spawn(3)[2].spawn(m)]
    failures: list = []

    def work(w: int) -> None:
        rng = worker_rngs[w]
        xbuf = np.zeros(d)
        try:
            while True:
                claimed = kernels.fetch_increment(counter)
                if claimed >= n:
                    return
                k = claimed + 1
                kernels.read_snapshot(x, xbuf)
                if problem.observation is not None:
                    g = problem.observation(xbuf, k, rng)
                else:
                    g = problem.residual(xbuf) + problem.noise(xbuf, k, rng)
                a_k = (sched.alpha * float(k) ** -sched.beta
                       if sched.variant == "poly" else ep_alpha)
                kernels.atomic_add_coords(x, all_coords, -(a_k * g))
                if config.accumulate_average and k > config.average_burn_in:
                    avg_sums[w] += xbuf
                    avg_counts[w] += 1
        except BaseException as err:
            failures.append(err)

    t0 = time.perf_counter()
    threads = [threading.Thread(target=work, args=(w,), daemon=True)
               for w in range(m)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    dt = time.perf_counter() - t0
    if failures:
        raise RuntimeError("nonlinear worker failed") from failures[0]

    return RunResult(
        x_final=x, avg_accumulator=avg_sums.sum(axis=0),
        avg_count=int(avg_counts.sum()),
        trace=[], epoch_times=[dt], total_steps=n)


def linearized_reference(hess: np.ndarray, noise_trace: np.ndarray,
                         schedule: StepsizeSchedule, n: int,
                         delta1: np.ndarray | None = None) -> np.ndarray:
    """Replay Delta_{k+1} = (I - alpha_k H) Delta_k - alpha_k xi_k.

    Returns the n x d array of Delta_k for k = 1..n.  With an affine
    residual and no delays this reproduces the engine's error sequence
    exactly; it is the deterministic oracle quadratic problems are checked
    against.
    """
    hess = np.asarray(hess, dtype=np.float64)
    noise_trace = np.asarray(noise_trace, dtype=np.float64)
    d = hess.shape[0]
    if noise_trace.shape[0] < n or noise_trace.shape[1] != d:
        raise ValueError("noise trace does not match (n, dim)")
    out = np.zeros((n, d))
    if delta1 is not None:
        out[0] = np.asarray(delta1, dtype=np.float64)
    eye = np.eye(d)
    for k in range(1, n):
        a_k = stepsize(schedule, k)
        out[k] = (eye - a_k * hess) @ out[k - 1] - a_k * noise_trace[k - 1]
    return out


def assumption_linearity_ratio(problem: ResidualProblem, radius: float,
                               n_points: int = 200, seed: int = 0) -> float:
    """max ||R(x) - H (x - x_star)|| / ||x - x_star||^(1+gamma) on a ball.

    Reported, not asserted: a finite value over the sampled ball is
    evidence for the local-expansion condition at the given gamma.
    """
    rng = Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(n_points):
        u = rng.standard_normal(problem.dim)
        u *= radius * rng.random() ** (1.0 / problem.dim) / np.linalg.norm(u)
        x = problem.x_star + u
        dev = np.linalg.norm(problem.residual(x) - problem.hess @ u)
        denom = np.linalg.norm(u) ** (1.0 + problem.gamma)
        if denom > 0:
            worst = max(worst, dev / denom)
    return worst
