"""Run configuration, stepsize schedules, delay models, and result records."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StepsizeSchedule",
    "DelayModel",
    "RunConfig",
    "TraceRecord",
    "DelayStats",
    "RunResult",
    "stepsize",
]


@dataclass(frozen=True)
class StepsizeSchedule:
    """Either poly (alpha * k^-beta) or epoch_backoff (alpha0 * decay^epoch).

    poly accepts beta in [0, 1]; values outside (1/2, 1) draw a warning
    because the averaged-iterate guarantees need beta strictly inside
    that range.
    """

    variant: str
    alpha: float = 1.0
    beta: float = 0.55
    decay: float = 0.95

    def __post_init__(self):
        if self.variant == "poly":
            if self.alpha <= 0:
                raise ValueError("poly schedule needs alpha > 0")
            if not 0.0 <= self.beta <= 1.0:
                raise ValueError("poly schedule needs beta in [0, 1]")
            if not 0.5 < self.beta < 1.0:
                warnings.warn(
                    f"beta={self.beta} is outside (1/2, 1); averaged-iterate "
                    "normality is not guaranteed at this exponent")
        elif self.variant == "epoch_backoff":
            if self.alpha <= 0:
                raise ValueError("epoch_backoff needs alpha0 > 0")
            if not 0.0 < self.decay < 1.0:
                raise ValueError("epoch_backoff needs decay in (0, 1)")
        else:
            raise ValueError("variant must be 'poly' or 'epoch_backoff'")

    @classmethod
    def poly(cls, alpha: float = 1.0, beta: float = 0.55) -> "StepsizeSchedule":
        return cls("poly", alpha=alpha, beta=beta)

    @classmethod
    def epoch_backoff(cls, alpha0: float = 0.1, decay: float = 0.95) -> "StepsizeSchedule":
        return cls("epoch_backoff", alpha=alpha0, decay=decay)

    @property
    def kind_code(self) -> int:
        return 0 if self.variant == "poly" else 1

    def epoch_alpha(self, epoch: int) -> float:
        """Constant stepsize used throughout `epoch` (backoff variant)."""
        return self.alpha * self.decay ** epoch


def stepsize(schedule: StepsizeSchedule, k: int, epoch: int = 0) -> float:
    """Stepsize consumed by global step k (1-based) in the given epoch."""
    if k < 1:
        raise ValueError("step index k is 1-based")
    if schedule.variant == "poly":
        return schedule.alpha * float(k) ** -schedule.beta
    return schedule.epoch_alpha(epoch)


@dataclass(frozen=True)
class DelayModel:
    """Distribution of extra incorporation delays for simulated runs.

    An update issued at step k becomes visible to reads from step
    k + D + 1 onward, so D = 0 reproduces the synchronous iteration.
    Variants: none, bounded(max_delay) uniform on {0..M}, geometric(p)
    with support {0, 1, ...} and mean (1-p)/p, and pareto(tail_order,
    scale) with D = floor(scale * U^(-1/tail_order)).

    assumption_moments_ok is True exactly when the model has finite
    moments of every order > 2 (pareto requires tail_order > 2).
    """

    variant: str = "none"
    max_delay: int = 0
    p: float = 1.0
    tail_order: float = 3.0
    scale: float = 1.0

    def __post_init__(self):
        if self.variant == "none":
            pass
        elif self.variant == "bounded":
            if self.max_delay < 0:
                raise ValueError("bounded delay needs max_delay >= 0")
        elif self.variant == "geometric":
            if not 0.0 < self.p <= 1.0:
                raise ValueError("geometric delay needs p in (0, 1]")
        elif self.variant == "pareto":
            if self.tail_order <= 0:
                raise ValueError("pareto delay needs tail_order > 0")
            if self.scale < 1.0:
                raise ValueError("pareto delay needs scale >= 1")
        else:
            raise ValueError(f"unknown delay variant {self.variant!r}")

    @classmethod
    def none(cls) -> "DelayModel":
        return cls("none")

    @classmethod
    def bounded(cls, max_delay: int) -> "DelayModel":
        return cls("bounded", max_delay=max_delay)

    @classmethod
    def geometric(cls, p: float) -> "DelayModel":
        return cls("geometric", p=p)

    @classmethod
    def pareto(cls, tail_order: float, scale: float = 1.0) -> "DelayModel":
        return cls("pareto", tail_order=tail_order, scale=scale)

    @property
    def assumption_moments_ok(self) -> bool:
        if self.variant == "pareto":
            return self.tail_order > 2.0
        return True

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.variant == "none":
            return np.zeros(size, dtype=np.int64)
        if self.variant == "bounded":
            return rng.integers(0, self.max_delay + 1, size=size, dtype=np.int64)
        if self.variant == "geometric":
            return rng.geometric(self.p, size=size).astype(np.int64) - 1
        u = rng.random(size)
        return np.floor(self.scale * u ** (-1.0 / self.tail_order)).astype(np.int64)


@dataclass
class RunConfig:
    """Knobs for one engine run.

    mode is 'threads' (real lock-free workers) or 'simulated' (single
    logical thread with an explicit delay queue); threads mode requires
    delay 'none' since its staleness comes from the hardware.  sampling is
    'permute' (fresh seeded permutation per epoch, contiguous per-worker
    shards) or 'iid' (independent uniform row draws, what the asymptotic
    statistics assume).  total_steps, when set, replaces the epoch frame
    with a single block of that many steps.
    """

    workers: int = 1
    batch: int = 1
    epochs: int = 1
    schedule: StepsizeSchedule = field(default_factory=StepsizeSchedule.poly)
    seed: int = 0
    mode: str = "threads"
    delay: DelayModel = field(default_factory=DelayModel.none)
    average_burn_in: int = 0
    snapshot_every: int = 1
    sampling: str = "permute"
    total_steps: int | None = None
    x0: np.ndarray | None = None
    accumulate_average: bool = True
    racy: bool = False
    record_ks: bool = False
    record_rows: bool = False
    record_grads: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mode not in ("threads", "simulated"):
            raise ValueError("mode must be 'threads' or 'simulated'")
        if self.sampling not in ("permute", "iid"):
            raise ValueError("sampling must be 'permute' or 'iid'")
        if self.average_burn_in < 0:
            raise ValueError("average_burn_in must be >= 0")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.mode == "threads" and self.delay.variant != "none":
            raise ValueError("threads mode takes its delays from the hardware; "
                             "set delay='none'")
        if self.total_steps is not None and self.total_steps < 1:
            raise ValueError("total_steps must be >= 1 when given")


@dataclass
class SharedState:
    """The concurrently mutated state of a run.

    x is the shared parameter vector (coordinate-wise atomic access in
    threads mode), counter a one-element int64 array advanced by atomic
    fetch-increment, and the average fields hold the running sum and count
    of accumulated read snapshots.  After all workers join, every issued
    update is fully incorporated in x.
    """

    x: np.ndarray
    counter: np.ndarray
    avg_accumulator: np.ndarray
    avg_count: int = 0

    @classmethod
    def fresh(cls, x0: np.ndarray) -> "SharedState":
        return cls(x=x0, counter=np.zeros(1, dtype=np.int64),
                   avg_accumulator=np.zeros_like(x0))

    @property
    def steps(self) -> int:
        return int(self.counter[0])


@dataclass
class TraceRecord:
    """One trace row: cumulative steps and gap at an epoch boundary."""

    epoch: int
    steps: int
    gap: float
    epoch_seconds: float
    max_delay: int | None = None
    mean_delay: float | None = None


@dataclass
class DelayStats:
    """Realized extra delays of a simulated run plus moment summaries."""

    delays: np.ndarray
    moments: dict

    @classmethod
    def from_delays(cls, delays: np.ndarray) -> "DelayStats":
        delays = np.asarray(delays, dtype=np.int64)
        moments = {}
        if delays.size:
            fd = delays.astype(np.float64)
            moments = {
                "max": float(fd.max()),
                "mean": float(fd.mean()),
                "order_2": float(np.mean(fd ** 2) ** 0.5),
                "order_4": float(np.mean(fd ** 4) ** 0.25),
            }
        return cls(delays=delays, moments=moments)


@dataclass
class RunResult:
    """Terminal state of a run: final vector, running average, and traces."""

    x_final: np.ndarray
    avg_accumulator: np.ndarray
    avg_count: int
    trace: list
    epoch_times: list
    total_steps: int
    delay_stats: DelayStats | None = None
    x_bar: np.ndarray | None = None
    ks: np.ndarray | None = None
    step_rows: list | None = None
    step_grads: list | None = None

    def __post_init__(self):
        if self.x_bar is None and self.avg_count > 0:
            self.x_bar = self.avg_accumulator / self.avg_count
