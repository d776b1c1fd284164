from .config import (DelayModel, DelayStats, RunConfig, RunResult,
                     StepsizeSchedule, TraceRecord, stepsize)
from .runner import (polyak_average, run_simulated, run_streams,
                     run_sync_averaged, run_threads)

__all__ = [
    "DelayModel",
    "DelayStats",
    "RunConfig",
    "RunResult",
    "StepsizeSchedule",
    "TraceRecord",
    "stepsize",
    "polyak_average",
    "run_simulated",
    "run_streams",
    "run_sync_averaged",
    "run_threads",
]
