"""Lock-free asynchronous stochastic gradient engine with statistical checks."""

from .datagen import SynthSpec, gen_linreg, load_svmlight, save_svmlight
from .engine import (DelayModel, RunConfig, RunResult, StepsizeSchedule,
                     polyak_average, run_simulated, run_sync_averaged,
                     run_threads, stepsize)
from .model import (Dataset, Problem, SecondOrderInfo, SparseVec,
                    batch_gradient, objective, sample_gradient,
                    second_order_info)
from .nonlinear import (ResidualProblem, affine_problem, gradient_problem,
                        linearized_reference, run_nonlinear)
from .stats import (ReplicateBatch, covariance_match, delay_moment,
                    empirical_covariance, gap_statistic, sandwich, speedup)

__version__ = "0.1.0"
