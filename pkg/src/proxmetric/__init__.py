"""Learned diagonal metrics for Douglas-Rachford and ADMM quadratic programming solvers.

The package solves parametric convex QPs with operator splitting, differentiates
through a fixed number of solver iterations, and trains small networks that
predict a per-instance metric and a warm start.
"""

from .autodiff import Tape, Tensor, backward, grad_check, linear_solve
from .baselines import HeuristicConfig, euclidean_metric, heuristic_metric
from .nets import MetricHead, Mlp, init_weights, load_checkpoint, metric_forward, save_checkpoint
from .problems import QuadcopterModel, ToyFamily, synth_portfolio_family, toy_instance
from .qp import QpProblem, SlackQp, active_set_oracle_solve, kkt_check, reformulate
from .solvers import Metric, SolverConfig, dr_step, admm_step, prox_f, prox_g, run, unrolled_solve

__version__ = "0.1.0"
