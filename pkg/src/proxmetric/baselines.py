"""Metrics that are not learned: the identity and the objective-reconditioning heuristic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp import SlackQp
from .solvers import Metric


@dataclass(frozen=True)
class HeuristicConfig:
    # A tiny shift leaves the slack block of the metric near zero and stalls ADMM.
    epsilon: float = 0.1
    diagonalize: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class DenseMetric:
    """Full symmetric positive definite metric matrix (ADMM only)."""

    matrix: np.ndarray


def euclidean_metric(d: int) -> Metric:
    if d < 1:
        raise ValueError("dimension must be positive")
    return Metric(np.ones(d), 1.0)


def hessian_sqrt(H, epsilon: float = 1e-6) -> np.ndarray:
    """Symmetric square root of ``H + epsilon I``."""
    H = np.asarray(H, dtype=float)
    w, V = np.linalg.eigh(0.5 * (H + H.T) + epsilon * np.eye(H.shape[0]))
    if w.min() <= 0:
        raise np.linalg.LinAlgError("H + epsilon I is not positive definite")
    return (V * np.sqrt(w)) @ V.T


def heuristic_metric(sq: SlackQp, cfg: HeuristicConfig = HeuristicConfig()):
    """Metric that would perfectly condition the problem if the constraints were dropped.

    Returns a diagonal :class:`Metric` (the diagonal of ``(H + eps I)^{1/2}``)
    when ``cfg.diagonalize`` is set, else a :class:`DenseMetric` holding the
    full square root.
    """
    root = hessian_sqrt(sq.H, cfg.epsilon)
    if cfg.diagonalize:
        return Metric(np.diag(root).copy(), 1.0)
    return DenseMetric(root)
