import numpy as np
import pytest

from proxmetric.baselines import (DenseMetric, HeuristicConfig, euclidean_metric, hessian_sqrt,
                                  heuristic_metric)
from proxmetric.problems import toy_instance
from proxmetric.qp import SlackQp, reformulate
from proxmetric.solvers import Metric, SolverConfig, run, run_dense_admm


def test_euclidean_metric():
    m = euclidean_metric(6)
    assert np.array_equal(m.numpy_diag(), np.ones(6))
    assert np.array_equal(euclidean_metric(6).numpy_diag(), m.numpy_diag())
    with pytest.raises(ValueError):
        euclidean_metric(0)


def test_hessian_sqrt_examples():
    assert np.allclose(hessian_sqrt(np.eye(3), 1e-6), np.sqrt(1 + 1e-6) * np.eye(3))
    assert np.allclose(hessian_sqrt(np.diag([4.0, 1.0]), 1e-12), np.diag([2.0, 1.0]))
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    H = A @ A.T
    S = hessian_sqrt(H, 0.1)
    assert np.allclose(S @ S, H + 0.1 * np.eye(4))
    assert np.linalg.eigvalsh(S).min() >= np.sqrt(0.1) - 1e-12


def test_heuristic_metric_modes():
    sq = reformulate(toy_instance(0.0, 0.5))
    diag = heuristic_metric(sq, HeuristicConfig(0.1, True))
    assert isinstance(diag, Metric)
    assert np.allclose(diag.numpy_diag(), np.r_[np.sqrt(2.1), np.sqrt(2.1), np.full(4, np.sqrt(0.1))])
    dense = heuristic_metric(sq, HeuristicConfig(0.1, False))
    assert isinstance(dense, DenseMetric) and dense.matrix.shape == (6, 6)
    with pytest.raises(ValueError):
        HeuristicConfig(0.0)


def test_dense_admm_agrees_with_diagonal_path_for_diagonal_matrix():
    params = [(0.2, -0.4), (1.0, 1.0)]
    sq = SlackQp.stack([reformulate(toy_instance(*p)) for p in params])
    m = np.array([1.5, 0.7, 0.3, 2.0, 1.0, 0.6])
    cfg = SolverConfig(1.0, 25, "ADMM")
    z0 = np.zeros((2, 6))
    a = run(sq, Metric(m), cfg, z0).iterates
    b = run_dense_admm(sq, np.diag(m), cfg, z0).iterates
    assert np.allclose(a, b, atol=1e-10)


def test_dense_admm_converges_with_full_heuristic():
    p = toy_instance(0.6, 0.1)
    sq = reformulate(p)
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    sq = SlackQp(np.pad(H, ((0, 4), (0, 4))), sq.qt + np.r_[0.3, -0.2, 0, 0, 0, 0], sq.R, sq.r, 2,
                 sq.slack_idx)
    M = heuristic_metric(sq, HeuristicConfig(0.1, False)).matrix
    tr = run_dense_admm(sq, M, SolverConfig(1.0, 3000, "ADMM"), np.zeros(6))
    ref = run(sq, euclidean_metric(6), SolverConfig(1.0, 3000, "DR"), np.zeros(6)).iterates[-1]
    assert np.allclose(tr.iterates[-1], ref, atol=1e-6)


def test_dense_metric_rejected_for_dr():
    sq = reformulate(toy_instance(0, 0))
    with pytest.raises(ValueError):
        run_dense_admm(sq, np.eye(6), SolverConfig(1.0, 5, "DR"), np.zeros(6))
