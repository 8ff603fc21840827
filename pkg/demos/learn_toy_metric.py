"""
Learning a metric for the toy problem
=====================================

Train a warm-start estimator, then a metric predictor through 10 unrolled
DR iterations, and compare test errors against the identity metric.  This
is a scaled-down version of the ``toy`` preset (run it in full with
``proxmetric gen-data/train/eval --config toy``).
"""

import numpy as np

from proxmetric.nets import MetricHead, Mlp, init_weights
from proxmetric.problems import ToyFamily
from proxmetric.training import (FixedModel, LearnedModel, TrainConfig, active_set_correlation,
                                 evaluate_convergence, generate_splits, train_estimator,
                                 train_metric)

family = ToyFamily()
data = generate_splits(family, {"train": 500, "test": 500}, seed=0)
train, test = data["train"], data["test"]

# Warm start x0 = E(p), regressed on the optimal solutions.
estimator, hist = train_estimator(init_weights(Mlp([2, 80, 80, 2]), 1), train,
                                  TrainConfig(epochs=100))
print(f"estimator loss {hist[0]:.3f} -> {hist[-1]:.4f}")

# Metric predictor: 6 diagonal weights plus a scale, bounded by the head.
head = MetricHead(0.2, 5.0, 0.05, 1.0)
net, hist = train_metric(init_weights(Mlp([2, 20, 20, 7]), 2), head, estimator, family, train,
                         TrainConfig(epochs=40, k=10), "DR")
print(f"unrolled loss {hist[0]:.4f} -> {hist[-1]:.5f}")

report = evaluate_convergence({"learned": LearnedModel(net, head), "euclidean": FixedModel()},
                              family, test, estimator, budget=30, algorithm="DR",
                              error_kind="absolute")
for (name, _), curve in report.curves.items():
    print(f"{name:10s} mean error at 5/10/30: {curve[4]:.2e} {curve[9]:.2e} {curve[29]:.2e}")

# The learned slack weights are larger on constraints that end up active.
_, summary = active_set_correlation(net, head, family, test)
print(f"mean slack weight active {summary.mean_active:.2f}, inactive {summary.mean_inactive:.2f}, "
      f"rank correlation with residual {summary.rank_correlation:.2f}")
