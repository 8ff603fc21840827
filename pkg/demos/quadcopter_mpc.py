"""
Quadcopter reference tracking as a parametric QP
================================================

Each initial state p defines one MPC problem over the horizon.  We build an
instance, solve it to high accuracy with DR, and check that the optimal
controls respect the thrust bounds and drive the tracked states to zero.
"""

import numpy as np

from proxmetric.problems import QuadcopterModel, rollout
from proxmetric.qp import kkt_check, reformulate
from proxmetric.solvers import solve_to_tolerance

model = QuadcopterModel(horizon=10)
n, n_eq, n_in = model.counts
print(f"horizon {model.horizon}: {n} variables, {n_eq} equalities, {n_in} inequalities")

p = model.sample(np.random.default_rng(0), 1)[0]
prob = model.instance(p)
x, done, iters = solve_to_tolerance(reformulate(prob))
print(f"DR converged: {bool(done)} after {iters} iterations, KKT check: {kkt_check(prob, x, 1e-6)}")

controls = np.array([x[model.control_slice(k)] for k in range(model.stages)])
states = rollout(model, p, controls)
print("control range:", controls.min().round(3), controls.max().round(3))
print("tracked-state norm, first vs last stage:",
      np.linalg.norm(states[0] * (model.Q > 0)).round(3),
      np.linalg.norm(states[-1] * (model.Q > 0)).round(3))
