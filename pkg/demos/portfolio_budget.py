"""
Heuristic metric on the portfolio problem
=========================================

The heuristic metric reconditions the quadratic objective and ignores the
constraints.  That helps when few constraints are active (large budget) and
hurts when many are (budget 1, most weights pinned at zero).
"""

import numpy as np

from proxmetric.baselines import HeuristicConfig
from proxmetric.problems import synth_portfolio_family
from proxmetric.training import FixedModel, generate_targets, model_trace, stack_instances

for budget in (10.0, 1.0):
    family = synth_portfolio_family(20, budget=budget, seed=0)
    ds = generate_targets(family, 200, seed=1)
    sq = stack_instances(family, ds.params)
    z0 = np.zeros((len(ds), sq.d))
    active = np.mean(ds.targets < 1e-6)
    line = f"budget {budget:4.0f} ({active:.0%} of weights at zero):"
    for name, model in (("Euclidean", FixedModel("euclidean")),
                        ("heuristic", FixedModel("heuristic", HeuristicConfig(0.1, True)))):
        errs = model_trace(model, family, ds.params, ds.targets, z0, sq, "ADMM", 50)
        line += f"  {name} {errs[49].mean():.2e}"
    print(line)
