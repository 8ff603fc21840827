"""End-to-end acceptance checks.

Each test prints one ``criterion N: PASS|FAIL`` line; the lines are also
collected into a terminal summary section.  The toy runs share one trained
pipeline (session fixture) built through the CLI commands.
"""

import dataclasses
import shutil
import time

import numpy as np
import pytest

from proxmetric import autodiff as ad
from proxmetric.baselines import HeuristicConfig, euclidean_metric
from proxmetric.cli import Layout, build_family, cmd_correlate, cmd_eval, cmd_gen_data, cmd_train
from proxmetric.config import load_preset, parse_config
from proxmetric.files import read_csv, read_dataset
from proxmetric.nets import MetricHead, Mlp, init_weights, load_checkpoint, save_checkpoint
from proxmetric.problems import QuadcopterModel, ToyFamily, synth_portfolio_family, toy_instance
from proxmetric.qp import SlackQp, active_set_oracle_solve, reformulate
from proxmetric.solvers import Metric, SolverConfig, prox_f, prox_g, run, unrolled_solve
from proxmetric.training import (FixedModel, LearnedModel, TrainConfig, generate_splits,
                                 model_trace, stack_instances, train_estimator, train_metric,
                                 warm_starts)

# relative error needs a floor: x* is the origin for part of the toy box
REL_FLOOR = 1e-6


def rel_err(x, x_star):
    return np.linalg.norm(x - x_star, axis=-1) / np.maximum(np.linalg.norm(x_star, axis=-1), REL_FLOOR)


def quiet(*_):
    pass


def curves(path):
    """``{(model_id, algorithm): errors by iteration}`` from a convergence CSV."""
    _, _, rows = read_csv(path)
    out = {}
    for mid, alg, it, err in rows:
        out.setdefault((mid, alg), []).append((int(it), float(err)))
    return {k: np.array([e for _, e in sorted(v)]) for k, v in out.items()}


# --- 1 ---------------------------------------------------------------------

def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    head = MetricHead(0.2, 5.0, 0.05, 1.0)
    cfg = SolverConfig(1.0, 5, "DR")
    worst = 0.0
    for p in rng.uniform(-2, 2, (20, 2)):
        prob = toy_instance(*p)
        sq = reformulate(prob)
        target = active_set_oracle_solve(prob).x_star
        z0 = np.concatenate([rng.standard_normal(2), np.zeros(4)])

        def loss(logits):
            m = ad.sigmoid_scale(logits[:6], head.m_min, head.m_max)
            rho = ad.sigmoid_scale(logits[6:], head.rho_min, head.rho_max)
            return ad.mse(unrolled_solve(sq, Metric(m, rho), cfg, z0), target)

        worst = max(worst, ad.grad_check(loss, rng.standard_normal(7), eps=1e-5))
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-4 and elapsed < 60,
            f"max relative gradient error {worst:.2e} (< 1e-4), {elapsed:.1f} s")


# --- 2 ---------------------------------------------------------------------

def test_criterion_2_solvers_match_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    params = rng.uniform(-2, 2, (100, 2))
    sq = SlackQp.stack([reformulate(toy_instance(*p)) for p in params])
    x_star = np.array([active_set_oracle_solve(toy_instance(*p)).x_star for p in params])
    z0 = np.zeros((100, 6))
    finals = {}
    for alg in ("DR", "ADMM"):
        finals[alg] = run(sq, euclidean_metric(6), SolverConfig(1.0, 2000, alg), z0).iterates[-1]
    err_dr = rel_err(finals["DR"], x_star).max()
    err_admm = rel_err(finals["ADMM"], x_star).max()
    agree = np.abs(finals["DR"] - finals["ADMM"]).max()
    elapsed = time.perf_counter() - start
    verdict(2, max(err_dr, err_admm) < 1e-6 and agree < 1e-6 and elapsed < 60,
            f"max relative error DR {err_dr:.1e}, ADMM {err_admm:.1e}, DR-ADMM gap {agree:.1e}, "
            f"{elapsed:.1f} s")


# --- 3 ---------------------------------------------------------------------

def test_criterion_3_prox_invariants(verdict):
    rng = np.random.default_rng(303)
    port = synth_portfolio_family(20, seed=0)
    quad = QuadcopterModel(horizon=5)
    makers = [lambda: toy_instance(*rng.uniform(-2, 2, 2)),
              lambda: port.instance(port.sample(rng, 1)[0]),
              lambda: quad.instance(quad.sample(rng, 1)[0])]
    worst, idempotent = 0.0, True
    for i in range(1000):
        sq = reformulate(makers[i % 3]())
        metric = Metric(rng.uniform(0.01, 5.0, sq.d), rng.uniform(0.01, 50.0))
        z = prox_f(rng.standard_normal(sq.d) * 5, metric, rng.uniform(0.1, 10.0), sq).data
        worst = max(worst, float(np.max(np.abs(sq.R @ z + sq.r))))
        w = rng.standard_normal(sq.d) * 5
        once = prox_g(w, sq).data
        idempotent &= np.array_equal(prox_g(once, sq).data, once)
    verdict(3, worst <= 1e-8 and idempotent,
            f"max equality residual {worst:.1e} (<= 1e-8), prox_g idempotent bit-for-bit: {idempotent}")


# --- toy pipeline shared by 4, 5, 6 ------------------------------------------

@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """The toy recipe (2000/2000, k = 10, 100 epochs, lr 1e-3) plus a k = 5 model, via the CLI."""
    base = load_preset("toy")
    out = tmp_path_factory.mktemp("toy_run")
    cfg = dataclasses.replace(base, solver=dataclasses.replace(base.solver, k_grid=(5, 10)))
    cfg = cfg.with_overrides(out=str(out))
    start = time.perf_counter()
    cmd_gen_data(cfg, quiet)
    cmd_train(cfg, quiet)
    cmd_eval(cfg, quiet)
    cmd_correlate(cfg, quiet)
    return cfg, out, curves(out / "convergence.csv"), time.perf_counter() - start


def test_criterion_4_toy_learning_effect(toy_run, verdict):
    cfg, _, c, elapsed = toy_run
    dr_l, dr_e = c[("learned_k10", "DR")][9], c[("euclidean", "DR")][9]
    ad_l, ad_h = c[("learned_k10", "ADMM")][9], c[("heuristic", "ADMM")][9]
    ok = dr_l <= 0.5 * dr_e and ad_h > ad_l and elapsed < 15 * 60
    verdict(4, ok, f"mean error at iteration 10: learned DR {dr_l:.2e} vs Euclidean DR {dr_e:.2e} "
                   f"(ratio {dr_l / dr_e:.3f} <= 0.5); heuristic ADMM {ad_h:.2e} > learned ADMM "
                   f"{ad_l:.2e}; pipeline {elapsed:.0f} s")


def test_criterion_5_active_set_correlation(toy_run, verdict):
    _, out, _, _ = toy_run
    comments, _, _ = read_csv(out / "correlation_dr_k10.csv")
    summary = next(c for c in comments if c.startswith("summary"))
    fields = dict(kv.split("=") for kv in summary.split(",")[1:])
    ratio, rho = float(fields["ratio"]), float(fields["rank_correlation"])
    verdict(5, ratio >= 2.0 and rho < 0,
            f"DR k=10: active/inactive mean slack weight {ratio:.2f} (>= 2), "
            f"Spearman(residual, weight) {rho:.3f} (< 0)")


def test_criterion_6_trained_at_k(toy_run, verdict):
    _, _, c, elapsed = toy_run
    e = c[("euclidean", "DR")]
    k5, k10 = c[("learned_k5", "DR")], c[("learned_k10", "DR")]
    beats5, beats10 = k5[4] < e[4], k10[9] < e[9]
    order = k5[4] <= k10[4]
    admm = {k: c[(f"learned_k{k}", "ADMM")][k - 1] for k in (5, 10)}
    ea = c[("euclidean", "ADMM")]
    verdict(6, beats5 and beats10 and order and elapsed < 30 * 60,
            f"toy DR: k=5 model {k5[4]:.2e} vs Euclidean {e[4]:.2e} at 5; k=10 model {k10[9]:.2e} "
            f"vs {e[9]:.2e} at 10; at 5: k=5 model {k5[4]:.2e} <= k=10 model {k10[4]:.2e} "
            f"(ADMM, reported only: {admm[5]:.2e} vs {ea[4]:.2e} at 5, {admm[10]:.2e} vs {ea[9]:.2e} at 10)")


# --- 7 ---------------------------------------------------------------------

def _portfolio_errors_at_50(seed, budget, learned):
    fam = synth_portfolio_family(20, budget=budget, seed=seed)
    data = generate_splits(fam, {"train": 1000, "test": 200}, seed=seed)
    train, test = data["train"], data["test"]
    est, _ = train_estimator(init_weights(Mlp([20] + [20] * 4 + [20]), seed), train,
                             TrainConfig(epochs=100, seed=seed))
    sq = stack_instances(fam, test.params)
    z0 = warm_starts(est, test.params, sq)
    models = {"euclidean": FixedModel("euclidean"),
              "heuristic": FixedModel("heuristic", HeuristicConfig(0.1, True))}
    if learned:
        head = MetricHead(0.01, 1.0, 0.01, 100.0)
        net, _ = train_metric(init_weights(Mlp([20] + [20] * 4 + [41]), seed + 1), head, est, fam,
                              train, TrainConfig(epochs=40, k=10, seed=seed), "ADMM")
        models["learned"] = LearnedModel(net, head)
    out = {}
    for name, model in models.items():
        errs = model_trace(model, fam, test.params, test.targets, z0, sq, "ADMM", 50)
        out[name] = float(errs[49].mean())
    return out


def test_criterion_7_budget_effect(verdict):
    rows, wins_hi, wins_lo = [], 0, 0
    for seed in (0, 1, 2):
        hi = _portfolio_errors_at_50(seed, 10.0, learned=False)
        lo = _portfolio_errors_at_50(seed, 1.0, learned=True)
        wins_hi += hi["heuristic"] < hi["euclidean"]
        wins_lo += lo["heuristic"] > lo["learned"]
        rows.append(f"seed {seed}: budget 10 heuristic {hi['heuristic']:.2e} vs Euclidean "
                    f"{hi['euclidean']:.2e}; budget 1 heuristic {lo['heuristic']:.2e} vs learned "
                    f"{lo['learned']:.2e}")
    for r in rows:
        print(r)
    verdict(7, wins_hi >= 2 and wins_lo >= 2,
            f"ADMM error at 50 over 3 seeds: heuristic < Euclidean (budget 10) in {wins_hi}/3, "
            f"heuristic > learned (budget 1) in {wins_lo}/3")


# --- 8 ---------------------------------------------------------------------

QUAD = """
[experiment]
family = quadcopter
seed = 11
[problem]
horizon = 5
[data]
n_train = 2000
n_test = 100
[solver]
k_grid = 10
budget_dr = 400
budget_admm = 400
error = relative
[network]
metric_hidden = 400
metric_layers = 4
estimator_hidden = 400
estimator_layers = 4
[head]
m_min = 0.01
m_max = 1.0
rho_min = 0.01
rho_max = 5.0
[training]
estimator_epochs = 20
metric_epochs = 10
estimator_fraction = 0.5
"""


def _first_below(errors, tol):
    """Per-instance first iteration (1-based) with error < tol; inf when never reached."""
    hit = errors < tol
    return np.where(hit.any(0), np.argmax(hit, axis=0) + 1.0, np.inf)


def test_criterion_8_quadcopter(tmp_path, verdict):
    start = time.perf_counter()
    cfg = parse_config(QUAD).with_overrides(out=str(tmp_path))
    cmd_gen_data(cfg, quiet)
    cmd_train(cfg, quiet)
    layout, family = Layout(cfg), build_family(cfg)
    test = read_dataset(layout.dataset("test"))
    estimator, _, _ = load_checkpoint(layout.estimator)
    sq = stack_instances(family, test.params)
    z0 = warm_starts(estimator, test.params, sq)
    ok, parts = True, []
    for alg in ("DR", "ADMM"):
        net, head, _ = load_checkpoint(layout.metric(alg, 10))
        med = {}
        for name, model in (("learned", LearnedModel(net, head)), ("euclidean", FixedModel())):
            errs = model_trace(model, family, test.params, test.targets, z0, sq, alg, 400)
            med[name] = float(np.median(_first_below(errs, 1e-2)))
        ok &= med["learned"] < med["euclidean"]
        parts.append(f"{alg} learned {med['learned']:g} vs Euclidean {med['euclidean']:g}")
    elapsed = time.perf_counter() - start
    verdict(8, ok and elapsed < 3600,
            f"median iterations to relative error 1e-2 (N=5, k=10): {'; '.join(parts)}; "
            f"{elapsed:.0f} s")


# --- 9, 10 -----------------------------------------------------------------

SMALL = """
[experiment]
family = toy
seed = 7
[data]
n_train = 300
n_test = 100
[solver]
k_grid = 5, 10
budget_dr = 40
budget_admm = 40
[training]
estimator_epochs = 20
metric_epochs = 5
"""

ARTIFACTS = ["data/train.csv", "data/test.csv", "losses/estimator.csv",
             "losses/metric_dr_k5.csv", "losses/metric_dr_k10.csv",
             "losses/metric_admm_k5.csv", "losses/metric_admm_k10.csv",
             "convergence.csv", "correlation_dr_k10.csv", "correlation_admm_k5.csv"]


def _pipeline(out):
    cfg = parse_config(SMALL).with_overrides(out=str(out))
    for cmd in (cmd_gen_data, cmd_train, cmd_eval, cmd_correlate):
        cmd(cfg, quiet)
    return cfg


@pytest.fixture(scope="session")
def small_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("det_a"), tmp_path_factory.mktemp("det_b")
    return _pipeline(a), a, b, _pipeline(b)


def test_criterion_9_determinism(small_runs, verdict):
    _, a, b, _ = small_runs
    diff = [f for f in ARTIFACTS if (a / f).read_bytes() != (b / f).read_bytes()]
    ckpt = all((a / "checkpoints" / n).read_bytes() == (b / "checkpoints" / n).read_bytes()
               for n in ("estimator.ckpt", "metric_dr_k10.ckpt"))
    verdict(9, not diff and ckpt,
            f"{len(ARTIFACTS) - len(diff)}/{len(ARTIFACTS)} dataset, loss and evaluation files "
            f"byte-identical across two runs; checkpoints identical: {ckpt}")


def test_criterion_10_checkpoint_round_trip(small_runs, tmp_path, verdict):
    cfg, a, _, _ = small_runs
    c = tmp_path / "reloaded"
    shutil.copytree(a / "data", c / "data")
    (c / "checkpoints").mkdir()
    for path in sorted((a / "checkpoints").glob("*.ckpt")):
        net, head, header = load_checkpoint(path)
        save_checkpoint(net, head, c / "checkpoints" / path.name, extra=header.get("extra"))
    cfg_c = cfg.with_overrides(out=str(c))
    cmd_eval(cfg_c, quiet)
    cmd_correlate(cfg_c, quiet)
    same = [(a / f).read_bytes() == (c / f).read_bytes()
            for f in ("convergence.csv", "correlation_dr_k5.csv", "correlation_admm_k10.csv")]
    verdict(10, all(same), f"evaluation CSVs from reloaded checkpoints bit-identical: {sum(same)}/3")
