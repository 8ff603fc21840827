"""Target generation, the two training loops, convergence and active-set analysis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import autodiff as ad
from .baselines import DenseMetric, heuristic_metric, euclidean_metric, HeuristicConfig
from .nets import Adam, Mlp, MetricHead, Sgd, estimator_forward, metric_forward, mlp_forward
from .qp import SlackQp, active_set_oracle_solve, kkt_check, reformulate
from .solvers import (Metric, SolverConfig, relative_error, run, run_dense_admm,
                      solve_to_tolerance, unrolled_solve)

log = logging.getLogger(__name__)

ORACLE_CROSSCHECK_MAX = 12
RESIDUAL_ACTIVE_TOL = 1e-6
EVAL_CHUNK = 256


class TargetGenerationError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class ParamDataset:
    params: np.ndarray
    targets: np.ndarray
    split: str = "train"
    family: str = ""
    seed: int = 0

    def __len__(self):
        return self.params.shape[0]

    @property
    def v(self):
        return self.params.shape[1]

    @property
    def n(self):
        return self.targets.shape[1]


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 64
    k: int = 10
    seed: int = 0
    optimizer: str = "adam"
    gamma: float = 1.0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.k) < 1 or self.learning_rate <= 0:
            raise ValueError("training settings must be positive")
        if self.optimizer.lower() not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")


@dataclass
class ConvergenceReport:
    """Mean error per iteration for each ``(model_id, algorithm)`` pair."""

    budget: int
    error_kind: str = "relative"
    curves: dict = field(default_factory=dict)

    def rows(self):
        for (model_id, alg), curve in self.curves.items():
            for i, e in enumerate(curve, start=1):
                yield model_id, alg, i, float(e)


# --- data ----------------------------------------------------------------

def stack_instances(family, params) -> SlackQp:
    return SlackQp.stack([reformulate(family.instance(p)) for p in params])


def generate_targets(family, count: int, seed: int, split: str = "train",
                     chunk: int = 2000, max_iter: int = 50000) -> ParamDataset:
    """Sample ``count`` parameters and solve each instance with long-horizon Euclidean DR.

    Small instances (at most ``ORACLE_CROSSCHECK_MAX`` inequalities) are also
    solved by active-set enumeration and must agree to 1e-6; every target must
    pass :func:`kkt_check` at 1e-6.
    """
    rng = np.random.default_rng(seed)
    params = family.sample(rng, count)
    targets = []
    for lo in range(0, count, chunk):
        sq = stack_instances(family, params[lo:lo + chunk])
        x, done, _ = solve_to_tolerance(sq, max_iter=max_iter)
        if not done.all():
            bad = lo + np.flatnonzero(~done)
            raise TargetGenerationError(f"DR did not converge for {bad.size} instances, e.g. p={params[bad[0]]}")
        targets.append(x)
    targets = np.concatenate(targets) if targets else np.zeros((0, family.instance(params[0]).n))
    for p, x in zip(params, targets):
        prob = family.instance(p)
        if prob.k_in <= ORACLE_CROSSCHECK_MAX:
            ref = active_set_oracle_solve(prob).x_star
            if np.max(np.abs(ref - x)) > 1e-6:
                raise TargetGenerationError(f"DR target disagrees with the oracle at p={p}")
        if not kkt_check(prob, x, 1e-6):
            raise TargetGenerationError(f"target fails the KKT check at p={p}")
    return ParamDataset(params, targets, split, family.name, seed)


def generate_splits(family, counts: dict, seed: int, **kw) -> dict:
    """One dataset per split, each from its own child seed; no parameter repeats across splits."""
    children = np.random.SeedSequence(seed).spawn(len(counts))
    out = {}
    for (split, count), child in zip(counts.items(), children):
        if count:
            out[split] = generate_targets(family, count, int(child.generate_state(1)[0]), split, **kw)
            out[split].seed = seed
    seen = set()
    for ds in out.values():
        rows = {r.tobytes() for r in ds.params}
        if rows & seen:
            raise TargetGenerationError("parameter vector repeated across splits")
        seen |= rows
    return out


def split_for_stages(dataset: ParamDataset, estimator_fraction: float = 1.0):
    """Training sets for the estimator and the metric net.

    With a fraction below one the estimator sees the leading part of the
    split and the metric net the rest, so metric training meets warm starts
    as inaccurate as those at test time.  A fraction of one shares the split.
    """
    if not 0 < estimator_fraction <= 1:
        raise ValueError("estimator_fraction must lie in (0, 1]")
    if estimator_fraction == 1:
        return dataset, dataset
    cut = int(round(estimator_fraction * len(dataset)))
    if not 0 < cut < len(dataset):
        raise ValueError("estimator_fraction leaves one stage without data")
    head, tail = (ParamDataset(dataset.params[sl], dataset.targets[sl], dataset.split,
                               dataset.family, dataset.seed)
                  for sl in (slice(None, cut), slice(cut, None)))
    return head, tail


# --- training ------------------------------------------------------------

def _optimizer(cfg: TrainConfig, params):
    if cfg.optimizer.lower() == "adam":
        return Adam(params, cfg.learning_rate)
    return Sgd(params, cfg.learning_rate)


def _batches(rng, size, batch_size):
    order = rng.permutation(size)
    for lo in range(0, size, batch_size):
        yield order[lo:lo + batch_size]


def train_estimator(net: Mlp, dataset: ParamDataset, cfg: TrainConfig):
    """Regress ``x*(p)`` with mean squared Euclidean error; returns ``(net, history)``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = _optimizer(cfg, net.parameters())
    n = dataset.n
    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(rng, len(dataset), cfg.batch_size):
            tape = ad.Tape()
            leaves = net.on_tape(tape)
            out = mlp_forward(net, dataset.params[idx], leaves)
            loss = ad.mul(ad.mse(out, dataset.targets[idx]), float(n))
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(f"estimator loss is {loss.data} at epoch {epoch}")
            ad.backward(loss)
            net.set_parameters(opt.step(net.parameters(), [t.grad for t in leaves]))
            total += float(loss.data) * len(idx)
        history.append(total / len(dataset))
    return net, history


def warm_starts(estimator: Mlp, params, sq: SlackQp) -> np.ndarray:
    return estimator_forward(estimator, params, sq).data


def _metric_batch_loss(net, head, leaves, params, sq, z0, targets, solver):
    metric = metric_forward(net, head, params, leaves)
    out = unrolled_solve(sq, metric, solver, z0)
    return ad.mul(ad.mse(out, targets), float(targets.shape[-1]))


def train_metric(metric_net: Mlp, head: MetricHead, estimator: Mlp, family,
                 dataset: ParamDataset, cfg: TrainConfig, algorithm: str = "DR",
                 sq: SlackQp | None = None):
    """Fit the metric predictor through ``cfg.k`` unrolled solver iterations.

    The estimator only supplies warm starts and is never modified.  Instances
    whose KKT matrix turns out singular are dropped from their batch (more
    than 1% in one batch aborts).  Returns ``(metric_net, history)``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if metric_net.n_in != dataset.v:
        raise ValueError("metric net input does not match parameter length")
    net = metric_net.copy()
    if sq is None:
        sq = stack_instances(family, dataset.params)
    if net.n_out != sq.d + 1:
        raise ValueError(f"metric net must emit d + 1 = {sq.d + 1} values")
    z0_all = warm_starts(estimator, dataset.params, sq)
    solver = SolverConfig(cfg.gamma, cfg.k, algorithm)
    rng = np.random.default_rng(cfg.seed)
    opt = _optimizer(cfg, net.parameters())
    history = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(rng, len(dataset), cfg.batch_size):
            keep = idx
            while True:
                tape = ad.Tape()
                leaves = net.on_tape(tape)
                try:
                    loss = _metric_batch_loss(net, head, leaves, dataset.params[keep], sq.take(keep),
                                              z0_all[keep], dataset.targets[keep], solver)
                    break
                except ad.SingularMatrixError as exc:
                    dropped = len(idx) - len(keep) + len(exc.indices)
                    if not exc.indices or dropped > 0.01 * len(idx):
                        raise TrainingDivergedError(
                            f"singular KKT for {dropped} of {len(idx)} instances at epoch {epoch}") from exc
                    log.warning("dropping %d instances with singular KKT", len(exc.indices))
                    keep = np.delete(keep, exc.indices)
                except ad.NonFiniteError as exc:
                    raise TrainingDivergedError(f"non-finite value in unrolled solve at epoch {epoch}") from exc
            ad.backward(loss)
            net.set_parameters(opt.step(net.parameters(), [t.grad for t in leaves]))
            total += float(loss.data) * len(keep)
            count += len(keep)
        history.append(total / count)
    return net, history


# --- evaluation ----------------------------------------------------------

@dataclass
class LearnedModel:
    net: Mlp
    head: MetricHead

    def metric(self, params, sq):
        return metric_forward(self.net, self.head, params)


@dataclass
class FixedModel:
    kind: str = "euclidean"
    heuristic: HeuristicConfig = field(default_factory=lambda: HeuristicConfig(diagonalize=True))

    def metric(self, params, sq):
        if self.kind == "euclidean":
            return euclidean_metric(sq.d)
        return heuristic_metric(sq, self.heuristic)


def _errors(x, targets, kind):
    if kind == "absolute":
        return np.linalg.norm(x - targets, axis=-1)
    return relative_error(x, targets)


def model_trace(model, family, params, targets, z0, sq, algorithm, budget, gamma=1.0,
                error_kind="relative"):
    """Per-instance error trace ``(budget, N)`` of one model."""
    cfg = SolverConfig(gamma, budget, algorithm)
    parts = []
    for lo in range(0, len(params), EVAL_CHUNK):
        sl = slice(lo, lo + EVAL_CHUNK)
        sub = sq.take(sl)
        metric = model.metric(params[sl], sub)
        if isinstance(metric, DenseMetric):
            tr = run_dense_admm(sub, metric.matrix, cfg, z0[sl])
        else:
            tr = run(sub, metric, cfg, z0[sl])
        parts.append(_errors(tr.iterates, targets[sl], error_kind))
    return np.concatenate(parts, axis=1)


def evaluate_convergence(models: dict, family, dataset: ParamDataset, estimator: Mlp,
                         budget: int, algorithm: str, gamma: float = 1.0,
                         error_kind: str = "relative", sq: SlackQp | None = None,
                         report: ConvergenceReport | None = None) -> ConvergenceReport:
    """Mean error per iteration over the dataset for every model in ``models``.

    All models start from the same estimator warm start, so only the metric
    differs between curves.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if sq is None:
        sq = stack_instances(family, dataset.params)
    z0 = warm_starts(estimator, dataset.params, sq)
    if report is None:
        report = ConvergenceReport(budget, error_kind)
    for model_id, model in models.items():
        errs = model_trace(model, family, dataset.params, dataset.targets, z0, sq,
                           algorithm, budget, gamma, error_kind)
        report.curves[(model_id, algorithm)] = errs.mean(axis=1)
    return report


@dataclass
class CorrelationSummary:
    mean_active: float
    mean_inactive: float
    rank_correlation: float
    n_records: int

    @property
    def ratio(self):
        return self.mean_active / self.mean_inactive if self.mean_inactive > 0 else np.inf


def active_set_correlation(metric_net: Mlp, head: MetricHead, family, dataset: ParamDataset,
                           algorithm: str = "DR"):
    """Slack metric weight against constraint residual at the optimum.

    Returns ``(records, summary)`` with one record
    ``(instance, constraint, weight, residual, active)`` per inequality of
    every instance.  The weight is the slack's ``m`` entry (before the rho
    scale); the residual is ``-(Wx* + c)``, zero on active constraints.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    metric = metric_forward(metric_net, head, dataset.params)
    m = np.broadcast_to(metric.m.data, (len(dataset), metric_net.n_out - 1))
    records = []
    for i, (p, x) in enumerate(zip(dataset.params, dataset.targets)):
        prob = family.instance(p)
        resid = -(prob.W @ x + prob.c)
        weights = m[i, prob.n:]
        for j in range(prob.k_in):
            records.append((i, j, float(weights[j]), float(resid[j]),
                            bool(abs(resid[j]) <= RESIDUAL_ACTIVE_TOL)))
    w = np.array([r[2] for r in records])
    res = np.array([r[3] for r in records])
    act = np.array([r[4] for r in records])
    mean_act = float(w[act].mean()) if act.any() else float("nan")
    mean_inact = float(w[~act].mean()) if (~act).any() else float("nan")
    if np.ptp(w) == 0 or np.ptp(res) == 0:
        rho = 0.0
    else:
        rho = float(spearmanr(res, w).statistic)
    return records, CorrelationSummary(mean_act, mean_inact, rho, len(records))
