"""Command-line front end: ``proxmetric {gen-data,train,eval,correlate} --config FILE``.

Artifacts land under the configured output directory::

    data/{train,val,test}.csv
    checkpoints/estimator.ckpt, checkpoints/metric_{alg}_k{k}.ckpt
    losses/estimator.csv, losses/metric_{alg}_k{k}.csv
    convergence.csv
    correlation_{alg}_k{k}.csv

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .baselines import HeuristicConfig
from .config import ConfigError, ExperimentConfig, load_config, load_preset, preset_path
from .files import MissingArtifactError, read_dataset, write_csv, write_dataset
from .nets import CheckpointError, Mlp, MetricHead, init_weights, load_checkpoint, save_checkpoint
from .problems import PriceCsvError, QuadcopterModel, ToyFamily, PortfolioFamily, \
    ingest_prices_csv, synth_portfolio_family
from .qp import InfeasibleProblemError
from .training import (FixedModel, LearnedModel, TargetGenerationError, TrainConfig,
                       TrainingDivergedError, active_set_correlation, evaluate_convergence,
                       generate_splits, model_trace, split_for_stages, stack_instances,
                       train_estimator, train_metric, warm_starts)

log = logging.getLogger("proxmetric")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4
SPLITS = ("train", "val", "test")

# seed-stream tags, so each consumer draws from its own child stream
_TAG_DATA, _TAG_EST_INIT, _TAG_EST_TRAIN, _TAG_METRIC = 0, 1, 2, 3


def _seed(base, *tags):
    return int(np.random.SeedSequence([int(base), *tags]).generate_state(1)[0])


# --- building blocks -----------------------------------------------------

def build_family(cfg: ExperimentConfig):
    fam, pr = cfg.experiment.family, cfg.problem
    if fam == "toy":
        return ToyFamily()
    if fam == "portfolio":
        if pr.prices_csv:
            Sigma, base_mu = ingest_prices_csv(pr.prices_csv)
            return PortfolioFamily(Sigma, base_mu, pr.noise_sigma, pr.budget)
        return synth_portfolio_family(pr.n_assets, pr.n_factors, pr.noise_sigma, pr.budget,
                                      seed=pr.family_seed)
    return QuadcopterModel(horizon=pr.horizon)


def problem_dims(family):
    """``(v, n, d)``: parameter length, primal size, lifted size."""
    p0 = family.sample(np.random.default_rng(0), 1)[0]
    prob = family.instance(p0)
    return p0.size, prob.n, prob.n + prob.k_in


def estimator_sizes(cfg, family):
    v, n, _ = problem_dims(family)
    return [v] + [cfg.network.estimator_hidden] * cfg.network.estimator_layers + [n]


def metric_sizes(cfg, family):
    v, _, d = problem_dims(family)
    return [v] + [cfg.network.metric_hidden] * cfg.network.metric_layers + [d + 1]


def heads(cfg):
    """Head bounds to try: one per ``rho_max`` in the sweep, or just the configured one."""
    h = cfg.head
    sweep = h.rho_max_sweep or (h.rho_max,)
    return [MetricHead(h.m_min, h.m_max, h.rho_min, r) for r in sweep]


def heuristic_cfg(cfg):
    return HeuristicConfig(cfg.heuristic.epsilon, cfg.heuristic.diagonalize)


def budget_for(cfg, algorithm):
    return cfg.solver.budget_dr if algorithm == "DR" else cfg.solver.budget_admm


class Layout:
    def __init__(self, cfg: ExperimentConfig):
        self.root = Path(cfg.experiment.out)

    def dataset(self, split):
        return self.root / "data" / f"{split}.csv"

    @property
    def estimator(self):
        return self.root / "checkpoints" / "estimator.ckpt"

    def metric(self, alg, k):
        return self.root / "checkpoints" / f"metric_{alg.lower()}_k{k}.ckpt"

    def loss(self, name):
        return self.root / "losses" / f"{name}.csv"

    @property
    def convergence(self):
        return self.root / "convergence.csv"

    def correlation(self, alg, k):
        return self.root / f"correlation_{alg.lower()}_k{k}.csv"


def _comments(cfg, **extra):
    out = [f"config_hash={cfg.hash()}"]
    if extra:
        out.append(",".join(f"{k}={v}" for k, v in extra.items()))
    return out


def _load_split(layout, split, required=True):
    path = layout.dataset(split)
    if not path.exists():
        if required:
            raise MissingArtifactError(f"missing {split} dataset {path}; run gen-data first")
        return None
    ds = read_dataset(path)
    if len(ds) == 0:
        if required:
            raise MissingArtifactError(f"{split} dataset {path} is empty")
        return None
    return ds


def _load_net(path):
    if not Path(path).exists():
        raise MissingArtifactError(f"missing checkpoint {path}; run train first")
    return load_checkpoint(path)


# --- commands ------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig, out=print):
    family = build_family(cfg)
    layout = Layout(cfg)
    counts = {"train": cfg.data.n_train, "val": cfg.data.n_val, "test": cfg.data.n_test}
    splits = generate_splits(family, counts, _seed(cfg.experiment.seed, _TAG_DATA))
    for split in SPLITS:
        path = layout.dataset(split)
        if split in splits:
            ds = splits[split]
            ds.seed = cfg.experiment.seed
            write_dataset(path, ds, cfg.hash())
            out(f"{split}: {len(ds)} instances, all targets converged and passed the KKT check -> {path}")
        elif path.exists():
            path.unlink()
    return splits


def _train_estimator_phase(cfg, layout, family, train, out):
    sizes = estimator_sizes(cfg, family)
    if layout.estimator.exists():
        net, _, _ = load_checkpoint(layout.estimator)
        if net.sizes == sizes:
            out(f"estimator: resuming from {layout.estimator}")
            return net
        out(f"estimator: checkpoint shape {net.sizes} != {sizes}, retraining")
    t = cfg.training
    net = init_weights(Mlp(sizes), _seed(cfg.experiment.seed, _TAG_EST_INIT))
    tc = TrainConfig(t.estimator_epochs, t.estimator_lr, t.batch_size, 1,
                     _seed(cfg.experiment.seed, _TAG_EST_TRAIN), t.optimizer, cfg.solver.gamma)
    net, history = train_estimator(net, train, tc)
    layout.estimator.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, None, layout.estimator)
    write_csv(layout.loss("estimator"), ["epoch", "loss"], enumerate(history, start=1),
              _comments(cfg))
    out(f"estimator: loss {history[0]:.3e} -> {history[-1]:.3e}")
    return net


def _val_error_at_k(net, head, family, ds, estimator, alg, k, gamma):
    sq = stack_instances(family, ds.params)
    z0 = warm_starts(estimator, ds.params, sq)
    errs = model_trace(LearnedModel(net, head), family, ds.params, ds.targets, z0, sq, alg, k,
                       gamma, "relative")
    return float(errs[-1].mean())


def cmd_train(cfg: ExperimentConfig, out=print):
    family = build_family(cfg)
    layout = Layout(cfg)
    train = _load_split(layout, "train")
    val = _load_split(layout, "val", required=False)
    est_train, train = split_for_stages(train, cfg.training.estimator_fraction)
    estimator = _train_estimator_phase(cfg, layout, family, est_train, out)
    sizes = metric_sizes(cfg, family)
    sq = stack_instances(family, train.params)
    candidates = heads(cfg)
    if len(candidates) > 1 and val is None:
        log.warning("no validation split; selecting rho_max on the training set")
    select_on = val if val is not None else train
    t = cfg.training
    for alg in cfg.solver.algorithms:
        for k in cfg.solver.k_grid:
            seed = _seed(cfg.experiment.seed, _TAG_METRIC, 0 if alg == "DR" else 1, k)
            tc = TrainConfig(t.metric_epochs, t.metric_lr, t.batch_size, k, seed, t.optimizer,
                             cfg.solver.gamma)
            best, rows = None, []
            for head in candidates:
                net0 = init_weights(Mlp(sizes), seed)
                net, history = train_metric(net0, head, estimator, family, train, tc, alg, sq=sq)
                rows += [(head.rho_max, e, loss) for e, loss in enumerate(history, start=1)]
                score = (_val_error_at_k(net, head, family, select_on, estimator, alg, k,
                                         cfg.solver.gamma) if len(candidates) > 1 else history[-1])
                if best is None or score < best[0]:
                    best = (score, net, head)
            _, net, head = best
            save_checkpoint(net, head, layout.metric(alg, k),
                            extra={"algorithm": alg, "k": k, "config_hash": cfg.hash()})
            write_csv(layout.loss(f"metric_{alg.lower()}_k{k}"), ["rho_max", "epoch", "loss"], rows,
                      _comments(cfg, algorithm=alg, k=k, selected_rho_max=head.rho_max))
            out(f"metric {alg} k={k}: rho_max={head.rho_max}, final loss {rows[-1][2]:.3e} "
                f"-> {layout.metric(alg, k)}")


def cmd_eval(cfg: ExperimentConfig, out=print):
    family = build_family(cfg)
    layout = Layout(cfg)
    test = _load_split(layout, "test")
    estimator, _, _ = _load_net(layout.estimator)
    sq = stack_instances(family, test.params)
    kind = cfg.solver.error
    rows = []
    for alg in cfg.solver.algorithms:
        models = {}
        for k in cfg.solver.k_grid:
            net, head, _ = _load_net(layout.metric(alg, k))
            models[f"learned_k{k}"] = LearnedModel(net, head)
        models["euclidean"] = FixedModel("euclidean")
        models["heuristic"] = FixedModel("heuristic", heuristic_cfg(cfg))
        report = evaluate_convergence(models, family, test, estimator, budget_for(cfg, alg), alg,
                                      cfg.solver.gamma, kind, sq=sq)
        rows += list(report.rows())
        summary = ", ".join(f"{mid} {curve[min(cfg.solver.k_grid[0], len(curve)) - 1]:.3e}"
                            for (mid, _), curve in report.curves.items())
        out(f"{alg} error at iteration {cfg.solver.k_grid[0]}: {summary}")
    write_csv(layout.convergence, ["model_id", "algorithm", "iteration", f"mean_{kind}_error"],
              rows, _comments(cfg, family=cfg.experiment.family, n_test=len(test)))
    out(f"wrote {len(rows)} rows -> {layout.convergence}")
    return rows


def cmd_correlate(cfg: ExperimentConfig, out=print):
    family = build_family(cfg)
    layout = Layout(cfg)
    test = _load_split(layout, "test")
    written = []
    for alg in cfg.solver.algorithms:
        for k in cfg.solver.k_grid:
            net, head, _ = _load_net(layout.metric(alg, k))
            records, s = active_set_correlation(net, head, family, test, alg)
            trailer = [f"summary,mean_active={s.mean_active!r},mean_inactive={s.mean_inactive!r},"
                       f"ratio={s.ratio!r},rank_correlation={s.rank_correlation!r},"
                       f"n_records={s.n_records}"]
            path = write_csv(layout.correlation(alg, k),
                             ["instance", "constraint", "residual", "weight", "active"],
                             ((i, j, r, w, a) for i, j, w, r, a in records),
                             _comments(cfg, algorithm=alg, k=k), trailer)
            out(f"{alg} k={k}: active/inactive weight ratio {s.ratio:.3f}, "
                f"rank correlation {s.rank_correlation:.3f} -> {path}")
            written.append((alg, k, s))
    return written


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "correlate": cmd_correlate,
}


def resolve_config(spec: str) -> ExperimentConfig:
    """``spec`` is a config path or the name of a shipped preset."""
    if Path(spec).exists() or spec.endswith(".ini"):
        return load_config(spec)
    if preset_path(spec).exists():
        return load_preset(spec)
    raise ConfigError(f"no config file or preset named {spec!r}")


def build_parser():
    ap = argparse.ArgumentParser(prog="proxmetric", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True,
                        help="config file, or a preset name (toy, portfolio, quadcopter)")
        sp.add_argument("--seed", type=int, default=None, help="override experiment.seed")
        sp.add_argument("--out", default=None, help="override experiment.out")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config).with_overrides(args.seed, args.out)
        COMMANDS[args.command](cfg)
    except (ConfigError, PriceCsvError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifactError, CheckpointError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingDivergedError, TargetGenerationError, InfeasibleProblemError,
            ad.NonFiniteError, ad.SingularMatrixError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
