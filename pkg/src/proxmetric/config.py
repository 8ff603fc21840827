"""Experiment configuration: INI-style ``key = value`` files with fixed sections.

Defaults reproduce the translated-box experiment; ``presets/`` ships one file
per experiment family.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()] if text.strip() else []


def _ints(text):
    return [int(t) for t in text.replace(",", " ").split()] if text.strip() else []


def _words(text):
    return [t.strip() for t in text.replace(",", " ").split() if t.strip()]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentSection:
    family: str = "toy"
    seed: int = 0
    out: str = "runs/toy"


@dataclass(frozen=True)
class ProblemSection:
    n_assets: int = 20
    n_factors: int = 3
    noise_sigma: float = 0.1
    budget: float = 1.0
    prices_csv: str = ""
    family_seed: int = 0
    horizon: int = 10


@dataclass(frozen=True)
class DataSection:
    n_train: int = 2000
    n_val: int = 0
    n_test: int = 2000


@dataclass(frozen=True)
class SolverSection:
    algorithms: tuple = ("DR", "ADMM")
    gamma: float = 1.0
    k_grid: tuple = (10,)
    budget_dr: int = 100
    budget_admm: int = 150
    error: str = "absolute"


@dataclass(frozen=True)
class NetworkSection:
    metric_hidden: int = 20
    metric_layers: int = 2
    estimator_hidden: int = 80
    estimator_layers: int = 2


@dataclass(frozen=True)
class HeadSection:
    m_min: float = 0.2
    m_max: float = 5.0
    rho_min: float = 0.05
    rho_max: float = 1.0
    rho_max_sweep: tuple = ()


@dataclass(frozen=True)
class TrainingSection:
    estimator_epochs: int = 200
    estimator_lr: float = 1e-3
    metric_epochs: int = 100
    metric_lr: float = 1e-3
    batch_size: int = 64
    optimizer: str = "adam"
    estimator_fraction: float = 1.0


@dataclass(frozen=True)
class HeuristicSection:
    epsilon: float = 0.1
    diagonalize: bool = True


SECTIONS = {
    "experiment": ExperimentSection,
    "problem": ProblemSection,
    "data": DataSection,
    "solver": SolverSection,
    "network": NetworkSection,
    "head": HeadSection,
    "training": TrainingSection,
    "heuristic": HeuristicSection,
}

_PARSERS = {
    ("solver", "algorithms"): lambda s: tuple(w.upper() for w in _words(s)),
    ("solver", "k_grid"): lambda s: tuple(_ints(s)),
    ("head", "rho_max_sweep"): lambda s: tuple(_floats(s)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    problem: ProblemSection = field(default_factory=ProblemSection)
    data: DataSection = field(default_factory=DataSection)
    solver: SolverSection = field(default_factory=SolverSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    head: HeadSection = field(default_factory=HeadSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    heuristic: HeuristicSection = field(default_factory=HeuristicSection)

    def with_overrides(self, seed=None, out=None):
        exp = self.experiment
        if seed is not None:
            exp = replace(exp, seed=int(seed))
        if out is not None:
            exp = replace(exp, out=str(out))
        return replace(self, experiment=exp)

    def to_text(self) -> str:
        """Canonical serialization; parsing it back gives an equal config."""
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            sec = getattr(self, name)
            for f in fields(sec):
                val = getattr(sec, f.name)
                if isinstance(val, tuple):
                    val = ", ".join(str(v) for v in val)
                elif isinstance(val, bool):
                    val = "true" if val else "false"
                lines.append(f"{f.name} = {val}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        """Identity of the experiment; the output directory does not take part."""
        text = self.with_overrides(out="").to_text()
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _convert(section, key, raw, default):
    parser = _PARSERS.get((section, key))
    if parser is not None:
        return parser(raw)
    if isinstance(default, bool):
        return _bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    kwargs = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
        cls = SECTIONS[name]
        defaults = cls()
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in cp.items(name):
            if key not in known:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            try:
                values[key] = _convert(name, key, raw, getattr(defaults, key))
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {name}.{key}: {exc}") from None
        kwargs[name] = replace(defaults, **values)
    cfg = ExperimentConfig(**kwargs)
    validate(cfg, source)
    return cfg


def validate(cfg: ExperimentConfig, source="<config>"):
    def bad(msg):
        raise ConfigError(f"{source}: {msg}")

    if cfg.experiment.family not in ("toy", "portfolio", "quadcopter"):
        bad(f"unknown family {cfg.experiment.family!r}")
    if not cfg.solver.algorithms or set(cfg.solver.algorithms) - {"DR", "ADMM"}:
        bad("algorithms must be a non-empty subset of DR, ADMM")
    if not cfg.solver.k_grid or min(cfg.solver.k_grid) < 1:
        bad("k_grid must list positive iteration counts")
    if cfg.solver.error not in ("absolute", "relative"):
        bad("solver.error must be absolute or relative")
    if cfg.solver.gamma <= 0 or min(cfg.solver.budget_dr, cfg.solver.budget_admm) < 1:
        bad("gamma and test budgets must be positive")
    h = cfg.head
    if not (0 < h.m_min < h.m_max and 0 < h.rho_min < h.rho_max):
        bad("head bounds must satisfy 0 < min < max")
    if any(r <= h.rho_min for r in h.rho_max_sweep):
        bad("every rho_max in the sweep must exceed rho_min")
    d = cfg.data
    if min(d.n_train, d.n_val, d.n_test) < 0 or d.n_train == 0:
        bad("dataset sizes must be nonnegative with a nonempty training split")
    t = cfg.training
    if min(t.estimator_epochs, t.metric_epochs, t.batch_size) < 1:
        bad("epochs and batch size must be positive")
    if t.optimizer.lower() not in ("adam", "sgd"):
        bad("optimizer must be adam or sgd")
    if not 0 < t.estimator_fraction <= 1:
        bad("estimator_fraction must lie in (0, 1]")
    if cfg.heuristic.epsilon <= 0:
        bad("heuristic epsilon must be positive")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def preset_path(name: str) -> Path:
    return Path(str(resources.files("proxmetric") / "presets" / f"{name}.ini"))


def load_preset(name: str) -> ExperimentConfig:
    return load_config(preset_path(name))
