"""Parametric QP families: translated box, portfolio allocation, quadcopter MPC.

Each family exposes ``name``, ``v`` (parameter length), ``sample(rng, count)``
returning a ``(count, v)`` parameter array, and ``instance(p)`` returning a
:class:`~proxmetric.qp.QpProblem`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .qp import QpProblem


class PriceCsvError(ValueError):
    pass


# --- translated box ------------------------------------------------------

_TOY_W = np.array([[-1.0, -1.0], [1.0, 1.0], [1.0, -1.0], [-1.0, 1.0]])


def toy_instance(p1: float, p2: float) -> QpProblem:
    """``min x^2 + y^2`` over a unit box whose position depends on (p1, p2)."""
    c = np.array([p1, -p1 - 1.0, p2 - 1.0, -p2])
    return QpProblem.build(2.0 * np.eye(2), np.zeros(2), W=_TOY_W, c=c)


@dataclass(frozen=True)
class ToyFamily:
    low: float = -2.0
    high: float = 2.0
    name: str = "toy"
    v: int = 2

    def sample(self, rng, count):
        return rng.uniform(self.low, self.high, size=(count, 2))

    def instance(self, p):
        return toy_instance(float(p[0]), float(p[1]))


# --- portfolio -----------------------------------------------------------

@dataclass(frozen=True)
class PortfolioFamily:
    Sigma: np.ndarray = field(repr=False)
    base_mu: np.ndarray = field(repr=False)
    noise_sigma: float = 0.1
    budget: float = 1.0
    name: str = "portfolio"

    def __post_init__(self):
        if not np.allclose(self.Sigma, self.Sigma.T, atol=1e-12):
            raise ValueError("Sigma must be symmetric")
        if self.budget <= 0:
            raise ValueError("budget must be positive")

    @property
    def n(self):
        return self.base_mu.shape[0]

    @property
    def v(self):
        return self.n

    def sample(self, rng, count):
        return self.base_mu + self.noise_sigma * rng.standard_normal((count, self.n))

    def instance(self, p):
        return portfolio_instance(self, p)


def synth_portfolio_family(n: int, n_factors: int = 3, noise_sigma: float = 0.1,
                           budget: float = 1.0, seed: int = 0) -> PortfolioFamily:
    """Factor-model covariance ``F F' + diag(d)`` with random expected returns."""
    if n < 2:
        raise ValueError("need at least two assets")
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((n, n_factors)) / np.sqrt(n_factors)
    d = rng.uniform(0.05, 0.15, size=n)
    Sigma = F @ F.T + np.diag(d)
    Sigma = 0.5 * (Sigma + Sigma.T)
    base_mu = 0.1 * rng.standard_normal(n)
    return PortfolioFamily(Sigma, base_mu, noise_sigma, budget)


def portfolio_instance(fam: PortfolioFamily, p) -> QpProblem:
    """``min x'Sigma x - p'x  s.t.  1'x = budget,  x >= 0``."""
    p = np.asarray(p, dtype=float)
    n = fam.n
    return QpProblem.build(2.0 * fam.Sigma, -p, L=np.ones((1, n)), b=[fam.budget],
                           W=-np.eye(n), c=np.zeros(n))


def ingest_prices_csv(path, jitter: float = 1e-8):
    """Read a price table and return ``(Sigma, base_mu)`` of its per-period differentials.

    The first row holds asset names, each further row one period's prices.
    With a single differential the covariance is taken as zero.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 3:
        raise PriceCsvError(f"{path}: need a header and at least two price rows")
    width = len(rows[0])
    prices = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise PriceCsvError(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
        try:
            prices.append([float(cell) for cell in row])
        except ValueError as exc:
            raise PriceCsvError(f"{path}:{lineno}: {exc}") from None
    prices = np.array(prices)
    if not np.all(np.isfinite(prices)):
        raise PriceCsvError(f"{path}: non-finite price")
    diffs = np.diff(prices, axis=0)
    base_mu = diffs.mean(axis=0)
    if diffs.shape[0] > 1:
        Sigma = np.atleast_2d(np.cov(diffs, rowvar=False))
    else:
        Sigma = np.zeros((width, width))
    return Sigma + jitter * np.eye(width), base_mu


# --- quadcopter ----------------------------------------------------------

QUAD_A = np.array([
    [1.0, 0, 0, 0, 0, 0, 0.1, 0, 0, 0, 0, 0],
    [0, 1.0, 0, 0, 0, 0, 0, 0.1, 0, 0, 0, 0],
    [0, 0, 1.0, 0, 0, 0, 0, 0, 0.1, 0, 0, 0],
    [0.0488, 0, 0, 1.0, 0, 0, 0.0016, 0, 0, 0.0992, 0, 0],
    [0, -0.0488, 0, 0, 1.0, 0, 0, -0.0016, 0, 0, 0.0992, 0],
    [0, 0, 0, 0, 0, 1.0, 0, 0, 0, 0, 0, 0.0992],
    [0, 0, 0, 0, 0, 0, 1.0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 1.0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 1.0, 0, 0, 0],
    [0.9734, 0, 0, 0, 0, 0, 0.0488, 0, 0, 0.9846, 0, 0],
    [0, -0.9734, 0, 0, 0, 0, 0, -0.0488, 0, 0, 0.9846, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.9846],
])

QUAD_B = np.array([
    [0, -0.0726, 0, 0.0726],
    [-0.0726, 0, 0.0726, 0],
    [-0.0152, 0.0152, -0.0152, 0.0152],
    [0, -0.0006, 0, 0.0006],
    [0.0006, 0, -0.0006, 0.0],
    [0.0106, 0.0106, 0.0106, 0.0106],
    [0, -1.4512, 0, 1.4512],
    [-1.4512, 0, 1.4512, 0],
    [-0.3049, 0.3049, -0.3049, 0.3049],
    [0, -0.0236, 0, 0.0236],
    [0.0236, 0, -0.0236, 0],
    [0.2107, 0.2107, 0.2107, 0.2107],
])

QUAD_Q = np.array([0, 0, 10, 10, 10, 10, 0, 0, 0, 5, 5, 5], dtype=float)
QUAD_R = np.full(4, 0.1)
HOVER_THRUST = 10.5916


@dataclass(frozen=True)
class QuadcopterModel:
    """Reference-tracking MPC over states ``x_1..x_{N+1}`` and controls ``u_0..u_N``.

    Every stage carries two-sided bounds on the bounded state coordinates
    and on all controls; unbounded state coordinates get no rows at all.
    """

    A: np.ndarray = field(default_factory=lambda: QUAD_A.copy(), repr=False)
    B: np.ndarray = field(default_factory=lambda: QUAD_B.copy(), repr=False)
    Q: np.ndarray = field(default_factory=lambda: QUAD_Q.copy(), repr=False)
    R: np.ndarray = field(default_factory=lambda: QUAD_R.copy(), repr=False)
    horizon: int = 10
    r: np.ndarray = field(default_factory=lambda: np.zeros(12), repr=False)
    u_a: np.ndarray = field(default_factory=lambda: np.full(4, 9.6 - HOVER_THRUST), repr=False)
    u_b: np.ndarray = field(default_factory=lambda: np.full(4, 13.0 - HOVER_THRUST), repr=False)
    x_a: np.ndarray = field(default_factory=lambda: np.r_[np.full(2, -np.pi / 6), np.full(10, -np.inf)],
                            repr=False)
    x_b: np.ndarray = field(default_factory=lambda: np.r_[np.full(2, np.pi / 6), np.full(10, np.inf)],
                            repr=False)
    sample_box: tuple = ((-np.pi / 6, np.pi / 6), (-0.8, 0.8))
    name: str = "quadcopter"

    def __post_init__(self):
        nx, nu = self.B.shape
        if self.A.shape != (nx, nx) or self.Q.shape != (nx,) or self.R.shape != (nu,):
            raise ValueError("quadcopter model dimensions are inconsistent")
        if np.any(self.Q < 0) or np.any(self.R < 0):
            raise ValueError("Q and R must be nonnegative diagonals")

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B.shape[1]

    @property
    def v(self):
        return self.nx

    @property
    def stages(self):
        return self.horizon + 1

    @property
    def bounded_states(self):
        return np.flatnonzero(np.isfinite(self.x_a) | np.isfinite(self.x_b))

    @property
    def counts(self):
        """``(variables, equalities, inequalities)`` of the generated QP."""
        S = self.stages
        n_ineq = S * (np.isfinite(self.x_a).sum() + np.isfinite(self.x_b).sum()
                      + np.isfinite(self.u_a).sum() + np.isfinite(self.u_b).sum())
        return S * (self.nx + self.nu), S * self.nx, int(n_ineq)

    def sample(self, rng, count):
        (lo_b, hi_b), (lo_f, hi_f) = self.sample_box
        p = rng.uniform(lo_f, hi_f, size=(count, self.nx))
        nb = len(self.bounded_states)
        p[:, self.bounded_states] = rng.uniform(lo_b, hi_b, size=(count, nb))
        return p

    def instance(self, p):
        return quadcopter_instance(self, p)

    def state_slice(self, k):
        """Columns of state ``x_k`` (k = 1..N+1)."""
        return slice((k - 1) * self.nx, k * self.nx)

    def control_slice(self, k):
        """Columns of control ``u_k`` (k = 0..N)."""
        off = self.stages * self.nx
        return slice(off + k * self.nu, off + (k + 1) * self.nu)


def quadcopter_instance(model: QuadcopterModel, p) -> QpProblem:
    p = np.asarray(p, dtype=float)
    if p.shape != (model.nx,):
        raise ValueError(f"initial state must have length {model.nx}")
    S, nx, nu = model.stages, model.nx, model.nu
    n = S * (nx + nu)

    Qd = np.concatenate([np.tile(model.Q, S), np.tile(model.R, S)])
    Q = 2.0 * np.diag(Qd)
    q = np.concatenate([np.tile(-2.0 * model.Q * model.r, S), np.zeros(S * nu)])

    L = np.zeros((S * nx, n))
    b = np.zeros(S * nx)
    for k in range(S):
        rows = slice(k * nx, (k + 1) * nx)
        L[rows, model.state_slice(k + 1)] = np.eye(nx)
        L[rows, model.control_slice(k)] = -model.B
        if k == 0:
            b[rows] = model.A @ p
        else:
            L[rows, model.state_slice(k)] = -model.A

    W_rows, c = [], []

    def bound(col, lo, hi):
        if np.isfinite(hi):
            row = np.zeros(n)
            row[col] = 1.0
            W_rows.append(row)
            c.append(-hi)
        if np.isfinite(lo):
            row = np.zeros(n)
            row[col] = -1.0
            W_rows.append(row)
            c.append(lo)

    for k in range(1, S + 1):
        base = model.state_slice(k).start
        for i in range(nx):
            bound(base + i, model.x_a[i], model.x_b[i])
    for k in range(S):
        base = model.control_slice(k).start
        for j in range(nu):
            bound(base + j, model.u_a[j], model.u_b[j])

    W = np.array(W_rows).reshape(-1, n)
    return QpProblem.build(Q, q, L=L, b=b, W=W, c=np.array(c))


def rollout(model: QuadcopterModel, p, controls):
    """Simulate the linear dynamics from ``p`` under ``controls`` (shape ``(N+1, nu)``)."""
    x = np.asarray(p, dtype=float)
    states = []
    for u in controls:
        x = model.A @ x + model.B @ u
        states.append(x)
    return np.array(states)
