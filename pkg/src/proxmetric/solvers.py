"""Metric proximal steps, Douglas-Rachford and ADMM on the slack splitting.

The splitting is ``f(z) = 1/2 z'Hz + qt'z + indicator(Rz + r = 0)`` and
``g(z) = indicator(z_s >= 0)``.  With a diagonal metric ``M = diag(rho * m)``
the prox of ``g`` is a clamp of the slack coordinates and the prox of ``f``
is one saddle-point solve.  The KKT matrix is fixed for a given instance and
metric, so it is built and factorized once per run.

All steps are written with :mod:`proxmetric.autodiff` primitives.  Called
with plain arrays they just compute; called with tensors that live on a tape
they also record, which is how :func:`unrolled_solve` is differentiable while
:func:`run` stays cheap.  Both produce bit-identical forward values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .qp import SlackQp

ALGORITHMS = ("DR", "ADMM")
KKT_REG = 1e-10


@dataclass(frozen=True)
class Metric:
    """Diagonal metric ``diag(rho * m)``.

    ``m`` has shape ``(..., d)`` and ``rho`` is a scalar or ``(..., 1)``; either
    may be a :class:`~proxmetric.autodiff.Tensor` on a tape.
    """

    m: object
    rho: object = 1.0

    def __post_init__(self):
        for name in ("m", "rho"):
            val = getattr(self, name)
            arr = val.data if isinstance(val, Tensor) else np.asarray(val, dtype=float)
            if np.any(arr <= 0):
                raise ValueError(f"metric {name} must be positive")

    def diag(self) -> Tensor:
        return ad.mul(self.rho, self.m)

    def numpy_diag(self) -> np.ndarray:
        return np.asarray(self.diag().data)

    def take(self, idx):
        def sel(x):
            arr = x.data if isinstance(x, Tensor) else np.asarray(x)
            return arr if arr.ndim < 2 else arr[idx]
        return Metric(sel(self.m), sel(self.rho))


@dataclass(frozen=True)
class SolverConfig:
    gamma: float = 1.0
    iterations: int = 10
    algorithm: str = "DR"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")


@dataclass
class IterateTrace:
    """Per-iteration x-part readouts ``(k, ..., n)`` and optional relative errors ``(k, ...)``."""

    iterates: np.ndarray
    errors: np.ndarray | None = None

    def __len__(self):
        return self.iterates.shape[0]


def relative_error(x, x_star):
    x_star = np.asarray(x_star)
    num = np.linalg.norm(np.asarray(x) - x_star, axis=-1)
    return num / np.maximum(np.linalg.norm(x_star, axis=-1), 1e-12)


def kkt_base(sq: SlackQp) -> np.ndarray:
    """``[[H, R'], [R, 0]]``, with a tiny negative (2,2) block if R is rank deficient."""
    d, rows = sq.d, sq.rows
    K = np.zeros((d + rows, d + rows))
    K[:d, :d] = sq.H
    K[:d, d:] = sq.R.T
    K[d:, :d] = sq.R
    if rows and np.linalg.matrix_rank(sq.R) < rows:
        K[d:, d:] = -KKT_REG * np.eye(rows)
    return K


def kkt_matrix(sq: SlackQp, penalty, base=None) -> Tensor:
    """KKT matrix with ``penalty`` (shape ``(..., d)``) added to the H block."""
    if base is None:
        base = kkt_base(sq)
    return ad.add(base, ad.diag_embed(penalty, base.shape[-1]))


def _solve_top(K, top, sq):
    rhs = ad.concat([top, -sq.r], axis=-1)
    return ad.linear_solve(K, rhs, vectors=True)[..., :sq.d]


def prox_g(z, sq: SlackQp) -> Tensor:
    """Clamp the slack coordinates at zero; the metric drops out for diagonal M."""
    return ad.relu_clamp(z, sq.slack_mask)


def prox_f(z, metric: Metric, gamma: float, sq: SlackQp, K=None) -> Tensor:
    """``argmin 1/2 z'Hz + qt'z + (1/gamma)||z - z_in||_M^2  s.t.  Rz + r = 0``."""
    scaled = ad.mul(2.0 / gamma, metric.diag())
    if K is None:
        K = kkt_matrix(sq, scaled)
    return _solve_top(K, ad.mul(scaled, z) - sq.qt, sq)


def dr_step(x, metric: Metric, gamma: float, sq: SlackQp, K=None):
    """One Douglas-Rachford step; returns ``(x_next, y)`` with ``y = prox_g(x)``."""
    y = prox_g(x, sq)
    z = prox_f(2.0 * y - x, metric, gamma, sq, K)
    return x + z - y, y


def admm_kkt(sq: SlackQp, metric: Metric, gamma: float, base=None) -> Tensor:
    mdiag = metric.diag()
    return kkt_matrix(sq, ad.mul(gamma, mdiag * mdiag), base)


def admm_step(x, y, u, metric: Metric, gamma: float, sq: SlackQp, K=None):
    """Preconditioned ADMM on ``x - y = 0``; ``x`` is carried only for symmetry."""
    mdiag = metric.diag()
    if K is None:
        K = admm_kkt(sq, metric, gamma)
    top = ad.mul(gamma, mdiag * mdiag * y - mdiag * u) - sq.qt
    x_new = _solve_top(K, top, sq)
    y_new = prox_g(x_new + u / mdiag, sq)
    u_new = u + mdiag * (x_new - y_new)
    return x_new, y_new, u_new


def _readouts(sq: SlackQp, metric: Metric, cfg: SolverConfig, z0):
    """Yield the x-part readout after each iteration."""
    n = sq.n_orig
    base = kkt_base(sq)
    if cfg.algorithm == "DR":
        scaled = ad.mul(2.0 / cfg.gamma, metric.diag())
        K = kkt_matrix(sq, scaled, base)
        x = z0
        y = prox_g(x, sq)
        for _ in range(cfg.iterations):
            z = _solve_top(K, ad.mul(scaled, 2.0 * y - x) - sq.qt, sq)
            x = x + z - y
            y = prox_g(x, sq)
            yield y[..., :n]
    else:
        K = admm_kkt(sq, metric, cfg.gamma, base)
        x = y = z0
        u = np.zeros(np.broadcast_shapes(np.shape(ad.as_tensor(z0).data), (sq.d,)))
        for _ in range(cfg.iterations):
            x, y, u = admm_step(x, y, u, metric, cfg.gamma, sq, K)
            yield x[..., :n]


def _check_start(sq, z0):
    data = z0.data if isinstance(z0, Tensor) else np.asarray(z0)
    if data.shape[-1] != sq.d:
        raise ValueError(f"start point has length {data.shape[-1]}, expected {sq.d}")
    if np.any(data[..., sq.slack_idx] != 0):
        raise ValueError("slack coordinates of the start point must be zero")


def run(sq: SlackQp, metric: Metric, cfg: SolverConfig, z0, reference=None) -> IterateTrace:
    """Run ``cfg.iterations`` steps and record every readout (forward only)."""
    _check_start(sq, z0)
    iterates = np.array([t.data for t in _readouts(sq, metric, cfg, z0)])
    errors = None if reference is None else relative_error(iterates, reference)
    return IterateTrace(iterates, errors)


def unrolled_solve(sq: SlackQp, metric: Metric, cfg: SolverConfig, z0) -> Tensor:
    """x-part readout after ``cfg.iterations`` steps, differentiable through the tape."""
    _check_start(sq, z0)
    out = None
    for out in _readouts(sq, metric, cfg, z0):
        pass
    return out


def solve_to_tolerance(sq: SlackQp, z0=None, metric: Metric | None = None, gamma: float = 1.0,
                       tol: float = 1e-10, max_iter: int = 50000):
    """Long-horizon DR until ``||x_{k+1} - x_k||_inf < tol`` for every instance.

    Returns ``(x_part, converged_mask, iterations)``; instances that stop early
    are frozen while the rest continue.
    """
    batch = sq.batch
    if z0 is None:
        z0 = np.zeros(batch + (sq.d,))
    if metric is None:
        metric = Metric(np.ones(sq.d), 1.0)
    scaled = (2.0 / gamma) * metric.numpy_diag()
    K = kkt_matrix(sq, scaled)
    Kt = Tensor(K.data)
    x = np.array(z0, dtype=float).reshape((-1, sq.d))
    qt = np.broadcast_to(sq.qt, batch + (sq.d,)).reshape(-1, sq.d)
    r = np.broadcast_to(sq.r, batch + (sq.rows,)).reshape(-1, sq.rows)
    mask = sq.slack_mask
    done = np.zeros(x.shape[0], dtype=bool)
    active = np.arange(x.shape[0])
    it = 0
    for it in range(1, max_iter + 1):
        xa = x[active]
        y = np.where(mask & (xa < 0), 0.0, xa)
        rhs = np.concatenate([scaled * (2.0 * y - xa) - qt[active], -r[active]], axis=-1)
        z = ad.linear_solve(Kt, rhs, vectors=True).data[:, :sq.d]
        step = z - y
        x[active] = xa + step
        fin = np.max(np.abs(step), axis=-1) < tol
        if fin.any():
            done[active[fin]] = True
            active = active[~fin]
        if active.size == 0:
            break
    y = np.where(mask & (x < 0), 0.0, x)
    return y[:, :sq.n_orig].reshape(batch + (sq.n_orig,)), done.reshape(batch), it


def run_dense_admm(sq: SlackQp, M: np.ndarray, cfg: SolverConfig, z0, reference=None) -> IterateTrace:
    """ADMM with a dense symmetric positive definite metric ``M`` (forward only).

    The y-update is the projection of ``x + M^{-1}u`` onto ``{z_s >= 0}`` in
    the ``M'M`` norm, done as a nonnegative least-squares problem on the
    slack block after eliminating the free coordinates.
    """
    from scipy.optimize import nnls

    if cfg.algorithm != "ADMM":
        raise ValueError("dense metrics are only supported for ADMM")
    _check_start(sq, z0)
    d, n, g = sq.d, sq.n_orig, cfg.gamma
    M = np.asarray(M, dtype=float)
    M2 = M.T @ M
    Minv = np.linalg.inv(M)
    K = kkt_base(sq)
    K[:d, :d] += g * M2
    Kinv = np.linalg.inv(K)
    free = ~sq.slack_mask
    s_idx = sq.slack_idx
    P_ff, P_fs, P_ss = M2[np.ix_(free, free)], M2[np.ix_(free, s_idx)], M2[np.ix_(s_idx, s_idx)]
    coupled = np.any(P_fs != 0)
    if coupled:
        elim = np.linalg.solve(P_ff, P_fs)
        S = P_ss - P_fs.T @ elim
        Lc = np.linalg.cholesky(0.5 * (S + S.T)).T

    def project(v):
        out = v.copy()
        if not coupled:
            out[s_idx] = np.maximum(v[s_idx], 0.0)
            return out
        ys = nnls(Lc, Lc @ v[s_idx])[0]
        out[s_idx] = ys
        out[free] = v[free] - elim @ (ys - v[s_idx])
        return out

    z0 = np.asarray(z0, dtype=float)
    batch = z0.shape[:-1]
    Y = z0.reshape(-1, d).copy()
    U = np.zeros_like(Y)
    qt = np.broadcast_to(sq.qt, batch + (d,)).reshape(-1, d)
    r = np.broadcast_to(sq.r, batch + (sq.rows,)).reshape(-1, sq.rows)
    out = []
    for _ in range(cfg.iterations):
        rhs = np.concatenate([g * (Y @ M2.T - U @ M.T) - qt, -r], axis=-1)
        X = (rhs @ Kinv.T)[:, :d]
        V = X + U @ Minv.T
        Y = np.array([project(v) for v in V])
        U = U + (X - Y) @ M.T
        out.append(X[:, :n].reshape(batch + (n,)))
    iterates = np.array(out)
    errors = None if reference is None else relative_error(iterates, reference)
    return IterateTrace(iterates, errors)
