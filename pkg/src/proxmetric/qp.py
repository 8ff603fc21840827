"""QP instances, the slack reformulation, and ground-truth diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

ACTIVE_TOL = 1e-8
ORACLE_MAX_INEQ = 25


class InfeasibleProblemError(ValueError):
    pass


@dataclass(frozen=True)
class QpProblem:
    """``min 1/2 x'Qx + q'x  s.t.  Lx = b,  Wx + c <= 0``."""

    Q: np.ndarray
    q: np.ndarray
    L: np.ndarray
    b: np.ndarray
    W: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        n = self.q.shape[0]
        for name, arr, shape in (("Q", self.Q, (n, n)), ("L", self.L, (self.b.shape[0], n)),
                                 ("W", self.W, (self.c.shape[0], n))):
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        if not np.allclose(self.Q, self.Q.T, rtol=0, atol=1e-10):
            raise ValueError("Q is not symmetric")
        if n and np.linalg.eigvalsh(self.Q).min() < -1e-10:
            raise ValueError("Q is not positive semidefinite")

    @classmethod
    def build(cls, Q, q, L=None, b=None, W=None, c=None):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        q = np.asarray(q, dtype=float).ravel()
        n = q.shape[0]
        L = np.zeros((0, n)) if L is None else np.atleast_2d(np.asarray(L, dtype=float))
        b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
        W = np.zeros((0, n)) if W is None else np.atleast_2d(np.asarray(W, dtype=float))
        c = np.zeros(0) if c is None else np.asarray(c, dtype=float).ravel()
        return cls(Q, q, L.reshape(-1, n), b, W.reshape(-1, n), c)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def m_eq(self):
        return self.b.shape[0]

    @property
    def k_in(self):
        return self.c.shape[0]

    def objective(self, x):
        return 0.5 * x @ self.Q @ x + self.q @ x


@dataclass(frozen=True)
class SlackQp:
    """``min 1/2 z'Hz + qt'z  s.t.  Rz + r = 0,  z[slack_idx] >= 0`` with z = (x, s).

    ``qt`` and ``r`` may carry a leading batch axis when several instances
    that share ``H`` and ``R`` are stacked with :meth:`stack`.
    """

    H: np.ndarray
    qt: np.ndarray
    R: np.ndarray
    r: np.ndarray
    n_orig: int
    slack_idx: np.ndarray = field(repr=False)

    @property
    def d(self):
        return self.H.shape[-1]

    @property
    def rows(self):
        return self.R.shape[-2]

    @property
    def k_in(self):
        return self.d - self.n_orig

    @property
    def batch(self):
        return self.qt.shape[:-1]

    @property
    def slack_mask(self):
        mask = np.zeros(self.d, dtype=bool)
        mask[self.slack_idx] = True
        return mask

    @staticmethod
    def stack(items):
        """Stack instances with identical ``H`` and ``R`` along a batch axis."""
        first = items[0]
        for sq in items[1:]:
            if not (np.array_equal(sq.H, first.H) and np.array_equal(sq.R, first.R)):
                raise ValueError("stacked instances must share H and R")
        return SlackQp(first.H, np.stack([s.qt for s in items]), first.R,
                       np.stack([s.r for s in items]), first.n_orig, first.slack_idx)

    def take(self, idx):
        return SlackQp(self.H, self.qt[idx], self.R, self.r[idx], self.n_orig, self.slack_idx)


def reformulate(p: QpProblem) -> SlackQp:
    """Introduce one slack per inequality: ``Wx + s + c = 0``, ``s >= 0``."""
    n, k, m = p.n, p.k_in, p.m_eq
    d = n + k
    H = np.zeros((d, d))
    H[:n, :n] = p.Q
    qt = np.concatenate([p.q, np.zeros(k)])
    R = np.zeros((m + k, d))
    R[:m, :n] = p.L
    R[m:, :n] = p.W
    R[m:, n:] = np.eye(k)
    r = np.concatenate([-p.b, p.c])
    return SlackQp(H, qt, R, r, n, np.arange(n, d))


def lift(p: QpProblem, x) -> np.ndarray:
    """Embed a primal point as ``z = (x, -(Wx + c))``."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, -(p.W @ x + p.c)])


def residuals(sq: SlackQp, z):
    """Return ``(||Rz + r||_inf, min slack, objective)`` for a single instance."""
    z = np.asarray(z, dtype=float)
    eq = sq.R @ z + sq.r
    eq_norm = float(np.max(np.abs(eq))) if eq.size else 0.0
    slack_min = float(np.min(z[sq.slack_idx])) if sq.k_in else np.inf
    objective = float(0.5 * z @ sq.H @ z + sq.qt @ z)
    return eq_norm, slack_min, objective


@dataclass(frozen=True)
class SolutionRecord:
    x_star: np.ndarray
    active_mask: np.ndarray
    objective: float


def _eq_qp(Q, q, A, rhs):
    """Solve ``min 1/2 x'Qx + q'x s.t. Ax = rhs``; ``None`` when the KKT matrix is singular."""
    n, m = q.shape[0], rhs.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Q
    K[:n, n:] = A.T
    K[n:, :n] = A
    if np.linalg.matrix_rank(K) < n + m:
        return None
    sol = np.linalg.solve(K, np.concatenate([-q, rhs]))
    return sol[:n], sol[n:]


def active_set_oracle_solve(p: QpProblem, tol: float = 1e-9) -> SolutionRecord:
    """Brute-force the active set.

    Candidate sets are visited by increasing size, lexicographically within a
    size.  Each one defines an equality-constrained QP; the first candidate
    that is primal feasible with nonnegative inequality multipliers satisfies
    the KKT conditions, hence is optimal for the convex problem, and it is
    also the tie-break winner (smallest, then lexicographically first) among
    equal-objective optima.  Cost is exponential in ``k_in``.
    """
    if p.k_in > ORACLE_MAX_INEQ:
        raise ValueError(f"oracle enumeration limited to {ORACLE_MAX_INEQ} inequalities, got {p.k_in}")
    scale = 1.0 + np.max(np.abs(p.c), initial=0.0) + np.max(np.abs(p.b), initial=0.0)
    for size in range(p.k_in + 1):
        for active in combinations(range(p.k_in), size):
            idx = list(active)
            A = np.vstack([p.L, p.W[idx]])
            rhs = np.concatenate([p.b, -p.c[idx]])
            res = _eq_qp(p.Q, p.q, A, rhs)
            if res is None:
                continue
            x, mult = res
            if np.any(p.W @ x + p.c > tol * scale):
                continue
            if np.any(mult[p.m_eq:] < -tol * (1.0 + np.max(np.abs(mult), initial=0.0))):
                continue
            mask = np.abs(p.W @ x + p.c) <= ACTIVE_TOL
            return SolutionRecord(x, mask, float(p.objective(x)))
    raise InfeasibleProblemError("no active set yields a KKT point")


def kkt_check(p: QpProblem, x, tol: float = 1e-6) -> bool:
    """Check primal feasibility, stationarity and complementarity of ``x`` to ``tol``.

    Multipliers are fitted by least squares over the equalities and the
    inequalities with ``Wx + c >= -tol``; the rest get zero multipliers.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,):
        return False
    if p.m_eq and np.max(np.abs(p.L @ x - p.b)) > tol:
        return False
    ineq = p.W @ x + p.c
    if p.k_in and np.max(ineq) > tol:
        return False
    near = np.flatnonzero(ineq >= -tol)
    grad = p.Q @ x + p.q
    A = np.vstack([p.L, p.W[near]])
    if A.shape[0]:
        mult = np.linalg.lstsq(A.T, -grad, rcond=None)[0]
        stat = grad + A.T @ mult
    else:
        mult = np.zeros(0)
        stat = grad
    if np.max(np.abs(stat), initial=0.0) > tol:
        return False
    lam = mult[p.m_eq:]
    if np.any(lam < -tol):
        return False
    return bool(np.all(np.abs(lam * ineq[near]) <= tol))
