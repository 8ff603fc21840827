"""Dense float64 arrays with a reverse-mode differentiation tape.

Every array the solvers and networks touch is a :class:`Tensor`.  A tensor
either lives on a :class:`Tape` (it is a parameter leaf or was produced by a
primitive applied to something on the tape) or it is a plain constant.
Primitives applied only to constants record nothing, so the same solver code
serves both the differentiable unroll and the cheap forward-only path.

Shapes follow numpy conventions.  Matrices are ``(rows, cols)`` and may carry
leading batch axes, e.g. a batch of KKT matrices is ``(B, D, D)`` and a batch
of vectors is ``(B, D)``.
"""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

PIVOT_TOL = 1e-12


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class SingularMatrixError(np.linalg.LinAlgError):
    """LU factorization met a pivot below the tolerance.

    ``indices`` lists the offending batch entries (empty for an unbatched
    matrix) so callers can drop those instances and retry.
    """

    def __init__(self, msg, indices=()):
        super().__init__(msg)
        self.indices = tuple(indices)


class Tape:
    """Ordered record of primitive applications."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def param(self, data, name=None) -> "Tensor":
        """Register a leaf whose gradient :func:`backward` will populate."""
        t = Tensor(data, name=name)
        t.tape = self
        t.requires_grad = True
        self.nodes.append(t)
        return t

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "tape", "requires_grad", "grad", "parents", "backward_fn",
                 "op", "name", "_lu_inv")
    # make numpy defer to the reflected operators instead of building object arrays
    __array_ufunc__ = None

    def __init__(self, data, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = None
        self.requires_grad = False
        self.grad = None
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self.name = name
        self._lu_inv = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = "param" if self.requires_grad and not self.parents else self.op
        return f"Tensor({tag}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op, out, parents, backward_fn):
    """Wrap a primitive's output, attaching it to the tape of its operands."""
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    t = Tensor(out)
    t.op = op
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = p.tape
    if tape is not None:
        t.tape = tape
        t.requires_grad = True
        t.parents = tuple(parents)
        t.backward_fn = backward_fn
        tape.nodes.append(t)
    return t


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(a):
    return np.swapaxes(a, -1, -2)


# --- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def relu_clamp(v, mask=None) -> Tensor:
    """Elementwise ``max(0, v)``, optionally only where ``mask`` is true.

    The subgradient at 0 is taken as 0.
    """
    v = as_tensor(v)
    keep = v.data > 0
    if mask is not None:
        keep = keep | ~np.asarray(mask, dtype=bool)
    return _record("relu_clamp", np.where(keep, v.data, 0.0), (v,),
                   lambda g: (np.where(keep, g, 0.0),))


def sigmoid_scale(v, lo: float, hi: float) -> Tensor:
    """Map ``v`` into ``(lo, hi)`` through the logistic function."""
    if not lo < hi:
        raise ValueError(f"sigmoid_scale needs lo < hi, got lo={lo}, hi={hi}")
    v = as_tensor(v)
    s = expit(v.data)
    # clip so the open interval survives rounding at saturated logits
    out = np.clip(lo + (hi - lo) * s, np.nextafter(lo, hi), np.nextafter(hi, lo))
    return _record("sigmoid_scale", out, (v,),
                   lambda g: (g * (hi - lo) * s * (1.0 - s),))


# --- reductions ----------------------------------------------------------

def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _record("sum", np.asarray(a.data.sum()), (a,),
                   lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mse(a, b) -> Tensor:
    """Mean of squared elementwise differences."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def bw(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return _record("mse", np.asarray(np.mean(diff * diff)), (a, b), bw)


# --- structural ----------------------------------------------------------

def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros(a.shape)
        full[idx] += g
        return (full,)

    return _record("getitem", a.data[idx], (a,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    arrays = [t.data for t in ts]
    if axis == -1:
        # broadcast leading axes so a shared block can sit next to a batched one
        lead = np.broadcast_shapes(*[x.shape[:-1] for x in arrays])
        arrays = [np.broadcast_to(x, lead + x.shape[-1:]) for x in arrays]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]

    def bw(g):
        parts = np.split(g, bounds, axis=axis)
        return tuple(_unbroadcast(p, t.shape) for p, t in zip(parts, ts))

    return _record("concat", out, ts, bw)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _record("transpose", _swap(a.data), (a,), lambda g: (_swap(g),))


def diag_embed(v, size: int) -> Tensor:
    """Place ``v[..., :k]`` on the leading diagonal of a ``size x size`` zero matrix."""
    v = as_tensor(v)
    k = v.shape[-1]
    if k > size:
        raise ValueError("diagonal longer than matrix")
    out = np.zeros(v.shape[:-1] + (size, size))
    ii = np.arange(k)
    out[..., ii, ii] = v.data
    return _record("diag_embed", out, (v,), lambda g: (g[..., ii, ii],))


# --- linear algebra ------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting; operands need ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} x {b.shape}")
    return _record("matmul", a.data @ b.data, (a, b),
                   lambda g: (_unbroadcast(g @ _swap(b.data), a.shape),
                              _unbroadcast(_swap(a.data) @ g, b.shape)))


def _inverse(k: Tensor) -> np.ndarray:
    """LU-factorize ``k`` (partial pivoting) and cache its inverse on the node."""
    if k._lu_inv is not None:
        return k._lu_inv
    mats = k.data.reshape((-1,) + k.shape[-2:])
    size = mats.shape[-1]
    eye = np.eye(size)
    inv = np.empty_like(mats)
    bad = []
    for i, mat in enumerate(mats):
        with warnings.catch_warnings():
            # exact zero pivots are reported below as SingularMatrixError
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(mat, check_finite=False)
        if np.min(np.abs(np.diag(lu))) < PIVOT_TOL:
            bad.append(i)
            continue
        inv[i] = scipy.linalg.lu_solve((lu, piv), eye, check_finite=False)
    if bad:
        raise SingularMatrixError(
            f"singular matrix: pivot below {PIVOT_TOL} in {len(bad)} of {len(mats)}",
            bad if k.ndim > 2 else ())
    k._lu_inv = inv.reshape(k.shape)
    return k._lu_inv


def _apply(mat, rhs, vectors):
    if not vectors:
        return mat @ rhs
    if mat.ndim == 2:
        return rhs @ mat.T
    return (mat @ rhs[..., None])[..., 0]


def _solve(k, kinv, rhs, vectors, trans=False):
    if trans:
        k, kinv = _swap(k), _swap(kinv)
    w = _apply(kinv, rhs, vectors)
    # one step of iterative refinement
    return w + _apply(kinv, rhs - _apply(k, w, vectors), vectors)


def linear_solve(k, b, vectors: bool = False) -> Tensor:
    """Solve ``k @ w = b``.

    With ``vectors=False`` ``b`` is a (batched) matrix right-hand side of shape
    ``(..., D, cols)``.  With ``vectors=True`` it is a batch of vectors
    ``(..., D)``; ``k`` may then be a single shared ``(D, D)`` matrix.  A 1-D
    ``b`` is always treated as a vector.

    The factorization is computed once per ``k`` node and reused by every
    solve against that node, forward and adjoint.
    """
    k, b = as_tensor(k), as_tensor(b)
    if k.ndim < 2 or k.shape[-1] != k.shape[-2]:
        raise ValueError(f"linear_solve needs a square matrix, got {k.shape}")
    vectors = vectors or b.ndim == 1
    axis = -1 if vectors else -2
    if b.ndim < -axis or b.shape[axis] != k.shape[-1]:
        raise ValueError(f"linear_solve shape mismatch {k.shape} vs {b.shape}")
    kinv = _inverse(k)
    w = _solve(k.data, kinv, b.data, vectors)

    def bw(g):
        s = _solve(k.data, kinv, g, vectors, trans=True)
        if vectors:
            gk = -s[..., :, None] * w[..., None, :]
        else:
            gk = -(s @ _swap(w))
        return _unbroadcast(gk, k.shape), _unbroadcast(s, b.shape)

    return _record("linear_solve", w, (k, b), bw)


# --- reverse sweep -------------------------------------------------------

def backward(loss: Tensor) -> dict:
    """Propagate d(loss) back through the tape.

    Returns a map from every parameter leaf on the tape to its gradient and
    also stores it in ``leaf.grad``.  Gradients are recomputed from scratch on
    each call, so repeated calls give identical results.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise ValueError("loss is not recorded on a tape")
    grads = {id(loss): np.ones(loss.shape)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if node.backward_fn is None:
            if node.requires_grad:
                leaves[node] = np.zeros(node.shape) if g is None else g
            continue
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if parent.tape is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for leaf, g in leaves.items():
        leaf.grad = g
    return leaves


def grad_check(f: Callable[[Tensor], Tensor], x0, eps: float = 1e-5) -> float:
    """Largest relative gap between tape and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor; it is called once on a tape and
    twice per coordinate on plain constants.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    tape = Tape()
    x = tape.param(x0.copy())
    backward(f(x))
    g = x.grad.ravel()
    worst = 0.0
    for i in range(x0.size):
        e = np.zeros(x0.size)
        e[i] = eps
        e = e.reshape(x0.shape)
        fp = float(f(Tensor(x0 + e)).data)
        fm = float(f(Tensor(x0 - e)).data)
        cd = (fp - fm) / (2 * eps)
        worst = max(worst, abs(g[i] - cd) / (abs(cd) + 1e-12))
    return worst
