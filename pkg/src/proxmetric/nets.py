"""ReLU MLPs for the metric predictor and warm-start estimator, plus checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .qp import SlackQp
from .solvers import Metric

MAGIC = b"PROXMETRIC1\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Mlp:
    """Fully connected net: affine + ReLU on hidden layers, affine output.

    Weights are stored ``(fan_in, fan_out)`` so a batch ``(B, fan_in)`` maps
    through ``p @ W + b``.
    """

    sizes: list
    weights: list = field(default_factory=list, repr=False)
    biases: list = field(default_factory=list, repr=False)
    seed: int = 0

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {self.sizes}")
        if not self.weights:
            self.weights = [np.zeros((a, b)) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
            self.biases = [np.zeros(b) for b in self.sizes[1:]]
        for W, b, a, o in zip(self.weights, self.biases, self.sizes[:-1], self.sizes[1:]):
            if W.shape != (a, o) or b.shape != (o,):
                raise ValueError("parameter shapes do not match layer sizes")

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    def parameters(self):
        """Flat list in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_parameters(self, params):
        self.weights = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]

    def on_tape(self, tape):
        """Register every parameter as a leaf on ``tape``."""
        return [tape.param(p) for p in self.parameters()]

    def fingerprint(self):
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self):
        return Mlp(list(self.sizes), [W.copy() for W in self.weights],
                   [b.copy() for b in self.biases], self.seed)


def init_weights(net: Mlp, seed: int) -> Mlp:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((a, b)) * np.sqrt(2.0 / a)
               for a, b in zip(net.sizes[:-1], net.sizes[1:])]
    biases = [np.zeros(b) for b in net.sizes[1:]]
    return Mlp(list(net.sizes), weights, biases, seed)


def mlp_forward(net: Mlp, p, params=None) -> ad.Tensor:
    """Evaluate the net on ``p`` of shape ``(v,)`` or ``(B, v)``.

    ``params`` are the tape leaves from :meth:`Mlp.on_tape`; without them
    the parameters enter as constants.
    """
    p = ad.as_tensor(p)
    if p.shape[-1] != net.n_in:
        raise ValueError(f"input length {p.shape[-1]} does not match layer size {net.n_in}")
    if params is None:
        params = net.parameters()
    squeeze = p.ndim == 1
    h = p[None, :] if squeeze else p
    n_layers = len(net.weights)
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, params[2 * i]), params[2 * i + 1])
        if i < n_layers - 1:
            h = ad.relu_clamp(h)
    return h[0] if squeeze else h


@dataclass(frozen=True)
class MetricHead:
    m_min: float = 0.2
    m_max: float = 5.0
    rho_min: float = 0.05
    rho_max: float = 1.0

    def __post_init__(self):
        if not (0 < self.m_min < self.m_max and 0 < self.rho_min < self.rho_max):
            raise ValueError(f"head bounds must satisfy 0 < min < max: {self}")


def metric_forward(net: Mlp, head: MetricHead, p, params=None) -> Metric:
    """Map parameters to ``Metric(m, rho)``; the last net output is the rho logit."""
    out = mlp_forward(net, p, params)
    d = net.n_out - 1
    m = ad.sigmoid_scale(out[..., :d], head.m_min, head.m_max)
    rho = ad.sigmoid_scale(out[..., d:], head.rho_min, head.rho_max)
    return Metric(m, rho)


def estimator_forward(net: Mlp, p, sq: SlackQp, params=None) -> ad.Tensor:
    """Warm start ``z0``: x-part from the net, slack part exactly zero."""
    if net.n_out != sq.n_orig:
        raise ValueError(f"estimator emits {net.n_out} values, problem has {sq.n_orig} variables")
    x = mlp_forward(net, p, params)
    zeros = np.zeros(x.shape[:-1] + (sq.k_in,))
    return ad.concat([x, zeros], axis=-1)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


class Sgd:
    def __init__(self, params, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        return [p - self.lr * g for p, g in zip(params, grads)]


# --- checkpoints ---------------------------------------------------------

def save_checkpoint(net: Mlp, head: MetricHead | None, path, extra=None):
    """Write magic line, one JSON header line, then little-endian f64 blocks."""
    header = {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": net.sizes,
        "seed": int(net.seed),
        "head": None if head is None else {
            "m_min": head.m_min, "m_max": head.m_max,
            "rho_min": head.rho_min, "rho_max": head.rho_max},
        "n_params": int(sum(p.size for p in net.parameters())),
    }
    if extra:
        header["extra"] = extra
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.parameters())
    path = Path(path)
    path.write_bytes(MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + body)


def load_checkpoint(path):
    """Return ``(net, head, header)``; raises :class:`CheckpointError` on any schema problem."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(rest[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')!r}, "
                              f"expected {CHECKPOINT_VERSION}")
    try:
        sizes = [int(s) for s in header["layer_sizes"]]
        n_params = int(header["n_params"])
    except (KeyError, TypeError, ValueError):
        raise CheckpointError(f"{path}: header missing layer sizes") from None
    body = rest[nl + 1:]
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if n_params != expected or len(body) != 8 * expected:
        raise CheckpointError(f"{path}: parameter block has {len(body)} bytes, expected {8 * expected}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    params, off = [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        params.append(flat[off:off + a * b].reshape(a, b))
        off += a * b
        params.append(flat[off:off + b].copy())
        off += b
    net = Mlp(sizes, params[0::2], params[1::2], int(header.get("seed", 0)))
    h = header.get("head")
    head = None if h is None else MetricHead(h["m_min"], h["m_max"], h["rho_min"], h["rho_max"])
    return net, head, header
