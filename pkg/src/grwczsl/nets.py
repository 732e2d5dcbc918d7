"""Two-layer networks with hand-written reverse mode, Adam, and checkpoints.

Both the generator and the discriminator are ``TwoLayerNet`` instances::

    out = act2(act1(X @ W1 + b1) @ W2 + b2)

A :class:`GradTape` caches one forward pass and accumulates parameter
gradients across any number of backward passes until an optimizer step
consumes and zeroes them.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np

from .exceptions import InvalidInputError, ShapeError, StateError

PARAM_NAMES = ("W1", "b1", "W2", "b2")

CHECKPOINT_MAGIC = b"GRWN"
CHECKPOINT_VERSION = 1


class TwoLayerNet:
    """Affine, LeakyReLU, affine.

    Parameters
    ----------
    n_in, n_hidden, n_out : int
        Layer widths.
    rng : numpy.random.Generator, optional
        Source for the uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init.
        When omitted all parameters start at zero.
    slope : float
        Negative slope of the hidden LeakyReLU.
    output_activation : {"identity", "relu"}
    """

    def __init__(self, n_in, n_hidden, n_out, rng=None, slope=0.2,
                 output_activation="identity"):
        if min(n_in, n_hidden, n_out) < 1:
            raise ShapeError("layer widths must be positive")
        if output_activation not in ("identity", "relu"):
            raise InvalidInputError(f"unknown output activation {output_activation!r}")
        self.slope = float(slope)
        self.output_activation = output_activation
        if rng is None:
            self.W1 = np.zeros((n_in, n_hidden))
            self.b1 = np.zeros(n_hidden)
            self.W2 = np.zeros((n_hidden, n_out))
            self.b2 = np.zeros(n_out)
        else:
            k1 = 1.0 / np.sqrt(n_in)
            k2 = 1.0 / np.sqrt(n_hidden)
            self.W1 = rng.uniform(-k1, k1, size=(n_in, n_hidden))
            self.b1 = rng.uniform(-k1, k1, size=n_hidden)
            self.W2 = rng.uniform(-k2, k2, size=(n_hidden, n_out))
            self.b2 = rng.uniform(-k2, k2, size=n_out)

    @property
    def n_in(self):
        return self.W1.shape[0]

    @property
    def n_hidden(self):
        return self.W1.shape[1]

    @property
    def n_out(self):
        return self.W2.shape[1]

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "TwoLayerNet":
        other = TwoLayerNet.__new__(TwoLayerNet)
        other.slope = self.slope
        other.output_activation = self.output_activation
        for name in PARAM_NAMES:
            setattr(other, name, getattr(self, name).copy())
        return other

    def check_shapes(self):
        if not (self.W1.shape[1] == self.b1.shape[0] == self.W2.shape[0]
                and self.W2.shape[1] == self.b2.shape[0]):
            raise ShapeError("inconsistent parameter shapes")

    def __call__(self, X, tape=None):
        return forward(self, X, tape)


@dataclass
class GradTape:
    """Forward cache plus gradient accumulators for one network."""

    cache: Optional[dict] = None
    grads: Dict[str, np.ndarray] = field(default_factory=dict)

    def zero(self, net: TwoLayerNet):
        self.grads = {k: np.zeros_like(v) for k, v in net.params().items()}

    def ensure(self, net: TwoLayerNet):
        if not self.grads:
            self.zero(net)


def _leaky(h, slope):
    return np.where(h > 0, h, slope * h)


def forward(net: TwoLayerNet, X, tape: Optional[GradTape] = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.n_in:
        raise ShapeError(f"input shape {X.shape} does not match net input width {net.n_in}")
    h = X @ net.W1 + net.b1
    a = _leaky(h, net.slope)
    o = a @ net.W2 + net.b2
    out = np.maximum(o, 0.0) if net.output_activation == "relu" else o
    if tape is not None:
        tape.cache = {"X": X, "h": h, "a": a, "o": o}
        tape.ensure(net)
    return out


def backward(net: TwoLayerNet, tape: GradTape, upstream) -> np.ndarray:
    """Accumulate parameter gradients into ``tape`` and return ``dL/dX``."""
    if tape.cache is None:
        raise StateError("backward called before forward populated the tape")
    c = tape.cache
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != c["o"].shape:
        raise ShapeError(f"upstream shape {g.shape} != output shape {c['o'].shape}")
    tape.ensure(net)
    if net.output_activation == "relu":
        g = g * (c["o"] > 0)
    tape.grads["W2"] += c["a"].T @ g
    tape.grads["b2"] += g.sum(axis=0)
    da = g @ net.W2.T
    dh = da * np.where(c["h"] > 0, 1.0, net.slope)
    tape.grads["W1"] += c["X"].T @ dh
    tape.grads["b1"] += dh.sum(axis=0)
    return dh @ net.W1.T


class AdamState:
    """Adam with bias correction and decoupled weight decay.

    Works on any ``{name: array}`` mapping, so the same class drives the
    networks and the attribute dictionary.
    """

    def __init__(self, lr=0.005, weight_decay=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def update(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        """Update ``params`` in place."""
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(net: TwoLayerNet, tape: GradTape, state: AdamState):
    tape.ensure(net)
    state.update(net.params(), tape.grads)
    tape.zero(net)


def finite_diff_check(loss_fn: Callable[[TwoLayerNet], tuple], net: TwoLayerNet, h=1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn(net)`` returns ``(loss, grads)`` where ``grads`` maps parameter
    names to analytic gradients at the net's current parameters. Parameters
    are perturbed in place and restored afterwards.
    """
    _, analytic = loss_fn(net)
    analytic = {k: np.array(v, copy=True) for k, v in analytic.items()}
    worst = 0.0
    for name, p in net.params().items():
        num = numeric_grad(lambda: loss_fn(net)[0], p, h)
        worst = max(worst, relative_error(analytic[name], num))
    return worst


def relative_error(analytic, numeric) -> float:
    """Max elementwise relative error, denominator ``max(|a|, |n|, 1e-8)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def numeric_grad(f: Callable[[], float], x: np.ndarray, h=1e-5) -> np.ndarray:
    """Central-difference gradient of ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


# Checkpoint layout (all little-endian):
#   magic "GRWN" | u32 version | u32 W1 rows | u32 W1 cols | u32 W2 rows | u32 W2 cols
#   | W1 f64[rows*cols] row-major | b1 f64[W1 cols] | W2 f64[...] | b2 f64[W2 cols]
_HEADER = struct.Struct("<4sIIIII")


def to_bytes(net: TwoLayerNet) -> bytes:
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, *net.W1.shape, *net.W2.shape)
    body = b"".join(np.ascontiguousarray(getattr(net, n), dtype="<f8").tobytes()
                    for n in PARAM_NAMES)
    return header + body


def from_bytes(blob: bytes, slope=0.2, output_activation="identity") -> TwoLayerNet:
    if len(blob) < _HEADER.size:
        raise InvalidInputError("checkpoint truncated")
    magic, version, r1, c1, r2, c2 = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    if c1 != r2:
        raise ShapeError("checkpoint hidden widths disagree")
    sizes = [r1 * c1, c1, r2 * c2, c2]
    expected = _HEADER.size + 8 * sum(sizes)
    if len(blob) != expected:
        raise InvalidInputError(f"checkpoint has {len(blob)} bytes, expected {expected}")
    net = TwoLayerNet(r1, c1, c2, slope=slope, output_activation=output_activation)
    off = _HEADER.size
    for name, n, shape in zip(PARAM_NAMES, sizes, [(r1, c1), (c1,), (r2, c2), (c2,)]):
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64)
        setattr(net, name, arr.reshape(shape))
        off += 8 * n
    return net


def save_checkpoint(net: TwoLayerNet, path):
    Path(path).write_bytes(to_bytes(net))


def load_checkpoint(path, **kwargs) -> TwoLayerNet:
    return from_bytes(Path(path).read_bytes(), **kwargs)
