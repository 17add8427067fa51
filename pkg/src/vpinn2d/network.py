"""Dense tanh network with exact input derivatives and parameter gradients.

Input-derivatives are carried as forward-mode tangent streams stacked next to
the values (``order=1``: d/dx, d/dy; ``order=2`` adds d2/dx2, d2/dy2). A
single hand-written reverse sweep over that fused computation yields the
gradient of any loss built from the evaluation, second derivatives of the
network included.

Parameter ordering (``ParameterVector``): for each layer, the weight matrix of
shape (fan_in, fan_out) flattened row-major, then its bias; trainable scalars
last in insertion order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError, MalformedFileError, NumericOverflowError

ACTIVATIONS = ("tanh", "sigmoid")
CHECKPOINT_MAGIC = b"VPNCKPT1"

# stream layout in the stacked forward arrays
STREAMS = {0: ("u",), 1: ("u", "du_dx", "du_dy"), 2: ("u", "du_dx", "du_dy", "d2u_dx2", "d2u_dy2")}


def _act(name, a, order):
    """Activation value and derivatives 1..order+1 (the extra one feeds backprop)."""
    if name == "tanh":
        t = np.tanh(a)
        s1 = 1.0 - t * t
        out = [t, s1]
        if order >= 1:
            s2 = -2.0 * t * s1
            out.append(s2)
        if order >= 2:
            out.append(-2.0 * s1 * s1 - 2.0 * t * s2)
        return out
    sg = 0.5 * (1.0 + np.tanh(0.5 * a))
    s1 = sg * (1.0 - sg)
    out = [sg, s1]
    if order >= 1:
        s2 = s1 * (1.0 - 2.0 * sg)
        out.append(s2)
    if order >= 2:
        out.append(s2 * (1.0 - 2.0 * sg) - 2.0 * s1 * s1)
    return out


def softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class NetworkEvaluation:
    """Per-point outputs. Also used for cotangents (same fields, d loss / d field)."""

    u: np.ndarray
    du_dx: Optional[np.ndarray] = None
    du_dy: Optional[np.ndarray] = None
    d2u_dx2: Optional[np.ndarray] = None
    d2u_dy2: Optional[np.ndarray] = None
    eps: Optional[np.ndarray] = None
    scalars: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.u)

    def slice(self, start, stop) -> "NetworkEvaluation":
        pick = lambda a: None if a is None else a[start:stop]
        return NetworkEvaluation(
            pick(self.u), pick(self.du_dx), pick(self.du_dy), pick(self.d2u_dx2),
            pick(self.d2u_dy2), pick(self.eps), dict(self.scalars),
        )

    @property
    def laplacian(self):
        return self.d2u_dx2 + self.d2u_dy2


class DenseNetwork:
    """Fully connected network, 2 inputs, 1 or 2 outputs.

    Output channel 0 is u. When present, channel 1 passes through softplus and
    is reported as ``eps`` (a positive, space-dependent coefficient).
    """

    def __init__(self, weights, biases, activation="tanh", scalars=None, dtype=np.float64):
        if activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"activation must be one of {ACTIVATIONS}")
        if len(weights) != len(biases) or not weights:
            raise InvalidArgumentError("need matching, non-empty weight and bias lists")
        self.dtype = np.dtype(dtype)
        self.weights = [np.array(w, dtype=self.dtype) for w in weights]
        self.biases = [np.array(b, dtype=self.dtype).reshape(-1) for b in biases]
        self.activation = activation
        self.scalars = {k: float(v) for k, v in (scalars or {}).items()}
        if self.weights[0].shape[0] != 2:
            raise InvalidArgumentError("network input size must be 2")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0] or (i and w.shape[0] != self.weights[i - 1].shape[1]):
                raise InvalidArgumentError(f"layer {i} shapes do not chain")
        if self.output_channels not in (1, 2):
            raise InvalidArgumentError("network must have 1 or 2 outputs")

    # -- layout --------------------------------------------------------------

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def output_channels(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases)) + len(self.scalars)

    def get_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        parts.append(np.array(list(self.scalars.values()), dtype=self.dtype))
        return np.concatenate(parts)

    def set_params(self, vec) -> None:
        vec = np.asarray(vec)
        if vec.shape != (self.n_params,):
            raise InvalidArgumentError(f"expected {self.n_params} parameters, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise NumericOverflowError("refusing non-finite parameters")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos : pos + w.size].reshape(w.shape).astype(self.dtype)
            pos += w.size
            self.biases[i] = vec[pos : pos + b.size].astype(self.dtype)
            pos += b.size
        for name in self.scalars:
            self.scalars[name] = float(vec[pos])
            pos += 1

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(self.weights, self.biases, self.activation, self.scalars, self.dtype)

    def astype(self, dtype) -> "DenseNetwork":
        return DenseNetwork(self.weights, self.biases, self.activation, self.scalars, dtype)

    # -- forward / reverse -----------------------------------------------------

    def _forward(self, points, order):
        x = np.asarray(points, dtype=self.dtype).reshape(-1, 2)
        n = len(x)
        ns = len(STREAMS[order])
        S = np.zeros((ns, n, 2), dtype=self.dtype)
        S[0] = x
        if order >= 1:
            S[1, :, 0] = 1.0
            S[2, :, 1] = 1.0
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            A = (S.reshape(-1, S.shape[-1]) @ w).reshape(ns, n, -1)
            A[0] += b
            if i == last:
                cache.append((S, None))
                S = A
                break
            d = _act(self.activation, A[0], order)
            H = np.empty_like(A)
            H[0] = d[0]
            if order >= 1:
                H[1] = d[1] * A[1]
                H[2] = d[1] * A[2]
            if order >= 2:
                H[3] = d[2] * A[1] * A[1] + d[1] * A[3]
                H[4] = d[2] * A[2] * A[2] + d[1] * A[4]
            cache.append((S, (A, d)))
            S = H
        return S, cache

    def _evaluation(self, out, order) -> NetworkEvaluation:
        names = STREAMS[order]
        ev = NetworkEvaluation(out[0, :, 0], scalars=dict(self.scalars))
        for s, name in enumerate(names[1:], start=1):
            setattr(ev, name, out[s, :, 0])
        if self.output_channels == 2:
            ev.eps = softplus(out[0, :, 1])
        return ev

    def forward(self, points, order: int = 1):
        """Evaluate and keep what the reverse sweep needs."""
        if order not in STREAMS:
            raise InvalidArgumentError("order must be 0, 1 or 2")
        with np.errstate(over="ignore", invalid="ignore"):
            out, cache = self._forward(points, order)
        if not np.all(np.isfinite(out)):
            raise NumericOverflowError("non-finite network output")
        return self._evaluation(out, order), (out, cache, order)

    def evaluate(self, points, order: int = 1) -> NetworkEvaluation:
        return self.forward(points, order)[0]

    def backward(self, state, cot: NetworkEvaluation) -> np.ndarray:
        """Gradient (ParameterVector layout) of a loss whose cotangent with
        respect to the evaluation fields is ``cot``."""
        out, cache, order = state
        names = STREAMS[order]
        G = np.zeros_like(out)
        for s, name in enumerate(names):
            c = getattr(cot, name)
            if c is not None:
                G[s, :, 0] = c
        if cot.eps is not None and self.output_channels == 2:
            G[0, :, 1] = cot.eps * _sigmoid(out[0, :, 1])

        ns = G.shape[0]
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            S_in, act = cache[i]
            if act is not None:
                A, d = act
                GA = np.empty_like(A)
                # reverse through H = act(A) with tangent streams
                if order >= 0:
                    GA[0] = G[0] * d[1]
                if order >= 1:
                    GA[0] += (G[1] * A[1] + G[2] * A[2]) * d[2]
                    GA[1] = G[1] * d[1]
                    GA[2] = G[2] * d[1]
                if order >= 2:
                    GA[0] += G[3] * (d[3] * A[1] * A[1] + d[2] * A[3])
                    GA[0] += G[4] * (d[3] * A[2] * A[2] + d[2] * A[4])
                    GA[1] += 2.0 * G[3] * d[2] * A[1]
                    GA[2] += 2.0 * G[4] * d[2] * A[2]
                    GA[3] = G[3] * d[1]
                    GA[4] = G[4] * d[1]
                G = GA
            w = self.weights[i]
            gw = S_in.reshape(-1, S_in.shape[-1]).T @ G.reshape(-1, G.shape[-1])
            gb = G[0].sum(axis=0)
            grads[i] = (gw, gb)
            if i:
                G = (G.reshape(-1, G.shape[-1]) @ w.T).reshape(ns, -1, w.shape[0])
        parts = []
        for gw, gb in grads:
            parts += [gw.ravel(), gb]
        parts.append(np.array([cot.scalars.get(k, 0.0) for k in self.scalars], dtype=self.dtype))
        return np.concatenate(parts)


LossEvaluator = Callable[[NetworkEvaluation], "tuple[float, NetworkEvaluation]"]


def loss_and_parameter_gradient(net: DenseNetwork, points, loss_evaluator: LossEvaluator, order: int = 1):
    """One forward pass over ``points`` and one reverse sweep.

    ``loss_evaluator(evaluation)`` returns ``(loss, cotangent)`` where the
    cotangent holds d loss / d field for each evaluation field it uses and
    d loss / d scalar in ``cotangent.scalars``.
    """
    ev, state = net.forward(points, order)
    loss, cot = loss_evaluator(ev)
    return float(loss), net.backward(state, cot)


def _concat_evaluations(parts) -> NetworkEvaluation:
    first = parts[0]
    cat = lambda name: None if getattr(first, name) is None else np.concatenate([getattr(p, name) for p in parts])
    return NetworkEvaluation(cat("u"), cat("du_dx"), cat("du_dy"), cat("d2u_dx2"), cat("d2u_dy2"), cat("eps"),
                             dict(first.scalars))


def chunked_loss_and_gradient(net: DenseNetwork, points, loss_evaluator, order: int = 1,
                              chunk_size: Optional[int] = 2048):
    """Like :func:`loss_and_parameter_gradient` but keeps the working set in
    cache: a forward-only sweep in chunks yields the loss and cotangent, then
    each chunk is re-run with caching and reversed, gradients summed in chunk
    order (deterministic). ``loss_evaluator`` may return extra items after
    ``(loss, cotangent)``; they are passed back along with the evaluation.

    Returns ``(loss, grad, evaluation, extras)``.
    """
    points = np.asarray(points, dtype=net.dtype).reshape(-1, 2)
    n = len(points)
    if not chunk_size or n <= chunk_size:
        ev, state = net.forward(points, order)
        loss, cot, *extras = loss_evaluator(ev)
        return loss, net.backward(state, cot), ev, extras
    bounds = [(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]
    ev = _concat_evaluations([net.evaluate(points[a:b], order) for a, b in bounds])
    loss, cot, *extras = loss_evaluator(ev)
    grad = None
    for i, (a, b) in enumerate(bounds):
        part = cot.slice(a, b)
        if i:
            part.scalars = {}  # scalar cotangents are not per point; count them once
        _, state = net.forward(points[a:b], order)
        g = net.backward(state, part)
        grad = g if grad is None else grad + g
    return loss, grad, ev, extras


def init_network(layer_sizes, seed: int = 0, output_channels: Optional[int] = None,
                 trainable_scalar_inits: Optional[dict] = None, activation: str = "tanh",
                 dtype=np.float64) -> DenseNetwork:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if output_channels is not None and sizes and sizes[-1] != output_channels:
        sizes = sizes[:-1] + [int(output_channels)]
    if len(sizes) < 3 or sizes[0] != 2 or min(sizes) < 1:
        raise InvalidArgumentError(f"need [2, hidden..., out] with >= 1 hidden layer, got {layer_sizes}")
    if sizes[-1] not in (1, 2):
        raise InvalidArgumentError("output size must be 1 or 2")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNetwork(weights, biases, activation, trainable_scalar_inits, dtype)


# -- checkpoints ---------------------------------------------------------------


def checkpoint_bytes(net: DenseNetwork) -> bytes:
    """Layout (all integers uint64 LE): magic, n_sizes, sizes..., activation
    index, n_scalars, then per scalar name length + UTF-8 name, then the
    ParameterVector as float64 LE."""
    buf = bytearray(CHECKPOINT_MAGIC)
    sizes = net.layer_sizes
    buf += struct.pack(f"<Q{len(sizes)}Q", len(sizes), *sizes)
    buf += struct.pack("<QQ", ACTIVATIONS.index(net.activation), len(net.scalars))
    for name in net.scalars:
        raw = name.encode("utf-8")
        buf += struct.pack("<Q", len(raw)) + raw
    buf += np.asarray(net.get_params(), dtype="<f8").tobytes()
    return bytes(buf)


def save_checkpoint(net: DenseNetwork, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def load_checkpoint(path) -> DenseNetwork:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise MalformedFileError(f"{path}: not a checkpoint")
    try:
        pos = 8
        (n,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        sizes = struct.unpack_from(f"<{n}Q", data, pos)
        pos += 8 * n
        act, n_scalars = struct.unpack_from("<QQ", data, pos)
        pos += 16
        names = []
        for _ in range(n_scalars):
            (ln,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            names.append(data[pos : pos + ln].decode("utf-8"))
            pos += ln
        params = np.frombuffer(data, dtype="<f8", offset=pos)
    except struct.error as exc:
        raise MalformedFileError(f"{path}: truncated checkpoint") from exc
    weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    net = DenseNetwork(weights, biases, ACTIVATIONS[act], {k: 0.0 for k in names})
    if len(params) != net.n_params:
        raise MalformedFileError(f"{path}: parameter count mismatch")
    net.set_params(params.astype(np.float64))
    return net
