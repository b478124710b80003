"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

A ``Tape`` records every op applied to tracked tensors, in execution order.
``backward`` replays the records in reverse and returns one gradient per
registered parameter. Ops applied to untracked tensors run as plain numpy
with no recording, so the same model code serves both training and
inference.

The op catalog is exactly what the graph layers and losses need: matmul /
linear, broadcast arithmetic, concat, the activations, segment reductions
keyed by integer ids, dropout, gather, slice and reshape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import NumericError


class ShapeError(ValueError):
    """Operand shapes do not conform to the op's shape rule."""


class UnknownOpError(ValueError):
    """Op kind is not in the catalog."""


class Tensor:
    """A float64 array, optionally tracked on a tape.

    ``uid`` is -1 for untracked tensors (constants); tracked tensors carry
    the id the tape assigned at creation.
    """

    __slots__ = ("data", "tape", "uid")

    def __init__(self, data, tape: Optional["Tape"] = None, uid: int = -1):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.uid = uid

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", uid={self.uid}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Arithmetic sugar; scalars and arrays are lifted to constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    kind: str
    inputs: tuple[Tensor, ...]
    out_uid: int
    vjp: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered op records plus the parameter registry for one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []
        self.params: dict[str, Tensor] = {}
        self._next_uid = 0

    def _new_uid(self) -> int:
        uid = self._next_uid
        self._next_uid += 1
        return uid

    def track(self, data) -> Tensor:
        """Create a tracked leaf without registering it as a parameter."""
        return Tensor(data, tape=self, uid=self._new_uid())

    def parameter(self, name: str, data) -> Tensor:
        """Register a named leaf whose gradient ``backward`` will report."""
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        t = self.track(data)
        self.params[name] = t
        return t


def _result_tape(inputs: Sequence[Tensor]) -> Optional[Tape]:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("inputs tracked on different tapes")
            tape = t.tape
    return tape


def _emit(kind: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
          vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    tape = _result_tape(inputs)
    if tape is None:
        return Tensor(out_data)
    out = tape.track(out_data)
    tape.records.append(_Record(kind, inputs, out.uid, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to ``shape``, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# op catalog


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit("add", (a, b), out, vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit("sub", (a, b), out, vjp)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _emit("mul", (a, b), out, vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _emit("div", (a, b), out, vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _emit("matmul", (a, b), out, vjp)


def linear(x, w) -> Tensor:
    """x @ w.T for a weight stored math-style as (d_out, d_in)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear: x {x.data.shape} with weight {w.data.shape}")
    out = x.data @ w.data.T

    def vjp(g):
        return g @ w.data, g.T @ x.data

    return _emit("linear", (x, w), out, vjp)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(p) for p in parts)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(ts)))

    return _emit("concat", ts, out, vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def vjp(g):
        return (g * (x.data > 0.0),)

    return _emit("relu", (x,), out, vjp)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    out = np.where(x.data > 0.0, x.data, slope * x.data)

    def vjp(g):
        return (g * np.where(x.data > 0.0, 1.0, slope),)

    return _emit("leaky_relu", (x,), out, vjp)


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(x.data > 0.0, x.data, neg)

    def vjp(g):
        return (g * np.where(x.data > 0.0, 1.0, neg + alpha),)

    return _emit("elu", (x,), out, vjp)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # computed branch-wise so neither tail overflows
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", (x,), out, vjp)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return _emit("exp", (x,), out, vjp)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return _emit("log", (x,), out, vjp)


def softplus(x) -> Tensor:
    """log(1 + e^x) in the overflow-safe form max(x,0) + log1p(e^-|x|)."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def vjp(g):
        s = np.empty_like(x.data)
        pos = x.data >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
        e = np.exp(x.data[~pos])
        s[~pos] = e / (1.0 + e)
        return (g * s,)

    return _emit("softplus", (x,), out, vjp)


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor); gradient is zero on the clamped region."""
    x = as_tensor(x)
    out = np.maximum(x.data, floor)

    def vjp(g):
        return (g * (x.data > floor),)

    return _emit("clip_min", (x,), out, vjp)


def tsum(x) -> Tensor:
    """Full reduction to a scalar."""
    x = as_tensor(x)
    out = np.asarray(x.data.sum())

    def vjp(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _emit("sum", (x,), out, vjp)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return _emit("reshape", (x,), out, vjp)


def slice1d(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"slice1d expects a vector, got {x.data.shape}")
    out = x.data[start:stop].copy()

    def vjp(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _emit("slice", (x,), out, vjp)


def gather_rows(x, index: np.ndarray) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    out = x.data[index]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit("gather_rows", (x,), out, vjp)


def _check_segments(segments: np.ndarray, n_segments: int) -> np.ndarray:
    segments = np.asarray(segments, dtype=np.int64)
    if segments.size and (segments.min() < 0 or segments.max() >= n_segments):
        raise ShapeError(
            f"segment ids must lie in [0, {n_segments}), got range "
            f"[{segments.min()}, {segments.max()}]")
    return segments


def segment_sum(x, segments: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of x into n_segments buckets keyed by ``segments``."""
    x = as_tensor(x)
    segments = _check_segments(segments, n_segments)
    if segments.shape[0] != x.data.shape[0]:
        raise ShapeError(
            f"segment_sum: {x.data.shape[0]} rows vs {segments.shape[0]} ids")
    out = np.zeros((n_segments,) + x.data.shape[1:], dtype=np.float64)
    np.add.at(out, segments, x.data)

    def vjp(g):
        return (g[segments],)

    return _emit("segment_sum", (x,), out, vjp)


def segment_softmax(x, segments: np.ndarray, n_segments: int) -> Tensor:
    """Softmax over the rows of each segment, per column, max-shifted.

    Empty segments simply contribute no rows; softmax over an empty set is
    the empty set.
    """
    x = as_tensor(x)
    segments = _check_segments(segments, n_segments)
    if segments.shape[0] != x.data.shape[0]:
        raise ShapeError(
            f"segment_softmax: {x.data.shape[0]} rows vs {segments.shape[0]} ids")
    tail = x.data.shape[1:]
    peak = np.full((n_segments,) + tail, -np.inf)
    np.maximum.at(peak, segments, x.data)
    shifted = np.exp(x.data - peak[segments])
    denom = np.zeros((n_segments,) + tail, dtype=np.float64)
    np.add.at(denom, segments, shifted)
    out = shifted / denom[segments]

    def vjp(g):
        dot = np.zeros((n_segments,) + tail, dtype=np.float64)
        np.add.at(dot, segments, g * out)
        return (out * (g - dot[segments]),)

    return _emit("segment_softmax", (x,), out, vjp)


def dropout(x, p: float, rng: np.random.Generator,
            mask: Optional[np.ndarray] = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at apply time.

    A caller-supplied mask overrides the rng draw (tests fix masks by hand).
    """
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    if mask is None:
        mask = (rng.random(x.data.shape) >= p).astype(np.float64)
    scale = 1.0 / (1.0 - p)
    out = x.data * mask * scale

    def vjp(g):
        return (g * mask * scale,)

    return _emit("dropout", (x,), out, vjp)


OP_TABLE: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "linear": linear,
    "concat": concat,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "elu": elu,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "softplus": softplus,
    "clip_min": clip_min,
    "sum": tsum,
    "reshape": reshape,
    "slice": slice1d,
    "gather_rows": gather_rows,
    "segment_sum": segment_sum,
    "segment_softmax": segment_softmax,
    "dropout": dropout,
}


def forward_op(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Dispatch one op by kind. Unknown kinds are rejected."""
    fn = OP_TABLE.get(kind)
    if fn is None:
        raise UnknownOpError(f"unknown op kind {kind!r}")
    if kind == "concat":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# backward and checking


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss w.r.t. every registered parameter.

    Parameters with no path to the loss get zero gradients of their own
    shape. The records are replayed in reverse execution order, so two
    passes over one tape produce identical results.
    """
    if loss.tape is not tape or loss.uid < 0:
        raise ValueError("loss was not produced on this tape")
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    partial: dict[int, np.ndarray] = {loss.uid: np.asarray(1.0)}
    for rec in reversed(tape.records):
        g = partial.get(rec.out_uid)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.vjp(g)):
            if t.uid < 0 or gi is None:
                continue
            acc = partial.get(t.uid)
            partial[t.uid] = gi if acc is None else acc + gi
    return {
        name: partial.get(p.uid, np.zeros_like(p.data))
        for name, p in tape.params.items()
    }


def finite_diff_grad(f: Callable[[np.ndarray], float], params: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    f must be deterministic; a repeated-evaluation mismatch is rejected so
    un-frozen dropout or noise cannot silently corrupt a check.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = np.asarray(params, dtype=np.float64)
    if f(params) != f(params):
        raise ValueError("f is not deterministic; freeze masks and noise")
    grad = np.zeros_like(params)
    probe = params.copy()
    for i in range(params.size):
        orig = probe[i]
        probe[i] = orig + h
        hi = f(probe)
        probe[i] = orig - h
        lo = f(probe)
        probe[i] = orig
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    """SGD or Adam over one flat parameter vector.

    Weight decay enters as gradient addition g + wd*w for both modes.
    """

    mode: str
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


def optimizer_step(state: OptimizerState, params: np.ndarray,
                   grads: np.ndarray) -> np.ndarray:
    """One update; returns the new flat vector, mutating only accumulators."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ShapeError(f"grads {grads.shape} vs params {params.shape}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise NumericError(f"non-finite gradient at flat coordinate {bad}")
    g = grads + state.weight_decay * params
    state.step_count += 1
    if state.mode == "sgd":
        return params - state.lr * g
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step_count)
    v_hat = state.v / (1.0 - state.beta2 ** state.step_count)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
