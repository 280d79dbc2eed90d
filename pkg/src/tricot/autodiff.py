"""Reverse-mode autodiff on a flat tape of primitive applications.

Everything is float64.  A Tensor is a numpy array plus an optional (tape,
node) handle; applying a primitive to any tracked tensor appends a record to
that tensor's tape, and ``backpropagate`` sweeps the tape once in reverse.
Constants are plain untracked Tensors and flow through every primitive
without being recorded.

The primitive catalog is fixed: unknown kinds, shape mismatches, domain
violations (log of non-positives, zero-norm rows) and non-finite forward
results all raise typed errors instead of propagating garbage.

EXAMPLE
    tape = Tape()
    w = tape.leaf(np.ones((3, 2)))
    y = matmul(Tensor(np.ones((1, 3))), w)
    loss = mean_reduce(y)
    grads = backpropagate(tape, loss)
    gw = grads[w.node]          # (3, 2) array of 0.5
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import kernels


class AutodiffError(Exception):
    """Base class for engine errors."""


class UnknownPrimitiveError(AutodiffError):
    pass


class ShapeError(AutodiffError):
    pass


class DomainError(AutodiffError):
    pass


class NonFiniteError(AutodiffError):
    pass


class Tensor:
    """A float64 array, optionally tracked as node ``node`` on ``tape``."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return subtract(self, as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __repr__(self):
        tag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeRecord:
    kind: str
    input_nodes: tuple  # node id per input, None for untracked
    input_values: tuple  # forward values, kept for the backward pass
    output: np.ndarray
    attrs: dict
    saved: Any


@dataclass
class Tape:
    """Ordered record of primitive applications; node id == record index."""

    records: list = field(default_factory=list)

    def leaf(self, data) -> Tensor:
        """Register a differentiable input and return its tracked Tensor."""
        arr = np.asarray(data, dtype=np.float64)
        self.records.append(TapeRecord("leaf", (), (), arr, {}, None))
        return Tensor(arr, self, len(self.records) - 1)

    def _record(self, kind, input_nodes, input_values, output, attrs, saved) -> int:
        self.records.append(
            TapeRecord(kind, tuple(input_nodes), tuple(input_values), output, attrs, saved))
        return len(self.records) - 1

    def __len__(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# primitive catalog: kind -> (forward, backward)
#
# forward(values, attrs) -> (out, saved)
# backward(grad_out, values, out, saved, attrs) -> [grad per input or None]
# ---------------------------------------------------------------------------

PRIMITIVES: dict[str, tuple[Callable, Callable]] = {}


def _register(kind: str, n_inputs):
    def deco(pair):
        fwd, bwd = pair()
        PRIMITIVES[kind] = (fwd, bwd, n_inputs)
        return pair
    return deco


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach grad's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


@_register("add", 2)
def _add():
    def fwd(vals, attrs):
        return vals[0] + vals[1], None

    def bwd(g, vals, out, saved, attrs):
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]
    return fwd, bwd


@_register("subtract", 2)
def _subtract():
    def fwd(vals, attrs):
        return vals[0] - vals[1], None

    def bwd(g, vals, out, saved, attrs):
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)]
    return fwd, bwd


@_register("elementwise-multiply", 2)
def _multiply():
    def fwd(vals, attrs):
        return vals[0] * vals[1], None

    def bwd(g, vals, out, saved, attrs):
        return [_unbroadcast(g * vals[1], vals[0].shape),
                _unbroadcast(g * vals[0], vals[1].shape)]
    return fwd, bwd


@_register("scalar-scale", 1)
def _scale():
    def fwd(vals, attrs):
        return vals[0] * float(attrs["value"]), None

    def bwd(g, vals, out, saved, attrs):
        return [g * float(attrs["value"])]
    return fwd, bwd


@_register("matmul", 2)
def _matmul():
    def fwd(vals, attrs):
        a, b = vals
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
        return a @ b, None

    def bwd(g, vals, out, saved, attrs):
        a, b = vals
        ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
        return [ga, gb]
    return fwd, bwd


@_register("transpose", 1)
def _transpose():
    def fwd(vals, attrs):
        x = vals[0]
        axes = attrs.get("axes")
        if axes is None:
            if x.ndim < 2:
                raise ShapeError("transpose needs rank >= 2")
            axes = list(range(x.ndim))
            axes[-1], axes[-2] = axes[-2], axes[-1]
            axes = tuple(axes)
        return np.transpose(x, axes).copy(), axes

    def bwd(g, vals, out, saved, attrs):
        inv = np.argsort(np.asarray(saved))
        return [np.transpose(g, inv)]
    return fwd, bwd


@_register("exp", 1)
def _exp():
    def fwd(vals, attrs):
        return np.exp(vals[0]), None

    def bwd(g, vals, out, saved, attrs):
        return [g * out]
    return fwd, bwd


@_register("log", 1)
def _log():
    def fwd(vals, attrs):
        x = vals[0]
        if np.any(x <= 0.0):
            raise DomainError("log of non-positive input")
        return np.log(x), None

    def bwd(g, vals, out, saved, attrs):
        return [g / vals[0]]
    return fwd, bwd


@_register("sigmoid", 1)
def _sigmoid():
    def fwd(vals, attrs):
        x = vals[0]
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, None

    def bwd(g, vals, out, saved, attrs):
        return [g * out * (1.0 - out)]
    return fwd, bwd


@_register("relu", 1)
def _relu():
    def fwd(vals, attrs):
        return np.maximum(vals[0], 0.0), None

    def bwd(g, vals, out, saved, attrs):
        return [g * (vals[0] > 0.0)]
    return fwd, bwd


@_register("row-softmax", 1)
def _softmax():
    def fwd(vals, attrs):
        x = vals[0]
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True), None

    def bwd(g, vals, out, saved, attrs):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return [out * (g - dot)]
    return fwd, bwd


@_register("row-l2-normalize", 1)
def _l2norm():
    def fwd(vals, attrs):
        x = vals[0]
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            raise DomainError("l2-normalize of zero-norm row")
        return x / norms, norms

    def bwd(g, vals, out, saved, attrs):
        norms = saved
        dot = (g * out).sum(axis=-1, keepdims=True)
        return [(g - out * dot) / norms]
    return fwd, bwd


@_register("row-layer-norm", 1)
def _layernorm():
    def fwd(vals, attrs):
        x = vals[0]
        eps = float(attrs.get("eps", 1e-5))
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        return xhat, (xhat, inv)

    def bwd(g, vals, out, saved, attrs):
        xhat, inv = saved
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return [(g - gm - xhat * gx) * inv]
    return fwd, bwd


@_register("concat", None)
def _concat():
    def fwd(vals, attrs):
        axis = int(attrs.get("axis", 0))
        return np.concatenate(vals, axis=axis), None

    def bwd(g, vals, out, saved, attrs):
        axis = int(attrs.get("axis", 0))
        sizes = [v.shape[axis] for v in vals]
        splits = np.cumsum(sizes)[:-1]
        return list(np.split(g, splits, axis=axis))
    return fwd, bwd


@_register("slice", 1)
def _slice():
    def fwd(vals, attrs):
        x = vals[0]
        starts, stops = attrs["starts"], attrs["stops"]
        if len(starts) != x.ndim or len(stops) != x.ndim:
            raise ShapeError("slice starts/stops must cover every axis")
        idx = tuple(slice(a, b) for a, b in zip(starts, stops))
        return x[idx].copy(), idx

    def bwd(g, vals, out, saved, attrs):
        gx = np.zeros_like(vals[0])
        gx[saved] = g
        return [gx]
    return fwd, bwd


@_register("masked-mean-pool-1d", 1)
def _pool():
    def fwd(vals, attrs):
        x = vals[0]
        stride = int(attrs["stride"])
        mask = np.asarray(attrs["mask"], dtype=np.bool_)
        if x.ndim != 3:
            raise ShapeError(f"pooling expects (B,T,C), got {x.shape}")
        if stride < 1:
            raise ShapeError("pooling stride must be >= 1")
        if x.shape[0] != mask.shape[0] or x.shape[1] != mask.shape[1]:
            raise ShapeError(f"mask shape {mask.shape} does not match input {x.shape}")
        if x.shape[1] < stride:
            raise ShapeError(f"sequence length {x.shape[1]} shorter than stride {stride}")
        out, counts, src = kernels.masked_mean_pool_fwd(x, mask, stride)
        return out, (counts, src, mask, stride)

    def bwd(g, vals, out, saved, attrs):
        counts, src, mask, stride = saved
        return [kernels.masked_mean_pool_bwd(g, mask, stride, counts, src, vals[0].shape[1])]
    return fwd, bwd


@_register("linear-interp-upsample-1d", 1)
def _upsample():
    def fwd(vals, attrs):
        x = vals[0]
        length = int(attrs["length"])
        if x.ndim != 3:
            raise ShapeError(f"upsampling expects (B,L,C), got {x.shape}")
        if length < 1:
            raise ShapeError("target length must be >= 1")
        return kernels.linear_upsample_fwd(x, length), None

    def bwd(g, vals, out, saved, attrs):
        return [kernels.linear_upsample_bwd(g, vals[0].shape[1])]
    return fwd, bwd


@_register("scaled-dot-attention", 3)
def _attention():
    def _split(x, h):
        b, t, d = x.shape
        return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)

    def _merge(x):
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def fwd(vals, attrs):
        q, k, v = vals
        h = int(attrs["heads"])
        if q.ndim != 3 or q.shape != k.shape or q.shape != v.shape:
            raise ShapeError(f"attention expects equal (B,T,D) inputs, got {q.shape}/{k.shape}/{v.shape}")
        if q.shape[-1] % h != 0:
            raise ShapeError(f"model dim {q.shape[-1]} not divisible by {h} heads")
        qh, kh, vh = _split(q, h), _split(k, h), _split(v, h)
        scores = qh @ np.swapaxes(kh, -1, -2) / np.sqrt(qh.shape[-1])
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        out = _merge(attn @ vh)
        return out, (qh, kh, vh, attn)

    def bwd(g, vals, out, saved, attrs):
        h = int(attrs["heads"])
        qh, kh, vh, attn = saved
        scale_ = 1.0 / np.sqrt(qh.shape[-1])
        gh = _split(g, h)
        gv = np.swapaxes(attn, -1, -2) @ gh
        gattn = gh @ np.swapaxes(vh, -1, -2)
        dot = (gattn * attn).sum(axis=-1, keepdims=True)
        gscores = attn * (gattn - dot)
        gq = gscores @ kh * scale_
        gk = np.swapaxes(gscores, -1, -2) @ qh * scale_
        return [_merge(gq), _merge(gk), _merge(gv)]
    return fwd, bwd


@_register("dropout", 1)
def _dropout():
    def fwd(vals, attrs):
        x = vals[0]
        rate = float(attrs["rate"])
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"dropout rate must be in [0,1), got {rate}")
        if not attrs.get("train", True) or rate == 0.0:
            return x.copy(), None
        rng = attrs["rng"]
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * mask, mask

    def bwd(g, vals, out, saved, attrs):
        if saved is None:
            return [g]
        return [g * saved]
    return fwd, bwd


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


@_register("sum-reduce", 1)
def _sum():
    def fwd(vals, attrs):
        axis = attrs.get("axis")
        keepdims = bool(attrs.get("keepdims", False))
        return np.sum(vals[0], axis=axis if axis is None else tuple(np.atleast_1d(axis)),
                      keepdims=keepdims), None

    def bwd(g, vals, out, saved, attrs):
        x = vals[0]
        axes = _axis_tuple(attrs.get("axis"), x.ndim)
        if not bool(attrs.get("keepdims", False)):
            g = np.expand_dims(g, axes)
        return [np.broadcast_to(g, x.shape).copy()]
    return fwd, bwd


@_register("mean-reduce", 1)
def _mean():
    def fwd(vals, attrs):
        axis = attrs.get("axis")
        keepdims = bool(attrs.get("keepdims", False))
        return np.mean(vals[0], axis=axis if axis is None else tuple(np.atleast_1d(axis)),
                       keepdims=keepdims), None

    def bwd(g, vals, out, saved, attrs):
        x = vals[0]
        axes = _axis_tuple(attrs.get("axis"), x.ndim)
        count = 1
        for a in axes:
            count *= x.shape[a]
        if not bool(attrs.get("keepdims", False)):
            g = np.expand_dims(g, axes)
        return [np.broadcast_to(g / count, x.shape).copy()]
    return fwd, bwd


def apply_primitive(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Run a catalog primitive, recording it when any input is tracked."""
    if kind not in PRIMITIVES:
        raise UnknownPrimitiveError(f"unknown primitive {kind!r}")
    fwd, _, n_inputs = PRIMITIVES[kind]
    inputs = [as_tensor(t) for t in inputs]
    if n_inputs is not None and len(inputs) != n_inputs:
        raise ShapeError(f"{kind} expects {n_inputs} inputs, got {len(inputs)}")
    attrs = attrs or {}

    tape = None
    for t in inputs:
        if t.tracked:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise AutodiffError("inputs belong to different tapes")

    values = [t.data for t in inputs]
    out, saved = fwd(values, attrs)
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite values in output of {kind!r}")

    if tape is None:
        return Tensor(out)
    node = tape._record(kind, [t.node for t in inputs], values, out, attrs, saved)
    return Tensor(out, tape, node)


def backpropagate(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Reverse sweep from a scalar loss; returns node-id -> gradient Tensor.

    Each record is visited at most once; the map covers every node the loss
    actually depends on, leaves included.  Leaves the loss never touches are
    absent (their gradient is identically zero).
    """
    if not loss.tracked or loss.tape is not tape:
        raise AutodiffError("loss is not tracked on this tape")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")

    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for idx in range(loss.node, -1, -1):
        g = grads.get(idx)
        if g is None:
            continue
        rec = tape.records[idx]
        if rec.kind == "leaf":
            continue
        _, bwd, _ = PRIMITIVES[rec.kind]
        gins = bwd(g, rec.input_values, rec.output, rec.saved, rec.attrs)
        for node, gin in zip(rec.input_nodes, gins):
            if node is None or gin is None:
                continue
            if node in grads:
                grads[node] = grads[node] + gin
            else:
                grads[node] = gin
    return {k: Tensor(v) for k, v in grads.items()}


# -- convenience wrappers, one per catalog entry ----------------------------

def add(a, b):
    return apply_primitive("add", [a, b])


def subtract(a, b):
    return apply_primitive("subtract", [a, b])


def multiply(a, b):
    return apply_primitive("elementwise-multiply", [a, b])


def scale(x, value: float):
    return apply_primitive("scalar-scale", [x], {"value": value})


def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def transpose(x, axes=None):
    return apply_primitive("transpose", [x], {"axes": axes})


def exp(x):
    return apply_primitive("exp", [x])


def log(x):
    return apply_primitive("log", [x])


def sigmoid(x):
    return apply_primitive("sigmoid", [x])


def relu(x):
    return apply_primitive("relu", [x])


def softmax_rows(x):
    return apply_primitive("row-softmax", [x])


def normalize_rows(x):
    return apply_primitive("row-l2-normalize", [x])


def layer_norm_rows(x, eps: float = 1e-5):
    return apply_primitive("row-layer-norm", [x], {"eps": eps})


def concat(tensors, axis: int = 0):
    return apply_primitive("concat", list(tensors), {"axis": axis})


def slice_(x, starts, stops):
    return apply_primitive("slice", [x], {"starts": list(starts), "stops": list(stops)})


def masked_mean_pool(x, mask, stride: int):
    return apply_primitive("masked-mean-pool-1d", [x], {"mask": mask, "stride": stride})


def upsample_linear(x, length: int):
    return apply_primitive("linear-interp-upsample-1d", [x], {"length": length})


def attention(q, k, v, heads: int):
    return apply_primitive("scaled-dot-attention", [q, k, v], {"heads": heads})


def dropout(x, rate: float, rng=None, train: bool = True):
    if not train or rate == 0.0:
        return x
    return apply_primitive("dropout", [x], {"rate": rate, "rng": rng, "train": train})


def sum_reduce(x, axis=None, keepdims: bool = False):
    return apply_primitive("sum-reduce", [x], {"axis": axis, "keepdims": keepdims})


def mean_reduce(x, axis=None, keepdims: bool = False):
    return apply_primitive("mean-reduce", [x], {"axis": axis, "keepdims": keepdims})


# -- finite differences ------------------------------------------------------

@dataclass
class GradCheckInput:
    max_abs_err: float
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    inputs: list
    passed: bool


def check_gradients(f, points, step: float = 1e-5, rtol: float = 1e-4,
                    atol: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued ``f`` to central differences.

    ``points`` is one array or a sequence of arrays; ``f`` receives one Tensor
    per point and must return a scalar Tensor.  A coordinate passes when
    |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|); the
    reported relative error skips coordinates where both sides are < 1e-6.
    """
    single = isinstance(points, np.ndarray)
    pts = [np.array(points, dtype=np.float64)] if single else \
        [np.array(p, dtype=np.float64) for p in points]

    tape = Tape()
    leaves = [tape.leaf(p) for p in pts]
    out = f(*leaves)
    if out.data.size != 1:
        raise ShapeError("check_gradients needs a scalar-valued f")
    grads = backpropagate(tape, out)

    def eval_at(arrays):
        return float(f(*[Tensor(a) for a in arrays]).data)

    reports = []
    ok = True
    for i, p in enumerate(pts):
        g = grads.get(leaves[i].node)
        analytic = np.zeros_like(p) if g is None else g.data
        numeric = np.zeros_like(p)
        work = [q.copy() for q in pts]
        for idx in np.ndindex(p.shape):
            orig = work[i][idx]
            work[i][idx] = orig + step
            hi = eval_at(work)
            work[i][idx] = orig - step
            lo = eval_at(work)
            work[i][idx] = orig
            numeric[idx] = (hi - lo) / (2.0 * step)
        abs_err = np.abs(analytic - numeric)
        denom = np.maximum(np.abs(analytic), np.abs(numeric))
        passed = bool(np.all(abs_err <= atol + rtol * denom))
        sig = denom > 1e-6
        max_rel = float((abs_err[sig] / denom[sig]).max()) if sig.any() else 0.0
        reports.append(GradCheckInput(float(abs_err.max()) if abs_err.size else 0.0,
                                      max_rel, passed))
        ok = ok and passed
    return GradCheckReport(reports, ok)
