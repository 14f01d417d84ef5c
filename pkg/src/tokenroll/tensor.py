"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

A Tape is created per forward pass (context manager) and records one entry
per op in insertion order, which is already topological. backward() replays
the records in reverse, accumulating gradients additively. Tensors are thin
wrappers over numpy arrays; arrays produced by ops are frozen (read-only),
so new values always mean a new Tensor.

Ids, targets and boolean masks are plain numpy arrays, not Tensors; only
floating data participates in differentiation. Ops preserve dtype, so a
float32 forward stays float32 while tests run everything in float64.
"""

from __future__ import annotations

import itertools
import math
import threading

import numpy as np
from scipy.special import erf

from .errors import ContractViolation, NumericDomainError, ShapeMismatch

MASK_FILL_VALUE = -1e9  # -inf surrogate for additive attention masks
LAYER_NORM_EPS = 1e-5

_node_ids = itertools.count()
_tls = threading.local()


def _tape_stack() -> list:
    if not hasattr(_tls, "stack"):
        _tls.stack = []
    return _tls.stack


def _current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable value node. shape/values/requires_grad/node_id."""

    __slots__ = ("values", "requires_grad", "node_id")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)

    @classmethod
    def _from_op(cls, values: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        values.setflags(write=False)
        out.values = values
        out.requires_grad = requires_grad
        out.node_id = next(_node_ids)
        return out

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}, requires_grad={self.requires_grad})"


class Gradients:
    """Result of Tape.backward: node_id -> gradient array."""

    def __init__(self, grads: dict, leaf_ids: set):
        self._grads = grads
        self._leaf_ids = leaf_ids

    def wrt(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.node_id)
        if g is not None:
            return g
        if t.requires_grad:
            # leaf not reachable from the root: zero gradient
            return np.zeros_like(t.values)
        raise ContractViolation("gradient requested for a tensor that does not require grad")

    def __contains__(self, t: Tensor) -> bool:
        return t.node_id in self._grads


class _Record:
    __slots__ = ("out_id", "in_ids", "vjp")

    def __init__(self, out_id, in_ids, vjp):
        self.out_id = out_id
        self.in_ids = in_ids
        self.vjp = vjp


class Tape:
    """Per-forward-pass op recorder. Use as a context manager."""

    def __init__(self):
        self._records: list[_Record] = []
        self._produced: set[int] = set()
        self._leaf_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def _record(self, out: Tensor, inputs: tuple, vjp) -> None:
        for t in inputs:
            if t.requires_grad and t.node_id not in self._produced:
                self._leaf_ids.add(t.node_id)
        self._records.append(_Record(out.node_id, tuple(t.node_id for t in inputs), vjp))
        self._produced.add(out.node_id)

    def backward(self, root: Tensor) -> Gradients:
        """Reverse sweep from a scalar root; additive accumulation."""
        if root.values.shape != ():
            raise ContractViolation(f"backward root must be scalar, got shape {root.values.shape}")
        if root.node_id not in self._produced:
            raise ContractViolation("backward root was not produced under this tape")
        grads: dict[int, np.ndarray] = {root.node_id: np.ones((), dtype=root.values.dtype)}
        for rec in reversed(self._records):
            g = grads.pop(rec.out_id, None)
            if g is None:
                continue
            for nid, gi in zip(rec.in_ids, rec.vjp(g)):
                if gi is None:
                    continue
                acc = grads.get(nid)
                grads[nid] = gi if acc is None else acc + gi
        return Gradients(grads, self._leaf_ids)


def _emit(op: str, values: np.ndarray, inputs: tuple, make_vjp) -> Tensor:
    """Freeze the output and record onto the active tape if grad is needed."""
    tape = _current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(values, requires_grad=needs)
    if needs:
        tape._record(out, inputs, make_vjp())
    return out


def _contig(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray promotes 0-d to 1-d; keep scalars scalar
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over axes that numpy broadcasting expanded, back to `shape`."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def _check_float(op: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not isinstance(t, Tensor):
            raise ContractViolation(f"{op}: expected Tensor, got {type(t).__name__}")


# ---------------------------------------------------------------- basic ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product on the last two axes, leading axes broadcast."""
    _check_float("matmul", a, b)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeMismatch(f"matmul: operands must have rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    va, vb = a.values, b.values
    out = va @ vb

    def make_vjp():
        def vjp(g):
            ga = _reduce_to(g @ vb.swapaxes(-1, -2), va.shape) if a.requires_grad else None
            gb = _reduce_to(va.swapaxes(-1, -2) @ g, vb.shape) if b.requires_grad else None
            return ga, gb

        return vjp

    return _emit("matmul", out, (a, b), make_vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    _check_float("add", a, b)
    try:
        out = a.values + b.values
    except ValueError:
        raise ShapeMismatch(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def make_vjp():
        def vjp(g):
            ga = _reduce_to(g, a.shape) if a.requires_grad else None
            gb = _reduce_to(g, b.shape) if b.requires_grad else None
            return ga, gb

        return vjp

    return _emit("add", out, (a, b), make_vjp)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    _check_float("scale", x)
    c = float(c)
    out = x.values * c

    def make_vjp():
        return lambda g: (g * c,)

    return _emit("scale", out, (x,), make_vjp)


def concat_axis(parts, axis: int) -> Tensor:
    """Concatenate along an existing axis. Repeated inputs accumulate grads."""
    parts = tuple(parts)
    if not parts:
        raise ContractViolation("concat_axis: empty input list")
    _check_float("concat_axis", *parts)
    ndim = parts[0].values.ndim
    if not -ndim <= axis < ndim:
        raise ShapeMismatch(f"concat_axis: axis {axis} out of range for rank {ndim}")
    axis = axis % ndim
    for p in parts[1:]:
        if p.values.ndim != ndim:
            raise ShapeMismatch("concat_axis: rank mismatch")
        for d in range(ndim):
            if d != axis and p.shape[d] != parts[0].shape[d]:
                raise ShapeMismatch(
                    f"concat_axis: shapes {[p.shape for p in parts]} differ off axis {axis}"
                )
    out = np.concatenate([p.values for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def make_vjp():
        offs = np.cumsum([0] + sizes)

        def vjp(g):
            out_g = []
            for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
                if p.requires_grad:
                    idx = [slice(None)] * ndim
                    idx[axis] = slice(lo, hi)
                    out_g.append(np.ascontiguousarray(g[tuple(idx)]))
                else:
                    out_g.append(None)
            return out_g

        return vjp

    return _emit("concat_axis", out, parts, make_vjp)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    _check_float("slice_axis", x)
    ndim = x.values.ndim
    if not -ndim <= axis < ndim:
        raise ShapeMismatch(f"slice_axis: axis {axis} out of range for rank {ndim}")
    axis = axis % ndim
    dim = x.shape[axis]
    if not 0 <= start < stop <= dim:
        raise ShapeMismatch(f"slice_axis: [{start}, {stop}) invalid for dim {dim}")
    idx = [slice(None)] * ndim
    idx[axis] = slice(start, stop)
    out = np.ascontiguousarray(x.values[tuple(idx)])

    def make_vjp():
        def vjp(g):
            gx = np.zeros_like(x.values)
            gx[tuple(idx)] = g
            return (gx,)

        return vjp

    return _emit("slice_axis", out, (x,), make_vjp)


def transpose(x: Tensor, axis1: int = -2, axis2: int = -1) -> Tensor:
    """Swap two axes."""
    _check_float("transpose", x)
    out = np.ascontiguousarray(x.values.swapaxes(axis1, axis2))

    def make_vjp():
        return lambda g: (g.swapaxes(axis1, axis2),)

    return _emit("transpose", out, (x,), make_vjp)


def reshape(x: Tensor, shape) -> Tensor:
    _check_float("reshape", x)
    shape = tuple(shape)
    try:
        out = np.reshape(x.values, shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {x.shape} as {shape}")
    out = _contig(out)
    in_shape = x.shape

    def make_vjp():
        return lambda g: (g.reshape(in_shape),)

    return _emit("reshape", out, (x,), make_vjp)


def sum_axis(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_float("sum_axis", x)
    out = x.values.sum(axis=axis, keepdims=keepdims)
    in_shape = x.shape

    def make_vjp():
        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, in_shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, in_shape).copy(),)

        return vjp

    return _emit("sum_axis", np.asarray(out), (x,), make_vjp)


def mean_axis(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_float("mean_axis", x)
    out = x.values.mean(axis=axis, keepdims=keepdims)
    in_shape = x.shape
    count = x.values.size if axis is None else x.shape[axis]

    def make_vjp():
        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g / count, in_shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2 / count, in_shape).copy(),)

        return vjp

    return _emit("mean_axis", np.asarray(out), (x,), make_vjp)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: table (R, D), integer ids (...) -> (..., D)."""
    _check_float("gather_rows", table)
    if table.values.ndim != 2:
        raise ShapeMismatch(f"gather_rows: table must be rank 2, got {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractViolation("gather_rows: ids must be integers")
    rows, width = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise ContractViolation(f"gather_rows: id out of range [0, {rows})")
    out = table.values[ids]

    def make_vjp():
        def vjp(g):
            gt = np.zeros_like(table.values)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, width))
            return (gt,)

        return vjp

    return _emit("gather_rows", out, (table,), make_vjp)


def permute_tokens(x: Tensor, perm: np.ndarray, axis: int) -> Tensor:
    """Reorder along one axis by a permutation index map: out[i] = x[perm[i]].

    The gradient is the inverse permutation applied to the output gradient.
    """
    _check_float("permute_tokens", x)
    perm = np.asarray(perm)
    ndim = x.values.ndim
    if not -ndim <= axis < ndim:
        raise ShapeMismatch(f"permute_tokens: axis {axis} out of range for rank {ndim}")
    axis = axis % ndim
    dim = x.shape[axis]
    if perm.shape != (dim,) or not np.issubdtype(perm.dtype, np.integer):
        raise ContractViolation(f"permute_tokens: index map must be {dim} integers")
    counts = np.bincount(perm, minlength=dim)
    if perm.size and (perm.min() < 0 or perm.max() >= dim or counts.max() > 1):
        raise ContractViolation("permute_tokens: index map is not a permutation")
    out = np.ascontiguousarray(np.take(x.values, perm, axis=axis))

    def make_vjp():
        inv = np.empty_like(perm)
        inv[perm] = np.arange(dim)

        def vjp(g):
            return (np.take(g, inv, axis=axis),)

        return vjp

    return _emit("permute_tokens", out, (x,), make_vjp)


# ------------------------------------------------------------ nonlinear ops


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    _check_float("softmax_lastdim", x)
    v = x.values
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("softmax_lastdim: non-finite input")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def make_vjp():
        def vjp(g):
            inner = (g * out).sum(axis=-1, keepdims=True)
            return (out * (g - inner),)

        return vjp

    return _emit("softmax_lastdim", out, (x,), make_vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance; then affine."""
    _check_float("layer_norm", x, gain, bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm: gain/bias must be ({d},), got {gain.shape}/{bias.shape}")
    v = x.values
    mu = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv_std
    out = xhat * gain.values + bias.values

    def make_vjp():
        def vjp(g):
            gx = None
            if x.requires_grad:
                gh = g * gain.values
                gx = inv_std * (
                    gh
                    - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
                )
            gg = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
            gb = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
            return gx, gg, gb

        return vjp

    return _emit("layer_norm", out, (x, gain, bias), make_vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact erf form: x * Phi(x)."""
    _check_float("gelu", x)
    v = x.values
    phi_cdf = 0.5 * (1.0 + erf(v * math.sqrt(0.5)))
    out = v * phi_cdf

    def make_vjp():
        def vjp(g):
            pdf = np.exp(-0.5 * v * v) * (1.0 / math.sqrt(2.0 * math.pi))
            return (g * (phi_cdf + v * pdf),)

        return vjp

    return _emit("gelu", out, (x,), make_vjp)


def cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-position negative log-likelihood. logits (..., K), targets (...)."""
    _check_float("cross_entropy_with_logits", logits)
    targets = np.asarray(targets)
    if not np.issubdtype(targets.dtype, np.integer):
        raise ContractViolation("cross_entropy_with_logits: targets must be integers")
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch(
            f"cross_entropy_with_logits: targets {targets.shape} vs logits {logits.shape}"
        )
    k = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ContractViolation(f"cross_entropy_with_logits: target out of range [0, {k})")
    v = logits.values
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("cross_entropy_with_logits: non-finite logits")
    m = v.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(v - m).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(v, targets[..., None], axis=-1)
    out = (lse - picked)[..., 0]

    def make_vjp():
        def vjp(g):
            p = np.exp(v - lse)
            np.subtract.at(p.reshape(-1, k), (np.arange(targets.size), targets.reshape(-1)), 1.0)
            return (p * g[..., None],)

        return vjp

    return _emit("cross_entropy_with_logits", _contig(out), (logits,), make_vjp)


def masked_fill(x: Tensor, mask: np.ndarray, value: float = MASK_FILL_VALUE) -> Tensor:
    """Replace entries where mask is True with a constant; grad is blocked there."""
    _check_float("masked_fill", x)
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        raise ContractViolation("masked_fill: mask must be boolean")
    try:
        bmask = np.broadcast_to(mask, x.shape)
    except ValueError:
        raise ShapeMismatch(f"masked_fill: mask {mask.shape} does not broadcast to {x.shape}")
    out = np.where(bmask, np.asarray(value, dtype=x.dtype), x.values)

    def make_vjp():
        def vjp(g):
            return (np.where(bmask, 0.0, g),)

        return vjp

    return _emit("masked_fill", out, (x,), make_vjp)


def l2_normalize_rows(x: Tensor, min_norm: float = 1e-12) -> Tensor:
    """Scale the last axis to unit Euclidean norm."""
    _check_float("l2_normalize_rows", x)
    v = x.values
    norm = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    if np.any(norm < min_norm):
        raise NumericDomainError("l2_normalize_rows: row with (near-)zero norm")
    out = v / norm

    def make_vjp():
        def vjp(g):
            inner = (g * out).sum(axis=-1, keepdims=True)
            return ((g - out * inner) / norm,)

        return vjp

    return _emit("l2_normalize_rows", out, (x,), make_vjp)
