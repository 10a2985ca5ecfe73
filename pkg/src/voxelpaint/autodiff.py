"""Dense f64 tensors with tape-based reverse-mode autodiff.

Everything is backed by float64 numpy arrays. Ops executed while a Tape is
active are recorded in execution order; walking the record backwards is a
reverse-topological sweep. Without an active tape, ops compute values only
and retain nothing, which is what the samplers rely on.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent; names the offending axis."""


class NumericError(ArithmeticError):
    """Raised when a forward op produces non-finite values from finite inputs."""


# Per-op finiteness guard; cheap next to the convolutions it protects.
CHECK_FINITE = True


def _check_finite(data: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")


def _as_f64(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Immutable dense value; gradient bookkeeping attaches when a tape is live."""

    __slots__ = ("data", "grad", "_parents", "_grad_fn")

    def __init__(self, data, parents: tuple = (), grad_fn: Optional[Callable] = None):
        self.data = _as_f64(data)
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._grad_fn = grad_fn

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


class Parameter(Tensor):
    """Trainable tensor with a persistent grad buffer and Adam moments."""

    __slots__ = ("m", "v", "steps")

    def __init__(self, data):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.steps = 0


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Single-owner record of a forward pass; not shareable across threads."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def clear(self) -> None:
        """Drop all recorded intermediates (and their cached backward state)."""
        self.nodes.clear()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/dθ into every Parameter reached by the record.

        Non-parameter leaf inputs get a fresh ``.grad``. May be called once
        per recording; clear() and re-record to differentiate again.
        """
        if self._consumed:
            raise RuntimeError("tape backward called twice without re-recording")
        self._consumed = True
        if loss.data.size != 1:
            raise ShapeError("backward expects a scalar loss")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node._grad_fn is None:
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None:
                    continue
                if isinstance(parent, Parameter):
                    parent.grad += pg
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
                if parent._grad_fn is None:
                    leaves[id(parent)] = parent
        for key, leaf in leaves.items():
            if key in grads:
                leaf.grad = grads[key]


def _make(data: np.ndarray, parents: tuple, grad_fn: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    tape = _active_tape()
    if tape is None:
        return Tensor(data)
    out = Tensor(data, parents, grad_fn)
    tape.nodes.append(out)
    return out


def zero_grad(params: Sequence[Parameter]) -> None:
    for p in params:
        p.grad[...] = 0.0


def adam_step(params: Sequence[Parameter], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; grads are left untouched."""
    for p in params:
        p.steps += 1
        p.m = beta1 * p.m + (1.0 - beta1) * p.grad
        p.v = beta2 * p.v + (1.0 - beta2) * p.grad * p.grad
        m_hat = p.m / (1.0 - beta1 ** p.steps)
        v_hat = p.v / (1.0 - beta2 ** p.steps)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Elementwise / structural ops

def add(a: Tensor, b) -> Tensor:
    a = _wrap(a)
    if isinstance(b, (int, float)):
        data = a.data + b
        return _make(data, (a,), lambda g: [g], "add")
    b = _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _make(a.data + b.data, (a, b), lambda g: [g, g], "add")


def scale(a: Tensor, s: float) -> Tensor:
    return _make(a.data * s, (a,), lambda g: [g * s], "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: [g * bd, g * ad], "mul")


def silu(x: Tensor) -> Tensor:
    x = _wrap(x)
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-x.data))
    data = x.data * sig
    xd = x.data

    def grad_fn(g):
        return [g * (sig * (1.0 + xd * (1.0 - sig)))]

    return _make(data, (x,), grad_fn, "silu")


def stop_gradient(x: Tensor) -> Tensor:
    """Value passes through; gradient does not."""
    return _make(x.data, (), None, "stop_gradient")


def straight_through(x: Tensor, value: Tensor) -> Tensor:
    """Take ``value``'s data exactly; route the gradient to ``x`` unchanged."""
    x, value = _wrap(x), _wrap(value)
    if x.shape != value.shape:
        raise ShapeError(f"straight_through: shape mismatch {x.shape} vs {value.shape}")
    return _make(value.data, (x,), lambda g: [g], "straight_through")


def sum_all(x: Tensor) -> Tensor:
    x = _wrap(x)
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,),
                 lambda g: [np.broadcast_to(g, shape).copy()], "sum")


def mean_all(x: Tensor) -> Tensor:
    x = _wrap(x)
    n = x.data.size
    shape = x.shape
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: [np.broadcast_to(g / n, shape).copy()], "mean")


def mse_loss(prediction: Tensor, target) -> Tensor:
    """Mean squared elementwise difference, differentiable w.r.t. both sides."""
    prediction = _wrap(prediction)
    target = _wrap(target)
    if prediction.shape != target.shape:
        raise ShapeError(
            f"mse_loss: shape mismatch {prediction.shape} vs {target.shape}")
    diff = prediction.data - target.data
    n = diff.size
    data = np.asarray(np.mean(diff * diff))

    def grad_fn(g):
        d = g * (2.0 / n) * diff
        return [d, -d]

    return _make(data, (prediction, target), grad_fn, "mse_loss")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    base = tensors[0].shape[1:]
    for t in tensors[1:]:
        if t.shape[1:] != base:
            raise ShapeError(
                f"concat_channels: trailing shape mismatch {t.shape[1:]} vs {base}")
    sizes = [t.shape[0] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=0)
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return [g[offsets[i]:offsets[i + 1]] for i in range(len(sizes))]

    return _make(data, tuple(tensors), grad_fn, "concat_channels")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    x = _wrap(x)
    if not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"slice_channels: [{start}:{stop}] out of range for axis 0 "
                         f"of extent {x.shape[0]}")
    shape = x.shape

    def grad_fn(g):
        dx = np.zeros(shape)
        dx[start:stop] = g
        return [dx]

    return _make(x.data[start:stop].copy(), (x,), grad_fn, "slice_channels")


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel vector, broadcast over all trailing axes."""
    x, bias = _wrap(x), _wrap(bias)
    if bias.ndim != 1 or bias.shape[0] != x.shape[0]:
        raise ShapeError(
            f"add_channel_bias: bias extent {bias.shape} vs channel axis {x.shape[0]}")
    view = bias.data.reshape((x.shape[0],) + (1,) * (x.ndim - 1))
    spatial = tuple(range(1, x.ndim))

    def grad_fn(g):
        return [g, g.sum(axis=spatial)]

    return _make(x.data + view, (x, bias), grad_fn, "add_channel_bias")


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of a [K, d] table per spatial site -> [d, *indices.shape]."""
    table = _wrap(table)
    if table.ndim != 2:
        raise ShapeError("gather_rows: table must be 2-D [K, d]")
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("gather_rows: index outside table")
    data = np.moveaxis(table.data[idx], -1, 0)

    def grad_fn(g):
        dt = np.zeros(table.shape)
        flat_g = np.moveaxis(g, 0, -1).reshape(-1, table.shape[1])
        np.add.at(dt, idx.reshape(-1), flat_g)
        return [dt]

    return _make(data, (table,), grad_fn, "gather_rows")


# ---------------------------------------------------------------------------
# Linear / normalization

def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    if x.ndim != 1 or weight.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ShapeError(
            f"linear: weight {weight.shape} incompatible with input {x.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} vs output extent {weight.shape[0]}")
    xd, wd = x.data, weight.data
    data = wd @ xd + bias.data

    def grad_fn(g):
        return [wd.T @ g, np.outer(g, xd), g]

    return _make(data, (x, weight, bias), grad_fn, "linear")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5, exclude_axes: tuple = ()) -> Tensor:
    """Normalize per channel group over the channel slot and spatial axes.

    Axes listed in ``exclude_axes`` (indices into x.shape, e.g. the depth
    axis of a [C,D,H,W] tensor) keep separate statistics; the pseudo-3D
    blocks use that to stay exactly slice-wise.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    c = x.shape[0]
    if c % groups != 0:
        raise ShapeError(f"group_norm: channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("group_norm: affine params must have one value per channel")
    for ax in exclude_axes:
        if not 1 <= ax < x.ndim:
            raise ShapeError(f"group_norm: excluded axis {ax} out of range")

    gshape = (groups, c // groups) + x.shape[1:]
    xg = x.data.reshape(gshape)
    red = tuple(a for a in range(1, len(gshape))
                if a == 1 or (a - 1) not in exclude_axes)
    n = 1
    for a in red:
        n *= gshape[a]
    mu = xg.mean(axis=red, keepdims=True)
    centered = xg - mu
    var = np.mean(centered * centered, axis=red, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv).reshape(x.shape)
    gview = gamma.data.reshape((c,) + (1,) * (x.ndim - 1))
    bview = beta.data.reshape((c,) + (1,) * (x.ndim - 1))
    data = gview * xhat + bview
    nonchannel = tuple(range(1, x.ndim))

    def grad_fn(g):
        dxhat = (g * gview).reshape(gshape)
        dvar = np.sum(dxhat * centered, axis=red, keepdims=True) * (-0.5) * inv ** 3
        dmu = (np.sum(dxhat, axis=red, keepdims=True) * (-inv)
               + dvar * np.sum(-2.0 * centered, axis=red, keepdims=True) / n)
        dx = dxhat * inv + dvar * 2.0 * centered / n + dmu / n
        return [dx.reshape(x.shape),
                np.sum(g * xhat, axis=nonchannel),
                np.sum(g, axis=nonchannel)]

    return _make(data, (x, gamma, beta), grad_fn, "group_norm")


# ---------------------------------------------------------------------------
# Pooling / resampling

def _resolve_axes(x: Tensor, axes) -> tuple:
    if axes is None:
        axes = tuple(range(1, x.ndim)) if x.ndim > 1 else (0,)
    return tuple(axes)


def avg_pool(x: Tensor, factor: int, axes=None) -> Tensor:
    """Block means along the given axes (default: every axis but the channel)."""
    x = _wrap(x)
    axes = _resolve_axes(x, axes)
    newshape, mean_axes = [], []
    for i, e in enumerate(x.shape):
        if i in axes:
            if e % factor != 0:
                raise ShapeError(f"avg_pool: axis {i} extent {e} not divisible by {factor}")
            newshape += [e // factor, factor]
            mean_axes.append(len(newshape) - 1)
        else:
            newshape.append(e)
    data = x.data.reshape(newshape).mean(axis=tuple(mean_axes))
    block = factor ** len(axes)

    def grad_fn(g):
        dx = g / block
        for ax in axes:
            dx = np.repeat(dx, factor, axis=ax)
        return [dx]

    return _make(data, (x,), grad_fn, "avg_pool")


def nearest_upsample(x: Tensor, factor: int, axes=None) -> Tensor:
    x = _wrap(x)
    axes = _resolve_axes(x, axes)
    data = x.data
    for ax in axes:
        data = np.repeat(data, factor, axis=ax)

    def grad_fn(g):
        newshape, sum_axes = [], []
        for i, e in enumerate(x.shape):
            if i in axes:
                newshape += [e, factor]
                sum_axes.append(len(newshape) - 1)
            else:
                newshape.append(e)
        return [g.reshape(newshape).sum(axis=tuple(sum_axes))]

    return _make(data, (x,), grad_fn, "nearest_upsample")


def subsample(x: Tensor, factor: int, axes=None) -> Tensor:
    """Keep every factor-th sample along the given axes (strided-conv tail)."""
    x = _wrap(x)
    axes = _resolve_axes(x, axes)
    for ax in axes:
        if x.shape[ax] % factor != 0:
            raise ShapeError(
                f"subsample: axis {ax} extent {x.shape[ax]} not divisible by {factor}")
    sel = tuple(slice(None, None, factor) if i in axes else slice(None)
                for i in range(x.ndim))
    shape = x.shape

    def grad_fn(g):
        dx = np.zeros(shape)
        dx[sel] = g
        return [dx]

    return _make(x.data[sel].copy(), (x,), grad_fn, "subsample")


# ---------------------------------------------------------------------------
# Convolutions (cross-correlation, zero padding, "same" spatial size)

_scratch = threading.local()


def _scratch_buffer(shape: tuple) -> np.ndarray:
    """Reusable per-thread buffer; only for arrays not retained after the op."""
    pool = getattr(_scratch, "pool", None)
    if pool is None:
        pool = {}
        _scratch.pool = pool
    arr = pool.get(shape)
    if arr is None:
        arr = np.empty(shape)
        pool[shape] = arr
    return arr


def _im2col(x: np.ndarray, k: tuple, spatial_axes: tuple,
            reuse: bool = False) -> np.ndarray:
    """Unfold into [Ci * taps, positions] for a zero-padded 'same' window.

    Each tap is one long shifted copy of the flattened spatial block; the
    positions whose window leaves the array (where flat shifting would wrap
    a coordinate) are zeroed afterwards, axis by axis. With ``reuse`` the
    output lives in scratch storage and is only valid until the next call.
    """
    ci = x.shape[0]
    spatial = x.shape[1:]
    npos = int(np.prod(spatial))
    ntaps = int(np.prod(k))
    flat = np.ascontiguousarray(x).reshape(ci, npos)
    shape = (ci, ntaps, npos)
    cols = _scratch_buffer(shape) if reuse else np.empty(shape)
    view = cols.reshape((ci, ntaps) + spatial)

    flat_strides = []
    for ax in spatial_axes:
        stride = 1
        for e in x.shape[ax + 1:]:
            stride *= e
        flat_strides.append(stride)

    offsets = [range(kk) for kk in k]
    for ti, off in enumerate(_tap_product(offsets)):
        deltas = [o - kk // 2 for o, kk in zip(off, k)]
        shift = sum(d * s for d, s in zip(deltas, flat_strides))
        block = cols[:, ti, :]
        if shift >= 0:
            block[:, :npos - shift] = flat[:, shift:]
            if shift:
                block[:, npos - shift:] = 0.0
        else:
            block[:, -shift:] = flat[:, :npos + shift]
            block[:, :-shift] = 0.0
        tap = view[:, ti]
        for ax, d in zip(spatial_axes, deltas):
            if d == 0:
                continue
            sel = [slice(None)] * tap.ndim
            sel[ax] = slice(0, -d) if d < 0 else slice(tap.shape[ax] - d, None)
            tap[tuple(sel)] = 0.0
    return cols.reshape(ci * ntaps, npos)


def _tap_product(ranges):
    if len(ranges) == 1:
        for a in ranges[0]:
            yield (a,)
    elif len(ranges) == 2:
        for a in ranges[0]:
            for b in ranges[1]:
                yield (a, b)
    else:
        for a in ranges[0]:
            for rest in _tap_product(ranges[1:]):
                yield (a,) + rest


def _conv_same(x: np.ndarray, w: np.ndarray, bias, spatial_axes: tuple,
               col_out: Optional[list] = None) -> np.ndarray:
    """Shared stride-1 'same' correlation core; w is [Co, Ci, *k]."""
    k = w.shape[2:]
    # Scratch reuse is only safe when the unfolded matrix is not kept for
    # the backward pass.
    cols = _im2col(x, k, spatial_axes, reuse=col_out is None)
    if col_out is not None:
        col_out.append(cols)
    y = w.reshape(w.shape[0], -1) @ cols
    if bias is not None:
        y += bias[:, None]
    return y.reshape((w.shape[0],) + x.shape[1:])


def _flip_kernel(w: np.ndarray) -> np.ndarray:
    flipped = w[(slice(None), slice(None)) + (slice(None, None, -1),) * (w.ndim - 2)]
    return np.ascontiguousarray(flipped.swapaxes(0, 1))


def _conv_op(x: Tensor, weight: Tensor, bias: Optional[Tensor],
             spatial_axes: tuple, name: str) -> Tensor:
    xd, wd = x.data, weight.data
    cols: list = []
    record = _active_tape() is not None
    y = _conv_same(xd, wd, None if bias is None else bias.data, spatial_axes,
                   col_out=cols if record else None)
    if not record:
        return _make(y, (), None, name)
    nonchannel = tuple(range(1, y.ndim))
    wflip = _flip_kernel(wd)

    def grad_fn(g):
        dx = _conv_same(g, wflip, None, spatial_axes)
        g2 = g.reshape(g.shape[0], -1)
        dw = (g2 @ cols[0].T).reshape(wd.shape)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=nonchannel))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, grad_fn, name)


def _check_conv(x: Tensor, weight: Tensor, bias, x_ndim: int, w_ndim: int,
                name: str) -> None:
    if x.ndim != x_ndim:
        raise ShapeError(f"{name}: expected {x_ndim}-axis input, got {x.ndim} axes")
    if weight.ndim != w_ndim:
        raise ShapeError(f"{name}: expected {w_ndim}-axis kernel, got {weight.ndim} axes")
    if weight.shape[1] != x.shape[0]:
        raise ShapeError(f"{name}: kernel input-channel axis {weight.shape[1]} "
                         f"vs input channel axis {x.shape[0]}")
    for kk in weight.shape[2:]:
        if kk % 2 != 1:
            raise ShapeError(f"{name}: kernel extent {kk} must be odd")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"{name}: bias shape {bias.shape} vs output channels "
                         f"{weight.shape[0]}")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """[Ci,H,W] x [Co,Ci,k,k] -> [Co,H,W]."""
    x, weight = _wrap(x), _wrap(weight)
    bias = None if bias is None else _wrap(bias)
    _check_conv(x, weight, bias, 3, 4, "conv2d")
    return _conv_op(x, weight, bias, (1, 2), "conv2d")


def conv2d_stack(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Apply the same 2-D kernel to every depth slice of a [Ci,D,H,W] tensor."""
    x, weight = _wrap(x), _wrap(weight)
    bias = None if bias is None else _wrap(bias)
    _check_conv(x, weight, bias, 4, 4, "conv2d_stack")
    return _conv_op(x, weight, bias, (2, 3), "conv2d_stack")


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """[Ci,D,H,W] x [Co,Ci,k,k,k] -> [Co,D,H,W]."""
    x, weight = _wrap(x), _wrap(weight)
    bias = None if bias is None else _wrap(bias)
    _check_conv(x, weight, bias, 4, 5, "conv3d")
    return _conv_op(x, weight, bias, (1, 2, 3), "conv3d")


def conv_axis1d(x: Tensor, weight: Tensor, axis: int = 1) -> Tensor:
    """1-D correlation along one spatial axis of [C,D,H,W] (default: depth)."""
    x, weight = _wrap(x), _wrap(weight)
    _check_conv(x, weight, None, 4, 3, "conv_axis1d")
    if not 1 <= axis < x.ndim:
        raise ShapeError(f"conv_axis1d: axis {axis} out of range for {x.ndim}-axis input")
    return _conv_op(x, weight, None, (axis,), "conv_axis1d")


# ---------------------------------------------------------------------------
# Module tree (parameter bookkeeping for the networks)

class Module:
    """Minimal container: children and Parameters discovered via attributes."""

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = name if not prefix else f"{prefix}.{name}"
            yield from _walk_params(value, full)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk_params(value, name: str) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_params(item, f"{name}.{i}")
