"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is recorded implicitly: every operation output keeps references
to its operands and a closure mapping the output adjoint to operand
adjoints.  :func:`backward` walks that graph once, in reverse topological
order, and returns a fresh gradient map; nothing is accumulated on the
tensors themselves, so the same graph can be differentiated repeatedly
with identical results.

There is no implicit broadcasting.  Binary elementwise operations require
equal shapes; channel biases go through :func:`bias_add` and repetition
through :func:`tile`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError


class Tensor:
    """Immutable n-dimensional array of float64 values.

    Parameters
    ----------
    data : array_like
        Values; copied and converted to float64.
    requires_grad : bool
        Mark the tensor as a leaf whose gradient :func:`backward` reports.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str):
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        data.flags.writeable = False
        out.data = data
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return self.shape[0]

    # operator sugar; all of these route through the checked functions below
    def __add__(self, other):
        return add_scalar(self, other) if _is_scalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_scalar(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul_scalar(self, other) if _is_scalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- backward


def _topological(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def vjp(output: Tensor, seed, wrt: Iterable[Tensor] | None = None):
    """Vector-Jacobian product of ``output`` with adjoint ``seed``.

    Returns a list aligned with ``wrt`` (zero arrays for tensors the output
    does not depend on), or a dict ``{leaf: gradient}`` over every
    requires-grad leaf reached when ``wrt`` is None.
    """
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise DimensionError(f"seed shape {seed.shape} != output shape {output.shape}")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    if output.requires_grad:
        grads[id(output)] = seed
        for node in reversed(_topological(output)):
            g = grads.get(id(node))
            if g is None:
                continue
            if node._backward is None:
                leaves[id(node)] = node
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
    if wrt is None:
        return {leaf: grads[key] for key, leaf in leaves.items()}
    return [grads.get(id(t), np.zeros(t.shape)) for t in wrt]


def backward(output: Tensor, wrt: Iterable[Tensor] | None = None):
    """Gradient of a scalar ``output`` with respect to its leaves.

    Raises :class:`ContractError` if ``output`` is not a scalar.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    return vjp(output, np.ones(output.shape), wrt)


def grad(output: Tensor, *wrt: Tensor):
    """Shorthand: gradients of a scalar ``output`` for each tensor in ``wrt``."""
    out = backward(output, wrt)
    return out[0] if len(out) == 1 else out


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor._result(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return Tensor._result(a.data + float(s), (a,), lambda g: (g,), "add_scalar")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return Tensor._result(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def sign(a: Tensor) -> Tensor:
    """Elementwise sign with ``sign(0) == 0``; the gradient is zero everywhere."""
    return Tensor._result(np.sign(a.data), (a,), lambda g: (np.zeros_like(g),), "sign")


def clamp(a: Tensor, lo: float = -np.inf, hi: float = np.inf) -> Tensor:
    """Clip to ``[lo, hi]``.  Gradient passes where ``lo <= a <= hi``, else zero."""
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._result(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root.  The gradient at exactly 0 is reported as 0."""
    r = np.sqrt(a.data)
    safe = np.where(r > 0, r, 1.0)
    return Tensor._result(r, (a,), lambda g: (np.where(r > 0, 0.5 * g / safe, 0.0),), "sqrt")


# ---------------------------------------------------------------- shape / reduction


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def tile(a: Tensor, reps) -> Tensor:
    """Repeat ``a`` along each axis; ``len(reps)`` must equal ``a.ndim``."""
    reps = tuple(int(r) for r in reps)
    if len(reps) != a.ndim:
        raise DimensionError(f"tile: {len(reps)} repetitions for rank {a.ndim}")
    shape = a.shape

    def _back(g):
        split = []
        for r, s in zip(reps, shape):
            split.extend((r, s))
        return (g.reshape(split).sum(axis=tuple(range(0, 2 * len(reps), 2))),)

    return Tensor._result(np.tile(a.data, reps), (a,), _back, "tile")


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape
    if axis is None:
        return Tensor._result(a.data.sum(), (a,), lambda g: (np.full(shape, float(g)),), "sum")
    axis = axis % a.ndim
    return Tensor._result(
        a.data.sum(axis=axis), (a,),
        lambda g: (np.repeat(np.expand_dims(g, axis), shape[axis], axis=axis),), "sum",
    )


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis % a.ndim]
    return mul_scalar(sum(a, axis), 1.0 / n)


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced numpy indexing; the adjoint scatters with ``np.add.at``."""
    shape = a.shape

    def _back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._result(a.data[index], (a,), _back, "take")


def max(a: Tensor, axis: int = -1) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; the gradient flows to the first maximal entry."""
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    values = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape = a.shape

    def _back(g):
        out = np.zeros(shape)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return Tensor._result(values, (a,), _back, "max")


def flip_lr(a: Tensor) -> Tensor:
    """Mirror the width axis of an ``(H, W, C)`` or ``(N, H, W, C)`` tensor."""
    if a.ndim not in (3, 4):
        raise DimensionError(f"flip_lr expects rank 3 or 4, got {a.ndim}")
    ax = a.ndim - 2
    return Tensor._result(np.flip(a.data, ax).copy(), (a,), lambda g: (np.flip(g, ax).copy(),), "flip")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias ``b`` of shape ``(C,)`` along the last axis of ``x``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"bias_add: bias {b.shape} does not match channels of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return Tensor._result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)), "bias_add")


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation (no kernel flip).

    ``x`` is ``(H, W, Cin)`` or ``(N, H, W, Cin)``; ``kernels`` is
    ``(kh, kw, Cin, Cout)``.  Output side is ``(H - kh) // stride + 1``.
    """
    if stride < 1:
        raise DimensionError(f"stride must be positive, got {stride}")
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be rank 4, got {kernels.shape}")
    single = x.ndim == 3
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be rank 3 or 4, got {x.shape}")
    xd = x.data[None] if single else x.data
    kh, kw, cin, _ = kernels.shape
    if xd.shape[3] != cin:
        raise DimensionError(f"conv2d: input has {xd.shape[3]} channels, kernels expect {cin}")
    if kh > xd.shape[1] or kw > xd.shape[2]:
        raise DimensionError(f"kernel {kh}x{kw} larger than input {xd.shape[1]}x{xd.shape[2]}")
    kd = kernels.data
    out = _kernels.conv2d(xd, kd, stride)

    def _back(g):
        g4 = g[None] if single else g
        dx = _kernels.conv2d_grad_input(g4, kd, stride, xd.shape) if x.requires_grad else None
        dk = _kernels.conv2d_grad_kernel(xd, g4, stride, kd.shape) if kernels.requires_grad else None
        if dx is not None and single:
            dx = dx[0]
        return dx, dk

    return Tensor._result(out[0] if single else out, (x, kernels), _back, "conv2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: ``(N, H, W, C) -> (N, C)`` or ``(H, W, C) -> (C,)``."""
    if x.ndim not in (3, 4):
        raise DimensionError(f"global_avg_pool expects rank 3 or 4, got {x.shape}")
    axes = (x.ndim - 3, x.ndim - 2)
    shape = x.shape
    area = shape[axes[0]] * shape[axes[1]]

    def _back(g):
        g = np.expand_dims(np.expand_dims(g, axes[0]), axes[0])
        return (np.broadcast_to(g / area, shape).copy(),)

    return Tensor._result(x.data.mean(axis=axes), (x,), _back, "gap")


# ---------------------------------------------------------------- losses


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (max-subtracted)."""
    return np.exp(log_softmax(np.asarray(z, dtype=np.float64)))


def softmax_cross_entropy(logits: Tensor, true_class) -> Tensor:
    """``-log softmax(logits)[true_class]``.

    A ``(C,)`` logit vector with an integer class gives a scalar; a
    ``(N, C)`` matrix with ``N`` classes gives the ``(N,)`` per-row losses.
    """
    if logits.ndim not in (1, 2):
        raise DimensionError(f"logits must be rank 1 or 2, got {logits.shape}")
    n_cls = logits.shape[-1]
    labels = np.asarray(true_class, dtype=np.int64)
    if logits.ndim == 1 and labels.ndim != 0:
        raise DimensionError("a single logit vector takes a single class index")
    if logits.ndim == 2 and labels.shape != (logits.shape[0],):
        raise DimensionError(f"expected {logits.shape[0]} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= n_cls):
        raise IndexError(f"class index out of range [0, {n_cls})")
    z = logits.data.reshape(-1, n_cls)
    lab = labels.reshape(-1)
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, lab]
    probs = np.exp(logp)
    probs[rows, lab] -= 1.0

    def _back(g):
        return ((probs * np.reshape(g, (-1, 1))).reshape(logits.shape),)

    value = loss[0] if logits.ndim == 1 else loss
    return Tensor._result(value, (logits,), _back, "softmax_xent")


# ---------------------------------------------------------------- image geometry


def resize_bilinear(x: Tensor, out_h: int, out_w: int | None = None) -> Tensor:
    """Bilinear resize of ``(H, W, C)`` or ``(N, H, W, C)`` with half-pixel centres."""
    out_w = out_h if out_w is None else out_w
    if x.ndim not in (3, 4):
        raise DimensionError(f"resize expects rank 3 or 4, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError("resize target must be positive")
    h, w = x.shape[-3], x.shape[-2]
    ay = _kernels.interp_matrix(h, out_h)
    ax = _kernels.interp_matrix(w, out_w)
    return Tensor._result(
        _separable(x.data, ay, ax), (x,), lambda g: (_separable(g, ay.T, ax.T),), "resize"
    )


def _separable(x: np.ndarray, ay: np.ndarray, ax: np.ndarray) -> np.ndarray:
    # rows then columns: (..., H, W, C) -> (..., R, W, C) -> (..., R, S, C)
    tmp = np.matmul(ay, x.reshape(x.shape[:-2] + (-1,)))
    tmp = tmp.reshape(tmp.shape[:-1] + x.shape[-2:])
    return np.matmul(ax, tmp)


def pad2d(x: Tensor, target: int, left: int, top: int) -> Tensor:
    """Place ``(H, W, C)`` on a zero ``target x target`` canvas at ``(left, top)``."""
    if x.ndim != 3:
        raise DimensionError(f"pad2d expects rank 3, got {x.shape}")
    h, w, c = x.shape
    if left < 0 or top < 0 or left + w > target or top + h > target:
        raise DimensionError(f"{h}x{w} image at ({left}, {top}) does not fit {target}x{target}")
    out = np.zeros((target, target, c))
    out[top:top + h, left:left + w] = x.data
    return Tensor._result(out, (x,), lambda g: (g[top:top + h, left:left + w].copy(),), "pad")


def pattern_stack(x: Tensor, resize_to, pad_left, pad_top, flip, target: int) -> Tensor:
    """Flip, resize and pad one ``(H, W, C)`` image under several geometries.

    Output is ``(P, target, target, C)``, one slice per geometry.  This is
    the fused form of ``pad2d(resize_bilinear(flip_lr(x)))`` used on hot
    attack paths.
    """
    if x.ndim != 3:
        raise DimensionError(f"pattern_stack expects rank 3, got {x.shape}")
    h, w, _ = x.shape
    for r, left, top in zip(resize_to, pad_left, pad_top):
        if r < 1 or left < 0 or top < 0 or r + left > target or r + top > target:
            raise DimensionError(f"pattern (resize {r}, at {left},{top}) does not fit {target}")
    tables = _kernels.pattern_tables(h, w, resize_to, pad_left, pad_top, flip)
    out = _kernels.pattern_stack(x.data, tables, target)
    return Tensor._result(
        out, (x,), lambda g: (_kernels.pattern_stack_grad(g, tables, h, w),), "pattern_stack"
    )
