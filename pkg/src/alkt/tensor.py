"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent.  The
graph is rebuilt on every forward pass, so batch shapes may change freely.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "is_grad_enabled",
    "matmul",
    "add_bias",
    "relu",
    "conv2d",
    "global_avg_pool",
    "flatten",
    "reshape",
    "square",
    "sum",
    "mean",
    "l2_norm",
    "l2_normalize",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "mse",
    "l1",
    "check_finite",
]

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


def _shape_error(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray.  ``grad`` is populated by
    :meth:`backward` on leaf tensors that require gradients and accumulates
    until :meth:`zero_grad` is called.
    """

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.node_id = next(_ids)
        needs = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = parents
            out._backward = backward
        else:
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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff -------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward: tensor does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))

        # intermediate grads live only for the duration of this call
        grads: dict[int, np.ndarray] = {self.node_id: np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(p.node_id)
                grads[p.node_id] = pg if prev is None else prev + pg

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> Tensor:
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return _add(self, -_as_tensor(other))

    def __rsub__(self, other) -> Tensor:
        return _add(_as_tensor(other), -self)

    def __neg__(self) -> Tensor:
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other) -> Tensor:
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return _div(self, other)
        return _mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other) -> Tensor:
        return _div(_as_tensor(other), self)

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> Tensor:
        return sum(self, axis)

    def mean(self) -> Tensor:
        return mean(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_elementwise(op: str, a: np.ndarray, b: np.ndarray) -> None:
    # only equal shapes, or a scalar on either side
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise _shape_error(op, a.shape, b.shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def _mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a.data, b.data)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def _div(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("div", a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return Tensor._from_op(out, (a, b), backward)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return Tensor._from_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-feature (2-D input) or per-channel (4-D input) bias."""
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise _shape_error("add_bias", x.shape, b.shape)
    view = (1, -1) + (1,) * (x.ndim - 2)
    red = (0,) + tuple(range(2, x.ndim))
    return Tensor._from_op(
        x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=red))
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return Tensor._from_op(
            np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),)
        )
    ax = axis % x.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return Tensor._from_op(x.data.sum(axis=ax), (x,), backward)


def mean(x: Tensor) -> Tensor:
    return sum(x) * (1.0 / x.data.size)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the first."""
    return reshape(x, (x.shape[0], -1))


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=axis))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (xd * np.expand_dims(scale, axis),)

    return Tensor._from_op(n, (x,), backward)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row of a 2-D tensor to unit L2 norm.

    Rows whose norm is below ``eps`` map to the zero vector and pass no
    gradient.
    """
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize: expected 2-D input, got shape {x.shape}")
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=1, keepdims=True))
    live = n >= eps
    safe = np.where(live, n, 1.0)
    y = np.where(live, xd / safe, 0.0)

    def backward(g):
        proj = (y * g).sum(axis=1, keepdims=True)
        return (np.where(live, (g - y * proj) / safe, 0.0),)

    return Tensor._from_op(y, (x,), backward)


# -- convolution ---------------------------------------------------------------


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` (B, C, H, W) with ``k`` (O, C, s, s)."""
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.ndim != 4 or k.ndim != 4 or x.shape[1] != k.shape[1] or k.shape[2] != k.shape[3]:
        raise _shape_error("conv2d", x.shape, k.shape)
    B, C, H, W = x.shape
    O, _, ks, _ = k.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < ks or Wp < ks:
        raise _shape_error("conv2d", x.shape, k.shape)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (ks, ks), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * ks * ks)
    kflat = k.data.reshape(O, -1)
    out = (cols @ kflat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        dk = (g2.T @ cols).reshape(k.shape)
        dcols = (g2 @ kflat).reshape(B, Ho, Wo, C, ks, ks)
        dxp = np.zeros_like(xp)
        for i in range(ks):
            for j in range(ks):
                dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding : padding + H, padding : padding + W]
        return dx, dk

    return Tensor._from_op(np.ascontiguousarray(out), (x, k), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over spatial axes: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-D input, got shape {x.shape}")
    shape = x.shape
    area = shape[2] * shape[3]

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / area, shape).copy(),)

    return Tensor._from_op(x.data.mean(axis=(2, 3)), (x,), backward)


# -- probabilities and losses --------------------------------------------------


def _softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    p = _softmax_np(logits.data, axis)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(p, (logits,), backward)


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (logits,), backward)


def cross_entropy(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``log_probs``."""
    labels = np.asarray(labels, dtype=np.intp)
    if log_probs.ndim != 2 or labels.shape != (log_probs.shape[0],):
        raise _shape_error("cross_entropy", log_probs.shape, labels.shape)
    n = labels.shape[0]
    rows = np.arange(n)
    picked = log_probs.data[rows, labels]

    def backward(g):
        d = np.zeros_like(log_probs.data)
        d[rows, labels] = -g / n
        return (d,)

    return Tensor._from_op(np.asarray(-picked.mean()), (log_probs,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("mse", a.shape, b.shape)
    return mean(square(a - b))


def l1(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("l1", a.shape, b.shape)
    d = a.data - b.data
    s = np.sign(d)
    n = d.size
    return Tensor._from_op(
        np.asarray(np.abs(d).mean()), (a, b), lambda g: (g * s / n, -g * s / n)
    )


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x
