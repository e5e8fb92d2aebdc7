"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: each operation records its parents and a backward closure, and
``Tensor.backward()`` on a scalar accumulates gradients into every reachable
tensor with ``requires_grad=True``. The op set is deliberately small -- just
what the fitting objective needs -- and everything runs on numpy, CPU only.

Gradients accumulate across backward calls until ``zero_grad`` is invoked.
Index-style ops (``gather``, ``min`` over an axis, ``__getitem__``) route the
gradient only to the selected elements; selection indices are treated as
constants of the current evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operands cannot be broadcast / multiplied together."""


class DomainError(ValueError):
    """log/sqrt applied outside their domain (clamp first if intended)."""


class NanGradientError(RuntimeError):
    """An optimizer step was rejected because a gradient contained NaN."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    # make numpy defer to our reflected operators instead of building
    # object arrays out of ndarray <op> Tensor expressions
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- backward pass -------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        `self` must be a scalar (exactly one element).
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    pg = _unbroadcast(pg, parent.data.shape)
                acc = grads.get(id(parent))
                # out-of-place: backward closures may alias their output to g
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        a, b = self, _wrap(other)
        try:
            data = a.data + b.data
        except ValueError as e:
            raise ShapeError(f"add: {a.shape} vs {b.shape}") from e
        return Tensor._from_op(data, (a, b), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, _wrap(other)
        try:
            data = a.data - b.data
        except ValueError as e:
            raise ShapeError(f"sub: {a.shape} vs {b.shape}") from e
        return Tensor._from_op(data, (a, b), lambda g: (g, -g))

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        a, b = self, _wrap(other)
        try:
            data = a.data * b.data
        except ValueError as e:
            raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e
        return Tensor._from_op(data, (a, b), lambda g: (g * b.data, g * a.data))

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _wrap(other)
        try:
            data = a.data / b.data
        except ValueError as e:
            raise ShapeError(f"div: {a.shape} vs {b.shape}") from e
        return Tensor._from_op(
            data, (a, b), lambda g: (g / b.data, -g * a.data / (b.data * b.data))
        )

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents; use exp(b*log(a)) for tensor powers")
        a = self
        data = a.data ** p
        return Tensor._from_op(data, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other):
        a, b = self, _wrap(other)
        try:
            data = a.data @ b.data
        except ValueError as e:
            raise ShapeError(f"matmul: {a.shape} vs {b.shape}") from e

        def back(g):
            A, B = a.data, b.data
            if A.ndim == 1 and B.ndim == 1:
                return g * B, g * A
            if B.ndim == 1:
                ga = np.multiply.outer(g, B)
                axes = tuple(range(g.ndim))
                gb = np.tensordot(g, A, axes=(axes, axes))
                return _unbroadcast(ga, A.shape), gb
            if A.ndim == 1:
                ga = (B @ g[..., None])[..., 0]
                gb = A[:, None] * g[..., None, :]
                return _unbroadcast(ga, A.shape), _unbroadcast(gb, B.shape)
            ga = g @ np.swapaxes(B, -1, -2)
            gb = np.swapaxes(A, -1, -2) @ g
            return _unbroadcast(ga, A.shape), _unbroadcast(gb, B.shape)

        return Tensor._from_op(data, (a, b), back)

    def __rmatmul__(self, other):
        return _wrap(other) @ self

    def __getitem__(self, idx):
        """Basic (non-fancy) indexing with gradient scatter back into place."""
        a = self
        data = a.data[idx]

        def back(g):
            buf = np.zeros_like(a.data)
            buf[idx] = g
            return (buf,)

        return Tensor._from_op(data, (a,), back)

    # -- reductions / reshapes ----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.data.shape).copy(),)

        return Tensor._from_op(data, (a,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def min(self, axis=None):
        """Minimum with index capture; gradient routes to the (first) argmin."""
        a = self
        if axis is None:
            idx = int(np.argmin(a.data))
            data = a.data.reshape(-1)[idx].reshape(())

            def back(g):
                buf = np.zeros_like(a.data)
                buf.reshape(-1)[idx] = g
                return (buf,)

            return Tensor._from_op(data, (a,), back)
        idx = np.argmin(a.data, axis=axis)
        data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

        def back(g):
            buf = np.zeros_like(a.data)
            _scatter_add_along_axis(buf, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
            return (buf,)

        return Tensor._from_op(data, (a,), back)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)
        return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _scatter_add_along_axis(buf, idx, vals, axis):
    ix = list(np.indices(idx.shape, sparse=True))
    ix[axis] = idx
    np.add.at(buf, tuple(ix), vals)


# -- elementwise functions ----------------------------------------------------


def exp(x: Tensor) -> Tensor:
    x = _wrap(x)
    data = np.exp(x.data)
    return Tensor._from_op(data, (x,), lambda g: (g * data,))


def log(x: Tensor) -> Tensor:
    x = _wrap(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log of non-positive value; clamp first if intended")
    return Tensor._from_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    x = _wrap(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt of negative value; clamp first if intended")
    data = np.sqrt(x.data)
    return Tensor._from_op(data, (x,), lambda g: (g * 0.5 / data,))


def absolute(x: Tensor) -> Tensor:
    x = _wrap(x)
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sin(x: Tensor) -> Tensor:
    x = _wrap(x)
    return Tensor._from_op(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x: Tensor) -> Tensor:
    x = _wrap(x)
    return Tensor._from_op(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def sigmoid(x: Tensor) -> Tensor:
    x = _wrap(x)
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return Tensor._from_op(data, (x,), lambda g: (g * data * (1.0 - data),))


def tanh(x: Tensor) -> Tensor:
    x = _wrap(x)
    data = np.tanh(x.data)
    return Tensor._from_op(data, (x,), lambda g: (g * (1.0 - data * data),))


def clamp(x: Tensor, lo=None, hi=None) -> Tensor:
    """Clip to [lo, hi]; gradient is 1 inside the bounds (inclusive), 0 outside."""
    x = _wrap(x)
    data = np.clip(x.data, lo, hi)
    mask = np.ones_like(x.data)
    if lo is not None:
        mask = mask * (x.data >= lo)
    if hi is not None:
        mask = mask * (x.data <= hi)
    return Tensor._from_op(data, (x,), lambda g: (g * mask,))


def where(cond, a, b) -> Tensor:
    """Select elementwise by a constant boolean mask."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _wrap(a), _wrap(b)
    data = np.where(cond, a.data, b.data)
    return Tensor._from_op(
        data, (a, b), lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g))
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return ((g - dot) * s,)

    return Tensor._from_op(s, (x,), back)


# -- shape / combination ops ---------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(data, tuple(tensors), back)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._from_op(data, tuple(tensors), back)


def gather(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """take_along_axis with gradient scattered back to the picked elements."""
    x = _wrap(x)
    index = np.asarray(index)
    data = np.take_along_axis(x.data, index, axis=axis)

    def back(g):
        buf = np.zeros_like(x.data)
        _scatter_add_along_axis(buf, index, g, axis)
        return (buf,)

    return Tensor._from_op(data, (x,), back)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor by an integer index array of any shape."""
    x = _wrap(x)
    index = np.asarray(index)
    data = x.data[index]

    def back(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, index.reshape(-1), g.reshape(-1, x.data.shape[1]))
        return (buf,)

    return Tensor._from_op(data, (x,), back)


def cross(a: Tensor, b: Tensor) -> Tensor:
    """Cross product of 3-vectors along the last axis."""
    a, b = _wrap(a), _wrap(b)
    data = np.cross(a.data, b.data)

    def back(g):
        return (
            _unbroadcast(np.cross(b.data, g), a.data.shape),
            _unbroadcast(np.cross(g, a.data), b.data.shape),
        )

    return Tensor._from_op(data, (a, b), back)


def norm_l2(x: Tensor, axis=-1, keepdims: bool = False, eps: float = 0.0) -> Tensor:
    """Euclidean norm along `axis`; pass eps > 0 to keep the gradient finite at 0."""
    s = (x * x).sum(axis=axis, keepdims=keepdims)
    return sqrt(s + eps) if eps else sqrt(s)


def norm_l1(x: Tensor, axis=-1, keepdims: bool = False) -> Tensor:
    return absolute(x).sum(axis=axis, keepdims=keepdims)


# -- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment estimates for one parameter list."""

    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if self.eps <= 0.0 or self.lr <= 0.0:
            raise ValueError("lr and eps must be positive")


def adam_step(params, grads, state: AdamState) -> None:
    """One bias-corrected Adam update in place.

    Rejects the whole step (raises NanGradientError, state untouched) if any
    gradient contains NaN.
    """
    params = list(params)
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ShapeError(f"grad {i}: {g.shape} vs param {p.data.shape}")
        if np.isnan(g).any():
            raise NanGradientError(f"NaN gradient in parameter {i} (shape {g.shape})")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step_count
    c2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Stateful convenience wrapper around :func:`adam_step`."""

    def __init__(self, params, lr: float = 5e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
