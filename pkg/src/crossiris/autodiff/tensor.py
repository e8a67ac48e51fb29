"""Dense tensor with tape-free reverse-mode differentiation.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``Tensor.backward`` walks the graph in reverse topological
order and accumulates into the ``grad`` of leaf tensors that require it.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    # float64 is kept so finite-difference oracles can run in double precision
    if arr.dtype != np.float64:
        arr = arr.astype(np.float32, copy=False)
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {what}")


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- construction of op outputs -------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: Iterable["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        _check_finite(out.data, "forward output")
        parents = tuple(parents)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- reverse pass -------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Only scalar outputs may be differentiated without an explicit seed.
        Calling twice without zeroing doubles the leaf gradients.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        _check_finite(self.data, "loss")
        if not self.requires_grad:
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                _check_finite(pg, "gradient")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = _wrap(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = _wrap(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other) -> "Tensor":
        return _wrap(other, self.dtype) - self

    def __mul__(self, other) -> "Tensor":
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data

        def backward(g):
            return (
                unbroadcast(g * b, a.shape) if self.requires_grad else None,
                unbroadcast(g * a, b.shape) if other.requires_grad else None,
            )

        return Tensor._make(a * b, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data

        def backward(g):
            return (
                unbroadcast(g / b, a.shape) if self.requires_grad else None,
                unbroadcast(-g * a / (b * b), b.shape) if other.requires_grad else None,
            )

        return Tensor._make(a / b, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return _wrap(other, self.dtype) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return Tensor._make(
            a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),)
        )

    def __matmul__(self, other: "Tensor") -> "Tensor":
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")

        def backward(g):
            return (
                g @ b.T if self.requires_grad else None,
                a.T @ g if other.requires_grad else None,
            )

        return Tensor._make(a @ b, (self, other), backward)

    # -- reductions and reshaping ---------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(
            np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward
        )

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def flatten(self, start: int = 1) -> "Tensor":
        return self.reshape(self.shape[:start] + (-1,))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),)
        )

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape
        dtype = self.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(np.array(self.data[index]), (self,), backward)

    # -- elementwise functions --------------------------------------------
    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self, eps: float = 0.0) -> "Tensor":
        """Natural log; with ``eps > 0`` inputs are clamped to ``[eps, inf)``
        and the clamped region gets zero gradient."""
        a = self.data
        if eps > 0:
            clamped = np.maximum(a, eps)
            live = a >= eps
            return Tensor._make(
                np.log(clamped), (self,), lambda g: (np.where(live, g / clamped, 0),)
            )
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def abs(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.abs(a), (self,), lambda g: (g * np.sign(a),))

    def square(self) -> "Tensor":
        a = self.data
        return Tensor._make(a * a, (self,), lambda g: (2 * g * a,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g / (2 * out),))

    def clamp_min(self, low: float) -> "Tensor":
        a = self.data
        live = a > low
        return Tensor._make(np.maximum(a, low), (self,), lambda g: (g * live,))


class Parameter(Tensor):
    """Trainable leaf tensor; ``name`` is its dotted path inside a network."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, backward
    )


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the origin is 0."""
    a = x.data
    n = np.sqrt((a * a).sum(axis=axis))

    def backward(g):
        safe = np.where(n > 0, n, 1)
        scale = np.where(n > 0, g / safe, 0)
        return (np.expand_dims(scale, axis) * a,)

    return Tensor._make(n, (x,), backward)


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a_shape, b_shape = a.shape, b.shape
    return Tensor._make(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (unbroadcast(np.where(cond, g, 0), a_shape),
                   unbroadcast(np.where(cond, 0, g), b_shape)),
    )
