"""
Minimal dense reverse-mode automatic differentiation on numpy.

Every backward rule is itself written with Tensor operations, so a backward
pass can be recorded on the tape (``create_graph=True``). That second tape is
what the gradient penalty differentiates through.

Data is always float64.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from overlapgan.errors import NonFiniteError, ShapeError

# Log arguments are clamped at exp(LOG_FLOOR).
LOG_FLOOR = -30.0
PROB_FLOOR = float(np.exp(LOG_FLOOR))

_grad_mode = threading.local()


def is_grad_enabled() -> bool:
    """Whether new operations are recorded on the tape (per thread)."""
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def set_grad_enabled(mode: bool) -> Iterator[None]:
    """Temporarily switch tape recording on or off for this thread."""
    previous = is_grad_enabled()
    _grad_mode.enabled = mode
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def no_grad():
    """Context manager that disables tape recording."""
    return set_grad_enabled(False)


@contextmanager
def frozen(params: Iterable["Tensor"]) -> Iterator[None]:
    """
    Treat ``params`` as constants for the duration of the block.

    Gradients still flow *through* operations that use them, but never
    *into* them.
    """
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


BackwardFn = Callable[["Tensor"], Sequence["Tensor | None"]]


def _as_tensor(value) -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: "Tensor", shape: tuple[int, ...]) -> "Tensor":
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense float64 array that may participate in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"
        self.name = name

    @classmethod
    def _make(cls, data, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.requires_grad = track
        out.grad = None
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        out._op = op
        out.name = None
        return out

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # ── properties ──────────────────────────────────────────────

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # ── elementwise arithmetic ──────────────────────────────────

    def _broadcast_data(self, other: "Tensor", op: str, fn) -> np.ndarray:
        try:
            return fn(self.data, other.data)
        except ValueError:
            raise ShapeError(op, self.shape, other.shape) from None

    def __add__(self, other) -> "Tensor":
        a, b = self, _as_tensor(other)
        data = a._broadcast_data(b, "add", np.add)

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(data, (a, b), backward, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def backward(g):
            return (-g,)

        return Tensor._make(-a.data, (a,), backward, "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        a, b = self, _as_tensor(other)
        data = a._broadcast_data(b, "mul", np.multiply)

        def backward(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._make(data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("Tensor exponents are not supported; use a Python scalar")
        a, p = self, float(exponent)
        with np.errstate(divide="ignore", invalid="ignore"):
            data = np.power(a.data, p)

        def backward(g):
            return (g * (a ** (p - 1.0)) * p,)

        return Tensor._make(data, (a,), backward, "pow")

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / float(other))

    def __rtruediv__(self, other) -> "Tensor":
        return _as_tensor(other) * self ** -1.0

    def affine(self, scale: float, shift: float = 0.0) -> "Tensor":
        """Scalar affine map ``scale * x + shift``."""
        return self * float(scale) + float(shift)

    # ── linear algebra and shape ────────────────────────────────

    def __matmul__(self, other) -> "Tensor":
        a, b = self, _as_tensor(other)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)

        def backward(g):
            return g @ b.T, a.T @ g

        return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")

    def transpose(self) -> "Tensor":
        a = self

        def backward(g):
            return (g.transpose(),)

        return Tensor._make(a.data.T, (a,), backward, "transpose")

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            data = a.data.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", a.shape, tuple(shape)) from None

        def backward(g):
            return (g.reshape(a.shape),)

        return Tensor._make(data, (a,), backward, "reshape")

    def broadcast_to(self, shape: tuple[int, ...]) -> "Tensor":
        a = self
        try:
            data = np.broadcast_to(a.data, shape).copy()
        except ValueError:
            raise ShapeError("broadcast_to", a.shape, tuple(shape)) from None

        def backward(g):
            return (_unbroadcast(g, a.shape),)

        return Tensor._make(data, (a,), backward, "broadcast")

    def __getitem__(self, index) -> "Tensor":
        a = self
        data = a.data[index]

        def backward(g):
            return (g._scatter(a.shape, index),)

        return Tensor._make(np.array(data), (a,), backward, "getitem")

    def _scatter(self, shape: tuple[int, ...], index) -> "Tensor":
        """Adjoint of ``__getitem__``: place self into zeros of ``shape``."""
        a = self
        data = np.zeros(shape, dtype=np.float64)
        np.add.at(data, index, a.data)

        def backward(g):
            return (g[index],)

        return Tensor._make(data, (a,), backward, "scatter")

    # ── reductions ──────────────────────────────────────────────

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not keepdims:
                if axis is None:
                    kept = (1,) * a.ndim
                else:
                    axes = (axis,) if isinstance(axis, int) else tuple(axis)
                    axes = tuple(ax % a.ndim for ax in axes)
                    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
                g = g.reshape(kept)
            return (g.broadcast_to(a.shape),)

        return Tensor._make(data, (a,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[ax] for ax in axes]))
        if count == 0:
            raise ShapeError("mean", self.shape)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def logsumexp(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        a = self
        peak = a.data.max(axis=axis, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, 0.0)
        kept = peak + np.log(np.exp(a.data - peak).sum(axis=axis, keepdims=True))
        data = kept if keepdims else np.squeeze(kept, axis=axis)

        def backward(g):
            g_kept = g if keepdims else g.reshape(kept.shape)
            out_kept = out if keepdims else out.reshape(kept.shape)
            return (g_kept * (a - out_kept).exp(),)

        out = Tensor._make(data, (a,), backward, "logsumexp")
        return out

    # ── nonlinearities ──────────────────────────────────────────

    def exp(self) -> "Tensor":
        a = self

        def backward(g):
            return (g * out,)

        out = Tensor._make(np.exp(a.data), (a,), backward, "exp")
        return out

    def log(self) -> "Tensor":
        a = self
        with np.errstate(divide="ignore", invalid="ignore"):
            data = np.log(a.data)

        def backward(g):
            return (g / a,)

        return Tensor._make(data, (a,), backward, "log")

    def clamp_min(self, floor: float) -> "Tensor":
        a = self
        mask = (a.data > floor).astype(np.float64)

        def backward(g):
            return (g * mask,)

        return Tensor._make(np.maximum(a.data, floor), (a,), backward, "clamp_min")

    def safe_log(self) -> "Tensor":
        """``log(max(x, exp(-30)))``; zero gradient below the floor."""
        return self.clamp_min(PROB_FLOOR).log()

    def relu(self) -> "Tensor":
        a = self
        mask = (a.data > 0).astype(np.float64)

        def backward(g):
            return (g * mask,)

        return Tensor._make(a.data * mask, (a,), backward, "relu")

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        a = self
        factor = np.where(a.data > 0, 1.0, float(slope))

        def backward(g):
            return (g * factor,)

        return Tensor._make(a.data * factor, (a,), backward, "leaky_relu")

    def tanh(self) -> "Tensor":
        a = self

        def backward(g):
            return (g * (1.0 - out * out),)

        out = Tensor._make(np.tanh(a.data), (a,), backward, "tanh")
        return out

    def sigmoid(self) -> "Tensor":
        a = self

        def backward(g):
            return (g * out * (1.0 - out),)

        out = Tensor._make(expit(a.data), (a,), backward, "sigmoid")
        return out

    def softplus(self) -> "Tensor":
        a = self

        def backward(g):
            return (g * a.sigmoid(),)

        return Tensor._make(np.logaddexp(0.0, a.data), (a,), backward, "softplus")

    def log_sigmoid(self) -> "Tensor":
        return -((-self).softplus())

    def log_softmax(self, axis: int = -1) -> "Tensor":
        return self - self.logsumexp(axis=axis, keepdims=True)

    def softmax(self, axis: int = -1) -> "Tensor":
        return self.log_softmax(axis=axis).exp()

    def _safe_reciprocal(self) -> "Tensor":
        """``1/x`` where ``x > 0``, else 0."""
        a = self
        positive = a.data > 0
        with np.errstate(divide="ignore"):
            data = np.where(positive, 1.0 / np.where(positive, a.data, 1.0), 0.0)

        def backward(g):
            return (-(g * out * out),)

        out = Tensor._make(data, (a,), backward, "safe_reciprocal")
        return out

    def row_norm(self) -> "Tensor":
        """
        Euclidean norm of each row of a 2-D tensor.

        The derivative at a zero row is defined as 0.
        """
        a = self
        if a.ndim != 2:
            raise ShapeError("row_norm", a.shape)
        data = np.sqrt((a.data ** 2).sum(axis=1))

        def backward(g):
            scale = (g * out._safe_reciprocal()).reshape(a.shape[0], 1)
            return (a * scale,)

        out = Tensor._make(data, (a,), backward, "row_norm")
        return out

    def dropout(self, rate: float, train: bool, rng: np.random.Generator | None = None) -> "Tensor":
        """Inverted dropout; identity in eval mode."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        if not train or rate == 0.0:
            return self
        if rng is None:
            raise ValueError("dropout in train mode needs an RNG stream")
        keep = (rng.random(self.shape) >= rate).astype(np.float64) / (1.0 - rate)
        return self * keep

    # ── backward pass ───────────────────────────────────────────

    def backward(self) -> None:
        """
        Populate ``.grad`` on every tracked ancestor of this scalar.

        Gradients accumulate across calls until ``zero_grad``.
        """
        if self.data.size != 1:
            raise ShapeError("backward (loss must be scalar)", self.shape)
        if not self.requires_grad:
            return
        order, grads = _propagate(self, Tensor(np.ones_like(self.data)), create_graph=False)
        for node in order:
            g = grads.get(id(node))
            if g is None:
                continue
            node.grad = g.data.copy() if node.grad is None else node.grad + g.data


def _topological_order(root: Tensor) -> list[Tensor]:
    """Tracked ancestors of ``root``, inputs before outputs."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _propagate(root: Tensor, seed: Tensor, create_graph: bool) -> tuple[list[Tensor], dict[int, Tensor]]:
    order = _topological_order(root)
    grads: dict[int, Tensor] = {id(root): seed}
    with set_grad_enabled(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                previous = grads.get(id(parent))
                grads[id(parent)] = parent_grad if previous is None else previous + parent_grad
    return order, grads


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """
    Gradients of a scalar ``output`` with respect to ``inputs``.

    Does not touch ``.grad``. With ``create_graph=True`` the returned
    gradients are themselves on the tape and can be differentiated again.
    Inputs that ``output`` does not depend on get zero gradients.
    """
    if output.data.size != 1:
        raise ShapeError("grad (output must be scalar)", output.shape)
    if not output.requires_grad:
        return [Tensor(np.zeros_like(t.data)) for t in inputs]
    _, grads = _propagate(output, Tensor(np.ones_like(output.data)), create_graph)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None:
            result.append(Tensor(np.zeros_like(t.data)))
        else:
            result.append(g if create_graph else g.detach())
    return result


# ── functional forms ────────────────────────────────────────────


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; all other dims must agree."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    first = tensors[0]
    axis = axis % first.ndim
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            s1 != s2 for i, (s1, s2) in enumerate(zip(first.shape, t.shape)) if i != axis
        ):
            raise ShapeError("concat", first.shape, t.shape)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        parts = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            index = tuple(slice(int(start), int(stop)) if i == axis else slice(None) for i in range(g.ndim))
            parts.append(g[index])
        return parts

    return Tensor._make(data, tensors, backward, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


def relu(x: Tensor) -> Tensor:
    return x.relu()


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return x.leaky_relu(slope)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x.softmax(axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x.log_softmax(axis)


def ensure_finite(label: str, value) -> None:
    """Raise ``NonFiniteError`` if ``value`` holds NaN or inf."""
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NonFiniteError(f"{label} is not finite ({bad} bad entr{'y' if bad == 1 else 'ies'})")
