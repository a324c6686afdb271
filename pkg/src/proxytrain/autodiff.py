"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations run eagerly (define-by-run): every arithmetic call computes its
value immediately and records how to push a cotangent back to its inputs.
``gradients`` then walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import io
from typing import Callable, Iterable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Operands with incompatible shapes."""

    def __init__(self, op: str, a: tuple, b: tuple):
        super().__init__(f"{op}: incompatible shapes {a} and {b}")
        self.shapes = (a, b)


class NonFiniteError(OverflowError):
    """A NaN or infinity appeared in a tensor value."""


class NonDeterministicError(RuntimeError):
    pass


def _as_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value in tensor of shape {arr.shape}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array that remembers how it was computed.

    Leaf tensors created directly are constants unless ``requires_grad`` is
    set; parameters are simply leaves with ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "_parents", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self.name = name

    @classmethod
    def from_op(cls, data, parents: Iterable[tuple["Tensor", Callable]]) -> "Tensor":
        """Build a non-leaf tensor from a value and ``(input, vjp)`` pairs."""
        with np.errstate(all="ignore"):
            out = cls(data)
        out._parents = tuple((p, fn) for p, fn in parents if p.requires_grad)
        out.requires_grad = bool(out._parents)
        return out

    # ---- basic protocol -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}{', requires_grad=True' if self.requires_grad else ''})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # ---- elementwise arithmetic -----------------------------------------

    def _binary(self, other, op: str, fwd, da, db) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, other.data
        try:
            with np.errstate(all="ignore"):
                value = fwd(a, b)
        except ValueError:
            raise ShapeError(op, a.shape, b.shape) from None
        return Tensor.from_op(value, [
            (self, lambda g: _unbroadcast(da(g, a, b, value), a.shape)),
            (other, lambda g: _unbroadcast(db(g, a, b, value), b.shape)),
        ])

    def __add__(self, other):
        return self._binary(other, "add", np.add, lambda g, a, b, v: g, lambda g, a, b, v: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, "sub", np.subtract, lambda g, a, b, v: g, lambda g, a, b, v: -g)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        return self._binary(other, "mul", np.multiply,
                            lambda g, a, b, v: g * b, lambda g, a, b, v: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, "div", np.divide,
                            lambda g, a, b, v: g / b, lambda g, a, b, v: -g * a / (b * b))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor.from_op(-self.data, [(self, lambda g: -g)])

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self.data
        with np.errstate(all="ignore"):
            value = a ** exponent
        return Tensor.from_op(value, [(self, lambda g: g * exponent * a ** (exponent - 1))])

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul", a.shape, b.shape)
        try:
            value = np.matmul(a, b)
        except ValueError:
            raise ShapeError("matmul", a.shape, b.shape) from None
        return Tensor.from_op(value, [
            (self, lambda g: _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)),
            (other, lambda g: _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)),
        ])

    # ---- unary functions ------------------------------------------------

    def exp(self) -> "Tensor":
        with np.errstate(all="ignore"):
            value = np.exp(self.data)
        return Tensor.from_op(value, [(self, lambda g: g * value)])

    def log(self) -> "Tensor":
        a = self.data
        with np.errstate(all="ignore"):
            value = np.log(a)
        return Tensor.from_op(value, [(self, lambda g: g / a)])

    def sqrt(self) -> "Tensor":
        with np.errstate(all="ignore"):
            value = np.sqrt(self.data)
        return Tensor.from_op(value, [(self, lambda g: g * 0.5 / value)])

    def relu(self) -> "Tensor":
        # derivative is taken as 0 at exactly 0 (hinge boundary convention)
        mask = self.data > 0
        return Tensor.from_op(np.where(mask, self.data, 0.0), [(self, lambda g: g * mask)])

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)
        return Tensor.from_op(np.abs(self.data), [(self, lambda g: g * sign)])

    # ---- reductions -----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        value = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return Tensor.from_op(value, [(self, vjp)])

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if np.isscalar(axis) else axis
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        """Maximum along one axis; on ties the first index receives the gradient."""
        a = self.data
        if axis is None:
            flat = a.reshape(-1)
            idx = int(np.argmax(flat))
            value = flat[idx]

            def vjp(g):
                out = np.zeros(flat.shape)
                out[idx] = g
                return out.reshape(a.shape)

            return Tensor.from_op(np.array(value), [(self, vjp)])
        idx = np.expand_dims(np.argmax(a, axis=axis), axis)
        value = np.take_along_axis(a, idx, axis=axis)

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            out = np.zeros(a.shape)
            np.put_along_axis(out, idx, g, axis=axis)
            return out

        return Tensor.from_op(value if keepdims else np.squeeze(value, axis), [(self, vjp)])

    # ---- shape manipulation ---------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            value = self.data.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", old, shape) from None
        return Tensor.from_op(value, [(self, lambda g: g.reshape(old))])

    def transpose(self, *axes) -> "Tensor":
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        return Tensor.from_op(self.data.transpose(axes), [(self, lambda g: g.transpose(inverse))])

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, index, g)
            return out

        return Tensor.from_op(self.data[index], [(self, vjp)])


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def where(mask, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = np.where(mask, a.data, b.data)
    except ValueError:
        raise ShapeError("where", a.shape, b.shape) from None
    return Tensor.from_op(value, [
        (a, lambda g: _unbroadcast(np.where(mask, g, 0.0), a.shape)),
        (b, lambda g: _unbroadcast(np.where(mask, 0.0, g), b.shape)),
    ])


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    out = (x - shift).exp().sum(axis=axis, keepdims=True).log() + shift
    if not keepdims:
        out = out.reshape(np.squeeze(out.data, axis).shape)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x - logsumexp(x, axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return log_softmax(x, axis=axis).exp()


# ---- gradients ------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to each named parameter.

    Parameters that do not influence ``loss`` get zero arrays.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None) if node._parents else grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node._parents:
            contrib = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
    return out


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                      eps: float = 1e-6) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the loss from the current contents of
    ``params``. The error for each entry is
    ``|g_analytic - g_fd| / max(1, |g_fd|)``.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    first = loss_fn()
    again = loss_fn()
    if first.data.tobytes() != again.data.tobytes():
        raise NonDeterministicError("loss_fn returned different values on repeated calls")
    analytic = gradients(first, params)
    worst = 0.0
    for name, p in params.items():
        original = p.data
        flat = original.reshape(-1)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + eps
            p.data = bumped.reshape(original.shape)
            up = loss_fn().item()
            bumped[i] = flat[i] - eps
            p.data = bumped.reshape(original.shape)
            down = loss_fn().item()
            p.data = original
            fd = (up - down) / (2 * eps)
            err = abs(analytic[name].reshape(-1)[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst


# ---- text serialization ---------------------------------------------------


def dumps(t) -> str:
    """Header ``shape: d1 d2 ...`` then the row-major values, 17 significant digits."""
    arr = t.data if isinstance(t, Tensor) else _as_array(t)
    lines = ["shape: " + " ".join(str(d) for d in arr.shape)]
    lines.extend(" ".join(f"{v:.17g}" for v in row)
                 for row in arr.reshape(arr.shape[0] if arr.ndim else 1, -1))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Tensor:
    head, _, body = text.partition("\n")
    if not head.startswith("shape:"):
        raise ValueError("missing 'shape:' header")
    shape = tuple(int(d) for d in head[len("shape:"):].split())
    values = np.loadtxt(io.StringIO(body), dtype=np.float64, ndmin=1).reshape(-1)
    if values.size != int(np.prod(shape)):
        raise ValueError(f"header promises {int(np.prod(shape))} values, found {values.size}")
    return Tensor(values.reshape(shape))


def save(t, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(t))


def load(path) -> Tensor:
    with open(path) as fh:
        return loads(fh.read())
