"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation builds its result eagerly and, when any input requires a
gradient, records a closure mapping the output gradient to one gradient per
input. ``backward`` walks the recorded graph once in reverse topological order.
A graph can be differentiated exactly once; the next batch builds a new one.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DimensionError, DomainError, StateError, VerificationError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording any graph (inference, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._done = False

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t._done = False
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> list:
        """Entries in row-major order."""
        return self.data.ravel().tolist()

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise DomainError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of a differentiable operation.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    Used by the built-in ops and by fused ops defined elsewhere.
    """
    out = Tensor._wrap(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._done:
            raise StateError("graph already differentiated; run a new forward pass")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                # leaves keep a private buffer so later adds can be in place
                p.grad = np.array(g, dtype=np.float64) if p._backward is None else g
            elif p._backward is None:
                p.grad += g
            else:
                p.grad = p.grad + g
        node._done = True
        node._backward = None
        node._parents = ()


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shape tensors."""
    if not tensors:
        raise DomainError("add_n of an empty list")
    for t in tensors[1:]:
        _check_same("add_n", tensors[0], t)
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out = out + t.data
    return record(out, tuple(tensors), lambda g: (g,) * len(tensors))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. ``a`` may also be a vector, treated as one row."""
    ad, bd = a.data, b.data
    if bd.ndim != 2 or ad.ndim not in (1, 2) or ad.shape[-1] != bd.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        ga = g @ bd.T
        gb = np.outer(ad, g) if ad.ndim == 1 else ad.T @ g
        return ga, gb

    return record(ad @ bd, (a, b), grad_fn)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with the bias added to every row of ``x``."""
    xd, wd, bd = x.data, w.data, b.data
    if wd.ndim != 2 or xd.ndim not in (1, 2) or xd.shape[-1] != wd.shape[0]:
        raise DimensionError(f"affine: cannot multiply shapes {x.shape} and {w.shape}")
    if bd.shape != (wd.shape[1],):
        raise DimensionError(f"affine: bias shape {b.shape} does not match weight {w.shape}")

    def grad_fn(g):
        if xd.ndim == 1:
            return g @ wd.T, np.outer(xd, g), g
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return record(xd @ wd + bd, (x, w, b), grad_fn)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return record(a.data.T, (a,), lambda g: (g.T,))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return record(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, stabilised by subtracting the row max."""
    if a.data.ndim not in (1, 2):
        raise DimensionError(f"softmax_rows needs a vector or matrix, got {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record(y, (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except (ValueError, np.exceptions.AxisError) as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    ax = axis % out.ndim
    bounds = np.cumsum([a.shape[ax] for a in arrays])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return record(out, tuple(tensors), grad_fn)


def stack(vectors: Sequence[Tensor]) -> Tensor:
    """Stack same-width vectors as the rows of a matrix."""
    if not vectors:
        raise DimensionError("stack of an empty list")
    for v in vectors:
        if v.data.ndim != 1 or v.data.shape != vectors[0].data.shape:
            raise DimensionError(f"stack: incompatible shapes {[t.shape for t in vectors]}")
    out = np.stack([v.data for v in vectors])
    return record(out, tuple(vectors), lambda g: tuple(g))


def row(a: Tensor, i: int) -> Tensor:
    """Row ``i`` of a matrix as a vector."""
    shape = a.data.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[i] = g
        return (full,)

    return record(a.data[i].copy(), (a,), grad_fn)


def reduce(kind: str, a: Tensor, axis: int = 0) -> Tensor:
    """Max or mean over ``axis``.

    Max sends the gradient to the first maximal entry along the axis.
    """
    ad = a.data
    if ad.ndim == 0 or ad.shape[axis] == 0:
        raise DomainError(f"reduce over empty axis {axis} of shape {a.shape}")
    if kind == "mean":
        n = ad.shape[axis]

        def grad_fn(g):
            return (np.broadcast_to(np.expand_dims(g, axis) / n, ad.shape).copy(),)

        return record(ad.mean(axis=axis), (a,), grad_fn)
    if kind == "max":
        idx = np.expand_dims(ad.argmax(axis=axis), axis)
        out = np.take_along_axis(ad, idx, axis=axis).squeeze(axis)

        def grad_fn(g):
            full = np.zeros_like(ad)
            np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
            return (full,)

        return record(out, (a,), grad_fn)
    raise DomainError(f"unknown reduction {kind!r}")


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return record(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def detach(a: Tensor) -> Tensor:
    """Same values, cut from the graph."""
    return Tensor._wrap(a.data)


class ParamStore(Mapping):
    """Named trainable tensors, iterated in lexicographic name order."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise DomainError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def subset(self, prefixes: str | Iterable[str]) -> "ParamStore":
        """View over the parameters whose names start with any of ``prefixes``."""
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        prefixes = tuple(prefixes)
        sub = ParamStore()
        sub._params = {k: v for k, v in self._params.items() if k.startswith(prefixes)}
        return sub

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: self._params[name].data.copy() for name in self}

    def __repr__(self):
        return f"ParamStore({len(self)} tensors, {self.num_scalars()} scalars)"


class FiniteDiffReport(dict):
    """Maps parameter name to its max relative gradient error."""

    @property
    def max_error(self) -> float:
        return max(self.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self, key=self.get) if self else None


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def finite_diff_check(f: Callable[[ParamStore], Tensor], params: ParamStore,
                      h: float = 1e-5) -> FiniteDiffReport:
    """Compare backward gradients of ``f`` with central differences.

    Relative error per entry is ``|a - b| / max(1, |a|, |b|)``.
    """
    if h <= 0:
        raise DomainError(f"step h must be positive, got {h}")
    params.zero_grad()
    loss = f(params)
    base = _scalar(loss)
    if isinstance(loss, Tensor):
        backward(loss)
    with no_grad():
        again = _scalar(f(params))
    if again != base:
        raise VerificationError(f"f is not deterministic: {base!r} then {again!r}")

    report = FiniteDiffReport()
    with no_grad():
        for name in params:
            t = params[name]
            worst = 0.0
            for idx in np.ndindex(t.data.shape):
                orig = t.data[idx]
                t.data[idx] = orig + h
                up = _scalar(f(params))
                t.data[idx] = orig - h
                down = _scalar(f(params))
                t.data[idx] = orig
                numeric = (up - down) / (2.0 * h)
                a = t.grad[idx]
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, err)
            report[name] = worst
    return report
