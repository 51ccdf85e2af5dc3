"""Reverse-mode automatic differentiation over numpy arrays.

The computation graph doubles as the gradient tape: every operation on Var
nodes records its parents and a vector-Jacobian closure, and backward() walks
the graph once in reverse topological order. Graphs built from identical
inputs replay to identical gradients; reductions are plain ordered numpy sums,
so results do not depend on scheduling.

Subgraphs that involve no tracked leaf are folded to constants immediately,
which keeps purely numeric uses (oracle tests, manufactured solutions) cheap.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


class Var:
    """Array-valued node of the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._vjp = None

    # numpy must defer to the reflected dunders below instead of broadcasting
    # element-wise over this object
    __array_ufunc__ = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # arithmetic delegates to the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not supported")
        return mul(self, 1.0 / other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self) -> "Var":
        return transpose(self)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value: Array, parents: tuple[Var, ...], vjp) -> Var:
    if not any(p.requires_grad for p in parents):
        return Var(value)
    out = Var(value, requires_grad=True)
    out._parents = parents
    out._vjp = vjp
    return out


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), -_unbroadcast(g, b.value.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    need_a, need_b = a.requires_grad, b.requires_grad
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape) if need_a else None,
            _unbroadcast(g * a.value, b.value.shape) if need_b else None,
        ),
    )


def power(a, exponent: float) -> Var:
    a = as_var(a)
    if isinstance(exponent, Var):
        raise TypeError("Var exponents are not supported")
    return _node(
        a.value**exponent,
        (a,),
        lambda g: (g * exponent * a.value ** (exponent - 1),),
    )


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    need_a, need_b = a.requires_grad, b.requires_grad
    return _node(
        a.value @ b.value,
        (a, b),
        lambda g: (
            g @ b.value.T if need_a else None,
            a.value.T @ g if need_b else None,
        ),
    )


def transpose(a) -> Var:
    a = as_var(a)
    return _node(a.value.T, (a,), lambda g: (g.T,))


def tanh(a) -> Var:
    a = as_var(a)
    t = np.tanh(a.value)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a) -> Var:
    a = as_var(a)
    e = np.exp(a.value)
    return _node(e, (a,), lambda g: (g * e,))


def sqrt(a) -> Var:
    a = as_var(a)
    s = np.sqrt(a.value)
    return _node(s, (a,), lambda g: (g / (2.0 * s),))


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    if axis is None:
        n = a.value.size
    else:
        n = a.value.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) / n


def reshape(a, shape) -> Var:
    a = as_var(a)
    return _node(
        a.value.reshape(shape), (a,), lambda g: (g.reshape(a.value.shape),)
    )


def take(a, idx) -> Var:
    """Basic or integer-array indexing; indices must not repeat."""
    a = as_var(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[idx] = g
        return (out,)

    return _node(a.value[idx], (a,), vjp)


def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Var) -> None:
    """Populate .grad on every tracked ancestor of a scalar root."""
    if root.value.ndim != 0 and root.value.size != 1:
        raise ValueError("backward expects a scalar root")
    if not root.requires_grad:
        raise ValueError("root does not depend on any tracked variable")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad or g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def grad(root: Var, leaves) -> list[Array]:
    """Gradient of a scalar root with respect to each leaf Var.

    Leaves the root does not depend on get zero gradients; a constant root
    yields all zeros.
    """
    leaves = list(leaves)
    for leaf in leaves:
        leaf.grad = None
    if root.requires_grad:
        backward(root)
    return [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for leaf in leaves
    ]
