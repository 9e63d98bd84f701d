"""
Minimal reverse-mode automatic differentiation over dense float64 tensors.

Every trainable computation is written with the functions in this module. Each op is
mode-polymorphic: when none of its inputs is a ``Node`` it returns a plain ``numpy``
array and records nothing, so the same code path serves both data generation
(plain mode) and training (tape mode) with bit-identical values.

    tape = Tape()
    w = tape.param("theta.w0", np.ones((2, 2)))
    loss = sum_(square(matmul(x, w)))
    grads = tape.backward(loss)   # {"theta.w0": ndarray}
"""

from __future__ import annotations

from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from inode_lab.core.exceptions import ContractError, ShapeError

ArrayLike = Union["Node", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

MAX_RANK = 3


class Node:
    """A value on a tape together with the rule that pushes gradients to its parents."""

    __slots__ = ("value", "op", "parents", "grad", "tape", "name", "_backward")

    # Make numpy defer to our reflected operators (ndarray + Node -> Node.__radd__).
    __array_ufunc__ = None

    def __init__(
        self,
        value: np.ndarray,
        op: str,
        parents: Tuple[Any, ...],
        backward: Optional[BackwardFn],
        tape: "Tape",
        name: Optional[str] = None,
    ):
        self.value = value
        self.op = op
        self.parents = parents
        self.grad: Optional[np.ndarray] = None
        self.tape = tape
        self.name = name
        self._backward = backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"

    def __add__(self, other: ArrayLike) -> ArrayLike:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> ArrayLike:
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> ArrayLike:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> ArrayLike:
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> ArrayLike:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> ArrayLike:
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> ArrayLike:
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> ArrayLike:
        return div(other, self)

    def __neg__(self) -> ArrayLike:
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> ArrayLike:
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> ArrayLike:
        return matmul(other, self)

    def __getitem__(self, index: Any) -> ArrayLike:
        return getitem(self, index)


class Tape:
    """Ordered record of nodes; construction order is a topological order."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.param_roots: Dict[str, Node] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def param(self, name: str, value: np.ndarray) -> Node:
        """Register a named leaf whose gradient ``backward`` reports."""
        if name in self.param_roots:
            raise ContractError(f"parameter '{name}' registered twice on the same tape")
        arr = _check_rank(np.asarray(value, dtype=np.float64), "param")
        node = Node(arr, "param", (), None, self, name=name)
        self.nodes.append(node)
        self.param_roots[name] = node
        return node

    def params(self, values: Mapping[str, np.ndarray]) -> Dict[str, Node]:
        return {name: self.param(name, value) for name, value in values.items()}

    def backward(self, root: ArrayLike) -> Dict[str, np.ndarray]:
        """Return d(root)/d(p) for every named parameter leaf."""
        if not isinstance(root, Node) or root.tape is not self:
            raise ContractError("backward root must be a node recorded on this tape")
        if root.value.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")

        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.value)

        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node.parents, parent_grads):
                if not isinstance(parent, Node) or g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

        grads: Dict[str, np.ndarray] = {}
        for name, leaf in self.param_roots.items():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.value)
            grads[name] = np.array(leaf.grad, dtype=np.float64).reshape(leaf.value.shape)
        return grads


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def is_node(x: Any) -> bool:
    return isinstance(x, Node)


def value_of(x: ArrayLike) -> np.ndarray:
    """Plain value of a node or array-like."""
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _check_rank(arr: np.ndarray, op: str) -> np.ndarray:
    if arr.ndim > MAX_RANK:
        raise ShapeError(op, arr.shape)
    return arr


def _tape_of(args: Sequence[Any]) -> Optional[Tape]:
    tape: Optional[Tape] = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ContractError("operands recorded on different tapes")
    return tape


def _record(value: np.ndarray, op: str, parents: Tuple[Any, ...], backward: BackwardFn) -> ArrayLike:
    tape = _tape_of(parents)
    value = _check_rank(value, op)
    if tape is None:
        return value
    node = Node(value, op, parents, backward, tape)
    tape.nodes.append(node)
    return node


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# Elementwise binary ops
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    av, bv = value_of(a), value_of(b)
    _broadcast_shape("add", av, bv)

    def backward(g: np.ndarray):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return _record(av + bv, "add", (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    av, bv = value_of(a), value_of(b)
    _broadcast_shape("sub", av, bv)

    def backward(g: np.ndarray):
        return _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)

    return _record(av - bv, "sub", (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    av, bv = value_of(a), value_of(b)
    _broadcast_shape("mul", av, bv)

    def backward(g: np.ndarray):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _record(av * bv, "mul", (a, b), backward)


def div(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    av, bv = value_of(a), value_of(b)
    _broadcast_shape("div", av, bv)
    out = av / bv

    def backward(g: np.ndarray):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return _record(out, "div", (a, b), backward)


def neg(a: ArrayLike) -> ArrayLike:
    av = value_of(a)
    return _record(-av, "neg", (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# Elementwise unary ops
# ---------------------------------------------------------------------------

def square(a: ArrayLike) -> ArrayLike:
    av = value_of(a)
    return _record(av * av, "square", (a,), lambda g: (2.0 * av * g,))


def sqrt(a: ArrayLike) -> ArrayLike:
    av = value_of(a)
    out = np.sqrt(av)
    return _record(out, "sqrt", (a,), lambda g: (0.5 * g / out,))


def exp(a: ArrayLike) -> ArrayLike:
    av = value_of(a)
    out = np.exp(av)
    return _record(out, "exp", (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> ArrayLike:
    av = value_of(a)
    return _record(np.log(av), "log", (a,), lambda g: (g / av,))


def tanh(a: ArrayLike) -> ArrayLike:
    av = value_of(a)
    out = np.tanh(av)
    return _record(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: ArrayLike) -> ArrayLike:
    av = value_of(a)
    out = _stable_sigmoid(av)
    return _record(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: ArrayLike) -> ArrayLike:
    av = value_of(a)
    mask = (av > 0.0).astype(np.float64)
    return _record(av * mask, "relu", (a,), lambda g: (g * mask,))


def softplus(a: ArrayLike) -> ArrayLike:
    """log(1 + e^x) without overflow for large |x|."""
    av = value_of(a)
    out = np.logaddexp(0.0, av)
    return _record(out, "softplus", (a,), lambda g: (g * _stable_sigmoid(av),))


def inverse_softplus(y: float) -> float:
    """Plain-number inverse of softplus, for initialising positive parameters."""
    return float(y + np.log(-np.expm1(-y)))


ACTIVATIONS: Dict[str, Callable[[ArrayLike], ArrayLike]] = {
    "tanh": tanh,
    "relu": relu,
    "softplus": softplus,
    "sigmoid": sigmoid,
}


# ---------------------------------------------------------------------------
# Linear algebra, reductions and structural ops
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError("matmul", av.shape, bv.shape)
    try:
        np.broadcast_shapes(av.shape[:-2], bv.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", av.shape, bv.shape) from None

    def backward(g: np.ndarray):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _record(av @ bv, "matmul", (a, b), backward)


def transpose(a: ArrayLike) -> ArrayLike:
    """Swap the last two axes."""
    av = value_of(a)
    if av.ndim < 2:
        raise ShapeError("transpose", av.shape)
    return _record(np.swapaxes(av, -1, -2), "transpose", (a,), lambda g: (np.swapaxes(g, -1, -2),))


def _normalize_axes(axis: Union[None, int, Tuple[int, ...]], ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a: ArrayLike, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> ArrayLike:
    av = value_of(a)
    axes = _normalize_axes(axis, av.ndim)
    out = av.sum(axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, av.shape),)

    return _record(np.asarray(out, dtype=np.float64), "sum", (a,), backward)


def mean(a: ArrayLike, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> ArrayLike:
    av = value_of(a)
    axes = _normalize_axes(axis, av.ndim)
    count = int(np.prod([av.shape[ax] for ax in axes], dtype=np.int64)) if axes else 1
    if count == 0:
        raise ShapeError("mean", av.shape)
    return mul(sum_(a, axis=axes, keepdims=keepdims), 1.0 / count)


def concat(items: Sequence[ArrayLike], axis: int = -1) -> ArrayLike:
    if not items:
        raise ContractError("concat of an empty list")
    values = [value_of(x) for x in items]
    ndim = values[0].ndim
    ax = axis % ndim
    for v in values[1:]:
        if v.ndim != ndim or any(v.shape[i] != values[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError("concat", values[0].shape, v.shape)
    sizes = [v.shape[ax] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, splits, axis=ax))

    return _record(np.concatenate(values, axis=ax), "concat", tuple(items), backward)


def stack(items: Sequence[ArrayLike], axis: int = 0) -> ArrayLike:
    if not items:
        raise ContractError("stack of an empty list")
    values = [value_of(x) for x in items]
    for v in values[1:]:
        if v.shape != values[0].shape:
            raise ShapeError("stack", values[0].shape, v.shape)
    out = np.stack(values, axis=axis)
    ax = axis % out.ndim

    def backward(g: np.ndarray):
        return tuple(np.take(g, i, axis=ax) for i in range(len(values)))

    return _record(out, "stack", tuple(items), backward)


def getitem(a: ArrayLike, index: Any) -> ArrayLike:
    """Basic or advanced indexing; gradients scatter-add back."""
    av = value_of(a)
    try:
        out = av[index]
    except IndexError:
        raise ShapeError("getitem", av.shape) from None

    def backward(g: np.ndarray):
        full = np.zeros_like(av)
        np.add.at(full, index, g)
        return (full,)

    return _record(np.array(out, dtype=np.float64), "getitem", (a,), backward)


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> ArrayLike:
    av = value_of(a)
    try:
        out = av.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", av.shape, shape) from None
    return _record(out, "reshape", (a,), lambda g: (g.reshape(av.shape),))


def broadcast_to(a: ArrayLike, shape: Tuple[int, ...]) -> ArrayLike:
    av = value_of(a)
    try:
        out = np.broadcast_to(av, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", av.shape, shape) from None
    return _record(out, "broadcast_to", (a,), lambda g: (_unbroadcast(g, av.shape),))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def finite_difference_gradient(
    fn: Callable[[Dict[str, np.ndarray]], float],
    inputs: Mapping[str, np.ndarray],
    h: float = 1e-5,
    names: Optional[Iterable[str]] = None,
) -> Dict[str, np.ndarray]:
    """Central differences of a plain-mode scalar function over named inputs."""
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    result: Dict[str, np.ndarray] = {}
    for name in (names if names is not None else base.keys()):
        arr = base[name]
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn(base))
            flat[i] = orig - h
            f_minus = float(fn(base))
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        result[name] = grad
    return result


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
