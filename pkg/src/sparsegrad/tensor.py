"""Reverse-mode automatic differentiation on float64 numpy arrays.

A ``Tensor`` wraps an immutable ``numpy.ndarray`` and remembers, when it was
produced by an operation, which tensors fed into it and how to push a
gradient back through that operation.  Calling :func:`backward` on a scalar
tensor walks the recorded graph once in reverse topological order and
returns the gradient of that scalar with respect to every requested leaf.

Two operations carry backward rules that deliberately differ from the true
derivative of their forward map and are flagged as such via
``Tensor.backward_rule``:

* :func:`rgf_relu` computes a plain relu forward but backpropagates the
  derivative of an elu with alpha 0.1, so a unit whose forward output is
  exactly zero still receives gradient signal.
* :func:`safe_l2_norm` backpropagates ``x / (norm + 1e-19)``, which stays
  finite when the norm itself is zero.

Everything here is eager and define-by-run: there is no graph compilation
step, and each forward call records fresh nodes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "sign",
    "sigmoid",
    "relu",
    "rgf_relu",
    "power",
    "matmul",
    "tsum",
    "tmean",
    "take",
    "concat",
    "reshape",
    "transpose",
    "bias_add",
    "mul_vec_last",
    "softmax",
    "log_softmax",
    "safe_l2_norm",
]


def _asarray(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus the tape entry that produced it.

    Leaves are built directly (``Tensor([1.0, 2.0])``) and reject NaN or
    Inf entries.  Interior nodes are built by the module-level operations
    and hold references to their parents together with a closure that maps
    the upstream gradient to per-parent gradients.
    """

    __slots__ = (
        "data",
        "requires_grad",
        "op",
        "backward_rule",
        "_parents",
        "_backward_fn",
    )

    def __init__(self, data, requires_grad: bool = True):
        # Copy: leaves own their storage, so freezing it cannot leak the
        # read-only flag back into a caller's array.
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor leaves must be finite (got NaN or Inf)")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.backward_rule = "exact"
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @classmethod
    def _from_op(cls, data, parents, backward_fn, op, backward_rule="exact"):
        out = cls.__new__(cls)
        arr = _asarray(data)
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = any(p.requires_grad for p in parents)
        out.op = op
        out.backward_rule = backward_rule
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        else:
            # No differentiable ancestor: drop the tape links so constant
            # subgraphs are never walked during backward.
            out._parents = ()
            out._backward_fn = None
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

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, data={self.data!r})"

    # Operators delegate to the module-level functions so that every way of
    # writing an expression lands on the same tape entry.
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)


def constant(data) -> Tensor:
    """A tensor that never receives gradient (targets, masks, step data)."""
    return Tensor(data, requires_grad=False)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return constant(x)


def _check_elementwise_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # Implicit broadcasting is restricted to scalar-with-tensor; anything
    # else must be spelled out with an explicit structured op.
    if a.shape == b.shape:
        return
    if a.ndim == 0 or b.ndim == 0:
        return
    raise ValueError(
        f"{op}: shapes {a.shape} and {b.shape} do not match and neither is scalar"
    )


def _reduce_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo scalar-to-tensor broadcast by summing the expanded axes.
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise_shapes(a, b, "add")

    def bw(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise_shapes(a, b, "sub")

    def bw(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise_shapes(a, b, "mul")

    def bw(g):
        return (
            _reduce_to_shape(g * b.data, a.shape),
            _reduce_to_shape(g * a.data, b.shape),
        )

    return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise_shapes(a, b, "div")
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("division by exact zero")

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _reduce_to_shape(ga, a.shape), _reduce_to_shape(gb, b.shape)

    return Tensor._from_op(a.data / b.data, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        return (-g,)

    return Tensor._from_op(-a.data, (a,), bw, "neg")


def exp(a) -> Tensor:
    a = _coerce(a)
    out_data = np.exp(a.data)

    def bw(g):
        return (g * out_data,)

    return Tensor._from_op(out_data, (a,), bw, "exp")


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive input")

    def bw(g):
        return (g / a.data,)

    return Tensor._from_op(np.log(a.data), (a,), bw, "log")


def sqrt(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt requires non-negative input")
    if np.any(a.data == 0.0):
        raise ValueError("sqrt gradient is undefined at zero")
    out_data = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out_data,)

    return Tensor._from_op(out_data, (a,), bw, "sqrt")


def absolute(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        return (g * np.sign(a.data),)

    return Tensor._from_op(np.abs(a.data), (a,), bw, "abs")


def sign(a) -> Tensor:
    """Elementwise sign with zero gradient everywhere.

    The forward value is piecewise constant, so the exact derivative is
    zero wherever it exists; the backward rule returns zeros and is still
    tagged exact.
    """
    a = _coerce(a)

    def bw(g):
        return (np.zeros_like(a.data),)

    return Tensor._from_op(np.sign(a.data), (a,), bw, "sign")


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    # Split by sign for numerical stability at large |x|.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        return (g * out_data * (1.0 - out_data),)

    return Tensor._from_op(out_data, (a,), bw, "sigmoid")


def relu(a) -> Tensor:
    """max(x, 0) with the convention relu'(0) = 0."""
    a = _coerce(a)
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), bw, "relu")


def rgf_relu(a) -> Tensor:
    """Relu forward with a rectified gradient flow backward.

    Forward is ``max(x, 0)``.  Backward multiplies the upstream gradient by
    the derivative of ``elu(x, alpha=0.1)``: 1 where x >= 0 and
    ``0.1 * exp(x)`` where x < 0.  Gradient therefore flows *to* inputs that
    the forward zeroed out, while the forward activations downstream of a
    zero stay exactly zero.
    """
    a = _coerce(a)
    x = a.data

    def bw(g):
        slope = np.where(x >= 0.0, 1.0, 0.1 * np.exp(np.minimum(x, 0.0)))
        return (g * slope,)

    return Tensor._from_op(np.where(x > 0.0, x, 0.0), (a,), bw, "rgf_relu",
                           backward_rule="custom:rgf_relu")


def power(a, p) -> Tensor:
    """Elementwise x**p for a constant float exponent."""
    a = _coerce(a)
    p = float(p)
    if p != int(p) or p < 0:
        if np.any(a.data < 0.0):
            raise ValueError("power requires non-negative base for non-integer exponent")
        if p < 1.0 and np.any(a.data == 0.0):
            raise ValueError("power gradient is undefined at zero for exponent < 1")

    def bw(g):
        return (g * p * np.power(a.data, p - 1.0),)

    return Tensor._from_op(np.power(a.data, p), (a,), bw, "power")


def matmul(a, b) -> Tensor:
    """Matrix product for 2d @ 2d, 3d @ 2d (batched left) and 2d @ 3d.

    Higher-rank combinations are rejected rather than silently broadcast.
    """
    a, b = _coerce(a), _coerce(b)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul: inner dims {a.shape} @ {b.shape} do not agree")

        def bw(g):
            return g @ b.data.T, a.data.T @ g

    elif a.ndim == 3 and b.ndim == 2:
        if a.shape[2] != b.shape[0]:
            raise ValueError(f"matmul: inner dims {a.shape} @ {b.shape} do not agree")

        def bw(g):
            return g @ b.data.T, np.einsum("bik,bij->kj", a.data, g)

    elif a.ndim == 2 and b.ndim == 3:
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"matmul: inner dims {a.shape} @ {b.shape} do not agree")

        def bw(g):
            return np.einsum("bij,bkj->ik", g, b.data), np.einsum("ki,bkj->bij", a.data, g)

    else:
        raise ValueError(f"matmul: unsupported ranks {a.ndim} @ {b.ndim}")

    return Tensor._from_op(a.data @ b.data, (a, b), bw, "matmul")


def tsum(a, axis: int | None = None) -> Tensor:
    a = _coerce(a)
    if axis is None:
        def bw(g):
            return (np.full(a.shape, float(g)),)

        return Tensor._from_op(np.sum(a.data), (a,), bw, "sum")

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor._from_op(np.sum(a.data, axis=axis), (a,), bw, "sum")


def tmean(a, axis: int | None = None) -> Tensor:
    a = _coerce(a)
    if axis is None:
        n = a.size

        def bw(g):
            return (np.full(a.shape, float(g) / n),)

        return Tensor._from_op(np.mean(a.data), (a,), bw, "mean")

    n = a.shape[axis]

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy(),)

    return Tensor._from_op(np.mean(a.data, axis=axis), (a,), bw, "mean")


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise ValueError("concat requires at least one tensor")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return Tensor._from_op(np.concatenate([p.data for p in parts], axis=axis),
                           parts, bw, "concat")


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.ndim != 2:
        raise ValueError("transpose is defined for 2d tensors only")

    def bw(g):
        return (g.T,)

    return Tensor._from_op(a.data.T, (a,), bw, "transpose")


def bias_add(x, b) -> Tensor:
    """Add a length-d vector to every row of a (..., d) tensor."""
    x, b = _coerce(x), _coerce(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"bias_add: cannot add {b.shape} along last axis of {x.shape}")

    def bw(g):
        axes = tuple(range(g.ndim - 1))
        return g, g.sum(axis=axes)

    return Tensor._from_op(x.data + b.data, (x, b), bw, "bias_add")


def mul_vec_last(x, v) -> Tensor:
    """Scale the last axis of a (..., d) tensor by a length-d vector."""
    x, v = _coerce(x), _coerce(v)
    if v.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ValueError(f"mul_vec_last: cannot scale {x.shape} by {v.shape}")

    def bw(g):
        axes = tuple(range(g.ndim - 1))
        return g * v.data, (g * x.data).sum(axis=axes)

    return Tensor._from_op(x.data * v.data, (x, v), bw, "mul_vec_last")


def take(a, indices) -> Tensor:
    """Select entries of a 1d tensor by integer index (differentiable gather)."""
    a = _coerce(a)
    if a.ndim != 1:
        raise ValueError("take is defined for 1d tensors only")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("take requires a flat index list")

    def bw(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._from_op(a.data[idx], (a,), bw, "take")


def softmax(a, axis: int = -1) -> Tensor:
    a = _coerce(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        inner = np.sum(g * out_data, axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return Tensor._from_op(out_data, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _coerce(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def bw(g):
        return (g - soft * np.sum(g, axis=axis, keepdims=True),)

    return Tensor._from_op(out_data, (a,), bw, "log_softmax")


def safe_l2_norm(a, axis: int | None = None) -> Tensor:
    """Euclidean norm whose gradient stays finite at the zero vector.

    Forward is the plain l2 norm.  Backward divides by ``norm + 1e-19``
    instead of ``norm``, so a group that has collapsed to exactly zero
    passes a zero gradient instead of NaN.
    """
    a = _coerce(a)
    if axis is None:
        norm = float(np.sqrt(np.sum(a.data * a.data)))

        def bw(g):
            return (float(g) * a.data / (norm + 1e-19),)

        return Tensor._from_op(norm, (a,), bw, "safe_l2_norm",
                               backward_rule="custom:safe_l2_norm")

    norm = np.sqrt(np.sum(a.data * a.data, axis=axis))

    def bw(g):
        scale = np.expand_dims(g / (norm + 1e-19), axis)
        return (scale * a.data,)

    return Tensor._from_op(norm, (a,), bw, "safe_l2_norm",
                           backward_rule="custom:safe_l2_norm")


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative depth-first post-order; training graphs run to tens of
    # thousands of nodes, which would overflow Python's recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt=None) -> dict[Tensor, Tensor]:
    """Gradients of a scalar ``loss`` with respect to leaf tensors.

    Parameters
    ----------
    loss:
        Scalar tensor (shape ``()``) to differentiate.
    wrt:
        Optional iterable of leaves to report.  When given, the result maps
        each of them to its gradient; leaves the loss does not reach get a
        zero gradient of matching shape.  When omitted, all gradient-bearing
        leaves reachable from ``loss`` are reported.

    Returns
    -------
    dict
        Maps leaf :class:`Tensor` objects (by identity) to gradient tensors.
    """
    if loss.ndim != 0:
        raise ValueError("backward requires scalar root")
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg

    if wrt is None:
        targets = [n for n in order if n.op == "leaf" and n.requires_grad]
    else:
        targets = list(wrt)
    out: dict[Tensor, Tensor] = {}
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = np.zeros(t.shape)
        elif np.shape(g) != t.shape:
            g = np.broadcast_to(g, t.shape).copy()
        out[t] = constant(g)
    return out
