"""
Dense tensor with reverse-mode automatic differentiation.

Every operation returns a new ``Tensor``; when gradients are enabled and an
input requires them, the result records its parents and a backward closure.
``backward`` walks the recorded graph in reverse topological order, adds
gradients into the ``grad`` buffers of leaf tensors and then frees the graph.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from oarseg.utils.errors import DimensionError, GraphError, NumericError, ValidationError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_PRECISIONS = {"float64": np.float64, "float32": np.float32}
_precision = {"dtype": np.float32}
_grad_state = threading.local()


def set_precision(name: str) -> None:
    """Switch the global numeric precision (``float64`` or ``float32``)."""
    if name not in _PRECISIONS:
        raise ValidationError(f"Unknown precision: {name}", "VAL_003")
    _precision["dtype"] = _PRECISIONS[name]


def get_dtype() -> type:
    """Current global dtype."""
    return _precision["dtype"]


def precision_name() -> str:
    return "float64" if get_dtype() is np.float64 else "float32"


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch precision."""
    previous = precision_name()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array with an optional gradient.

    Attributes:
        data: Values in the current global dtype
        requires_grad: Whether gradients are accumulated for this tensor
        grad: Gradient buffer for leaves, same shape as ``data``
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=get_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op: Optional[str] = None
        self._freed = False

    # ------------------------------------------------------------------
    # graph construction

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Create the result of an operation and record it in the graph.

        Args:
            data: Forward values
            parents: Operands, in the order ``backward`` returns their grads
            backward: Maps the output gradient to one gradient per parent
            op: Operation name used in error messages and graph listings

        Raises:
            NumericError: If ``data`` contains NaN or Inf
        """
        if not np.all(np.isfinite(data)):
            raise NumericError(f"{op} produced non-finite values", "NUM_001", op=op)
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=get_dtype())
        out.grad = None
        out.name = None
        out._op = op
        out._freed = False
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    # ------------------------------------------------------------------
    # array protocol

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # ------------------------------------------------------------------
    # elementwise arithmetic

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def backward(g: np.ndarray):
            return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

        return Tensor.from_op(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def backward(g: np.ndarray):
            return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

        return Tensor.from_op(a.data - b.data, (a, b), backward, "sub")

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def backward(g: np.ndarray):
            return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

        return Tensor.from_op(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def backward(g: np.ndarray):
            ga = g / b.data
            gb = -g * a.data / (b.data * b.data)
            return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

        return Tensor.from_op(a.data / b.data, (a, b), backward, "div")

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise ValidationError("Tensor exponents are not supported", "VAL_001")
        x = self

        def backward(g: np.ndarray):
            return (g * exponent * np.power(x.data, exponent - 1),)

        return Tensor.from_op(np.power(x.data, exponent), (x,), backward, "pow")

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from oarseg.tensor.functional import matmul
        return matmul(self, other)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g: np.ndarray):
            return (g * out_data,)

        return Tensor.from_op(out_data, (self,), backward, "exp")

    def log(self, floor: float = 0.0) -> "Tensor":
        """Natural log; values at or below ``floor`` are clamped (zero gradient there)."""
        x = self
        clamped = np.maximum(x.data, floor) if floor > 0 else x.data

        def backward(g: np.ndarray):
            grad = g / clamped
            if floor > 0:
                grad = np.where(x.data > floor, grad, 0.0)
            return (grad,)

        return Tensor.from_op(np.log(clamped), (x,), backward, "log")

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def backward(g: np.ndarray):
            return (g * 0.5 / out_data,)

        return Tensor.from_op(out_data, (self,), backward, "sqrt")

    # ------------------------------------------------------------------
    # reductions

    def sum(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        x = self

        def backward(g: np.ndarray):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return Tensor.from_op(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")

    def mean(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ------------------------------------------------------------------
    # shape manipulation

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self

        def backward(g: np.ndarray):
            return (g.reshape(x.shape),)

        return Tensor.from_op(x.data.reshape(shape), (x,), backward, "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))

        def backward(g: np.ndarray):
            return (g.transpose(inverse),)

        return Tensor.from_op(self.data.transpose(axes), (self,), backward, "transpose")

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, index) -> "Tensor":
        x = self
        basic = _is_basic_index(index)

        def backward(g: np.ndarray):
            grad = np.zeros_like(x.data)
            if basic:
                grad[index] += g
            else:
                np.add.at(grad, index, g)
            return (grad,)

        return Tensor.from_op(x.data[index], (x,), backward, "getitem")

    # ------------------------------------------------------------------
    # autodiff entry

    def backward(self, retain_graph: bool = False) -> None:
        """Backpropagate from this scalar tensor."""
        backward(self, retain_graph=retain_graph)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap constants as non-differentiable tensors."""
    return value if isinstance(value, Tensor) else Tensor(value)


class ComputeGraph:
    """Topologically ordered view of the graph that produced a tensor.

    Attributes:
        nodes: Tensors from inputs to output
        edges: For each node index, the indices of its parents
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: List[Tensor] = []
        index: Dict[int, int] = {}
        # Iterative post-order DFS; deep networks exceed the recursion limit
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in index:
                continue
            if expanded:
                index[id(node)] = len(self.nodes)
                self.nodes.append(node)
                continue
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in index:
                    stack.append((parent, False))
        self.edges: List[Tuple[int, ...]] = [
            tuple(index[id(p)] for p in node._parents) for node in self.nodes
        ]

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> List[Optional[str]]:
        return [node._op for node in self.nodes]

    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def free(self) -> None:
        """Drop closures and parent links of every interior node."""
        for node in self.nodes:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
                node._freed = True


def backward(loss: Tensor, graph: Optional[ComputeGraph] = None, retain_graph: bool = False) -> ComputeGraph:
    """Reverse-mode sweep from a scalar loss into every ``requires_grad`` leaf.

    Leaf gradients accumulate across calls until cleared with ``zero_grad``.

    Args:
        loss: Scalar tensor produced by differentiable operations
        graph: Precomputed graph for ``loss`` (built when omitted)
        retain_graph: Keep the graph alive for another backward call

    Returns:
        The traversed graph

    Raises:
        GraphError: If ``loss`` is not a scalar, is detached, or its graph was freed
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}", "GRAPH_003")
    if loss._freed:
        raise GraphError("Graph was freed by a previous backward call", "GRAPH_002")
    if not loss.requires_grad:
        raise GraphError("Loss is detached from the graph (requires_grad=False)", "GRAPH_001")

    graph = graph or ComputeGraph(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                if not np.all(np.isfinite(g)):
                    raise NumericError("Non-finite gradient reached a leaf", "NUM_004", op=node.name)
                node.grad = g.astype(node.data.dtype, copy=True) if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            # Fan-out: contributions from every consumer add up
            grads[key] = grads[key] + pg if key in grads else pg

    if not retain_graph:
        graph.free()
    return graph


def check_same_shape(op: str, *tensors: Tensor) -> None:
    shapes = {t.shape for t in tensors}
    if len(shapes) > 1:
        raise DimensionError(op, tensors[0].shape, [t.shape for t in tensors[1:]])
