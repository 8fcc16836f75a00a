"""Reverse-mode differentiation over a flat parameter vector.

A :class:`Tape` records a closed set of primitives in topological order. Values are
float64 numpy arrays; leading "row" axes let one tape carry a whole minibatch, and
every reduction over rows happens in index order, so gradients are bit-reproducible.

Example::

    tape = Tape(n_params=3)
    w = tape.param(0, (3,))
    tape.sum(w * w)
    value = tape.forward(np.array([1.0, 2.0, 3.0]))  # 14.0
    grad = tape.backward()                          # [2, 4, 6]
"""

import logging
from enum import Enum
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from dlpo_lab.errors import (
    ArgumentError,
    NumericError,
    StateError,
    TapeConstructionError,
)

logger = logging.getLogger(__name__)


class Op(str, Enum):
    PARAM = "param"
    INPUT = "input"
    CONST = "const"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    MATVEC = "matvec"
    TANH = "tanh"
    SUM = "sum"
    SQUARE = "square"
    SQRT = "sqrt"
    LOG = "log"


class Node(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    op: Op
    inputs: tuple[int, ...] = ()
    offset: int = 0
    shape: tuple[int, ...] = ()
    rows: Optional[np.ndarray] = None
    """Row indices gathered from a PARAM table (embedding lookup)."""
    payload: Optional[np.ndarray] = None
    """Value of a CONST node."""
    axis: Optional[int] = None


class Var:
    """Handle to a tape node; arithmetic operators record new nodes."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    def __add__(self, other: Any) -> "Var":
        return self.tape.add(self, other)

    def __radd__(self, other: Any) -> "Var":
        return self.tape.add(other, self)

    def __sub__(self, other: Any) -> "Var":
        return self.tape.sub(self, other)

    def __rsub__(self, other: Any) -> "Var":
        return self.tape.sub(other, self)

    def __mul__(self, other: Any) -> "Var":
        return self.tape.mul(self, other)

    def __rmul__(self, other: Any) -> "Var":
        return self.tape.mul(other, self)

    def __repr__(self) -> str:
        return f"Var({self.index}, {self.tape.nodes[self.index].op.value})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Single-use record of primitive operations.

    Build the graph with the primitive methods, call :meth:`forward` with the flat
    parameter vector (and optional inputs vector), then :meth:`backward` once.
    The last recorded node is the objective and must hold a single value.
    """

    def __init__(self, n_params: int, n_inputs: int = 0):
        if n_params < 0 or n_inputs < 0:
            raise TapeConstructionError("tape sizes must be non-negative")
        self.n_params = n_params
        self.n_inputs = n_inputs
        self.nodes: list[Node] = []
        self.values: Optional[list[np.ndarray]] = None
        self.adjoints: Optional[list[np.ndarray]] = None
        self._consumed = False

    # -- construction -------------------------------------------------------

    def _push(self, node: Node) -> Var:
        for index in node.inputs:
            if not 0 <= index < len(self.nodes):
                raise TapeConstructionError(
                    f"node input {index} does not precede node {len(self.nodes)}"
                )
        self.nodes.append(node)
        self.values = None
        return Var(self, len(self.nodes) - 1)

    def _lift(self, value: Any) -> Var:
        if isinstance(value, Var):
            if value.tape is not self:
                raise TapeConstructionError("variable belongs to another tape")
            return value
        return self.const(value)

    def param(
        self,
        offset: int,
        shape: Sequence[int],
        rows: Optional[Iterable[int]] = None,
    ) -> Var:
        shape = tuple(int(d) for d in shape)
        size = int(np.prod(shape, dtype=np.int64))
        if offset < 0 or offset + size > self.n_params:
            raise TapeConstructionError(
                f"param slice [{offset}, {offset + size}) outside {self.n_params} params"
            )
        row_index = None
        if rows is not None:
            row_index = np.asarray(rows, dtype=np.intp)
            if not shape or np.any(row_index < 0) or np.any(row_index >= shape[0]):
                raise TapeConstructionError(f"row index outside table of shape {shape}")
        return self._push(Node(op=Op.PARAM, offset=offset, shape=shape, rows=row_index))

    def input(self, offset: int, length: int) -> Var:
        if offset < 0 or length < 0 or offset + length > self.n_inputs:
            raise TapeConstructionError(
                f"input slice [{offset}, {offset + length}) outside {self.n_inputs} inputs"
            )
        return self._push(Node(op=Op.INPUT, offset=offset, shape=(length,)))

    def const(self, value: Any) -> Var:
        payload = np.array(value, dtype=np.float64)
        return self._push(Node(op=Op.CONST, shape=payload.shape, payload=payload))

    def add(self, a: Any, b: Any) -> Var:
        return self._push(Node(op=Op.ADD, inputs=(self._lift(a).index, self._lift(b).index)))

    def sub(self, a: Any, b: Any) -> Var:
        return self._push(Node(op=Op.SUB, inputs=(self._lift(a).index, self._lift(b).index)))

    def mul(self, a: Any, b: Any) -> Var:
        return self._push(Node(op=Op.MUL, inputs=(self._lift(a).index, self._lift(b).index)))

    def matvec(self, w: Var, x: Any) -> Var:
        """``w @ x`` for a vector ``x``, or ``x @ w.T`` for a stack of row vectors."""
        return self._push(Node(op=Op.MATVEC, inputs=(self._lift(w).index, self._lift(x).index)))

    def tanh(self, x: Any) -> Var:
        return self._push(Node(op=Op.TANH, inputs=(self._lift(x).index,)))

    def sum(self, x: Any, axis: Optional[int] = None) -> Var:
        if axis not in (None, -1):
            raise TapeConstructionError("sum reduces everything or the last axis only")
        return self._push(Node(op=Op.SUM, inputs=(self._lift(x).index,), axis=axis))

    def square(self, x: Any) -> Var:
        return self._push(Node(op=Op.SQUARE, inputs=(self._lift(x).index,)))

    def sqrt(self, x: Any) -> Var:
        return self._push(Node(op=Op.SQRT, inputs=(self._lift(x).index,)))

    def log(self, x: Any) -> Var:
        return self._push(Node(op=Op.LOG, inputs=(self._lift(x).index,)))

    # -- evaluation ---------------------------------------------------------

    def _evaluate(
        self,
        index: int,
        node: Node,
        values: list[np.ndarray],
        params: np.ndarray,
        inputs: np.ndarray,
    ) -> np.ndarray:
        args = [values[i] for i in node.inputs]
        if node.op is Op.PARAM:
            size = int(np.prod(node.shape, dtype=np.int64))
            table = params[node.offset : node.offset + size].reshape(node.shape)
            return table[node.rows] if node.rows is not None else table.copy()
        if node.op is Op.INPUT:
            return inputs[node.offset : node.offset + node.shape[0]].copy()
        if node.op is Op.CONST:
            return node.payload
        if node.op is Op.ADD:
            return args[0] + args[1]
        if node.op is Op.SUB:
            return args[0] - args[1]
        if node.op is Op.MUL:
            return args[0] * args[1]
        if node.op is Op.MATVEC:
            w, x = args
            if w.ndim != 2 or x.shape[-1] != w.shape[1]:
                raise ArgumentError(
                    f"node {index}: cannot multiply {w.shape} matrix with {x.shape}"
                )
            return w @ x if x.ndim == 1 else x @ w.T
        if node.op is Op.TANH:
            return np.tanh(args[0])
        if node.op is Op.SUM:
            return np.asarray(np.sum(args[0], axis=node.axis))
        if node.op is Op.SQUARE:
            return args[0] * args[0]
        if node.op is Op.SQRT:
            if np.any(args[0] < 0):
                raise NumericError(f"sqrt of a negative value at node {index}", node_index=index)
            return np.sqrt(args[0])
        if node.op is Op.LOG:
            if np.any(args[0] <= 0):
                raise NumericError(f"log of a non-positive value at node {index}", node_index=index)
            return np.log(args[0])
        raise TapeConstructionError(f"unknown primitive {node.op}")

    def forward(self, params: np.ndarray, inputs: Optional[np.ndarray] = None) -> float:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ArgumentError(f"expected {self.n_params} params, got shape {params.shape}")
        inputs = np.zeros(0) if inputs is None else np.asarray(inputs, dtype=np.float64)
        if inputs.shape != (self.n_inputs,):
            raise ArgumentError(f"expected {self.n_inputs} inputs, got shape {inputs.shape}")
        if not self.nodes:
            raise StateError("tape is empty")

        values: list[np.ndarray] = []
        for index, node in enumerate(self.nodes):
            value = self._evaluate(index, node, values, params, inputs)
            if not np.all(np.isfinite(value)):
                raise NumericError(f"non-finite value at node {index} ({node.op.value})", node_index=index)
            values.append(value)

        if values[-1].size != 1:
            raise ArgumentError(f"objective must be scalar, got shape {values[-1].shape}")
        self.values = values
        self.adjoints = None
        self._consumed = False
        return float(values[-1].reshape(()))

    def backward(self) -> np.ndarray:
        if self.values is None:
            raise StateError("backward called before forward")
        if self._consumed:
            raise StateError("backward already ran for this forward pass")

        values = self.values
        adjoints = [np.zeros_like(v) for v in values]
        adjoints[-1] = np.ones_like(values[-1])
        grad = np.zeros(self.n_params)

        for index in range(len(self.nodes) - 1, -1, -1):
            g = adjoints[index]
            if not g.any():
                continue
            node = self.nodes[index]
            args = [values[i] for i in node.inputs]

            if node.op is Op.PARAM:
                size = int(np.prod(node.shape, dtype=np.int64))
                view = grad[node.offset : node.offset + size].reshape(node.shape)
                if node.rows is not None:
                    np.add.at(view, node.rows, g)
                else:
                    view += g
                continue
            if node.op in (Op.INPUT, Op.CONST):
                continue

            if node.op is Op.ADD:
                contribs = (_unbroadcast(g, args[0].shape), _unbroadcast(g, args[1].shape))
            elif node.op is Op.SUB:
                contribs = (_unbroadcast(g, args[0].shape), _unbroadcast(-g, args[1].shape))
            elif node.op is Op.MUL:
                contribs = (
                    _unbroadcast(g * args[1], args[0].shape),
                    _unbroadcast(g * args[0], args[1].shape),
                )
            elif node.op is Op.MATVEC:
                w, x = args
                gw = np.outer(g, x) if x.ndim == 1 else g.T @ x
                contribs = (gw, g @ w)
            elif node.op is Op.TANH:
                contribs = (g * (1.0 - values[index] ** 2),)
            elif node.op is Op.SUM:
                expanded = g if node.axis is None else np.expand_dims(g, node.axis)
                contribs = (np.broadcast_to(expanded, args[0].shape),)
            elif node.op is Op.SQUARE:
                contribs = (2.0 * g * args[0],)
            elif node.op is Op.SQRT:
                # subgradient 0 at the origin
                root = values[index]
                scale = np.divide(0.5, root, out=np.zeros_like(root), where=root > 0)
                contribs = (g * scale,)
            else:
                contribs = (g / args[0],)

            for source, contrib in zip(node.inputs, contribs):
                adjoints[source] = adjoints[source] + contrib

        self.adjoints = adjoints
        self._consumed = True
        return grad

    def adjoint(self, var: Var) -> np.ndarray:
        if self.adjoints is None:
            raise StateError("adjoints are available after backward")
        return self.adjoints[var.index]


def forward(tape: Tape, params: np.ndarray, inputs: Optional[np.ndarray] = None) -> float:
    return tape.forward(params, inputs)


def backward(tape: Tape) -> np.ndarray:
    return tape.backward()


Objective = Callable[[np.ndarray], Any]


def _objective_value(result: Any) -> float:
    value = result[0] if isinstance(result, tuple) else result
    return float(value)


def finite_diff_check(
    objective: Objective,
    params: np.ndarray,
    step: float = 1e-5,
    gradient: Optional[np.ndarray] = None,
    indices: Optional[Iterable[int]] = None,
) -> float:
    """Largest relative gap between an analytic gradient and central differences.

    ``objective(params)`` returns the value or a ``(value, gradient)`` pair. When
    ``gradient`` is not given it is taken from ``objective(params)``. ``indices``
    restricts the comparison to a subset of coordinates.
    """
    if not step > 0:
        raise ArgumentError(f"finite-difference step must be positive, got {step}")
    params = np.array(params, dtype=np.float64)
    if gradient is None:
        result = objective(params)
        if not isinstance(result, tuple):
            raise ArgumentError("objective must return (value, gradient) when no gradient is given")
        gradient = np.asarray(result[1], dtype=np.float64)

    coords = range(params.size) if indices is None else indices
    worst = 0.0
    for i in coords:
        shifted = params.copy()
        shifted[i] = params[i] + step
        upper = _objective_value(objective(shifted))
        shifted[i] = params[i] - step
        lower = _objective_value(objective(shifted))
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NumericError(f"objective is not finite around coordinate {i}")
        central = (upper - lower) / (2.0 * step)
        analytic = float(gradient[i])
        error = abs(analytic - central) / max(1e-12, abs(analytic) + abs(central))
        worst = max(worst, error)
    return worst
