"""Sources and element-wise transformations."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import TypeMismatch
from ..graph import DataType, Graph, Kind, Node, OutputPort, as_output


def _port(obj) -> OutputPort:
    # Parameters expose their variable node through ``output``.
    return as_output(obj)


def _same_types(types: list[DataType], what: str) -> DataType:
    if not types:
        raise TypeMismatch(f"{what} needs at least one input")
    first = types[0]
    for i, t in enumerate(types[1:], start=1):
        if t != first:
            raise TypeMismatch(f"{what} input {i} has type {t!r}, expected {first!r}")
    return first


class Constant(Node):
    """Points array held by the node itself; :meth:`set` replaces it."""

    def __init__(self, graph: Graph, value, name: str | None = None):
        self.value = np.array(value, dtype=np.float64, ndmin=1)
        super().__init__(graph, name=name)

    def set(self, value) -> bool:
        value = np.array(value, dtype=np.float64, ndmin=1)
        if value.shape != self.value.shape:
            raise TypeMismatch(f"{self.name}: shape {value.shape} != {self.value.shape}")
        if np.array_equal(value, self.value):
            return False
        self.value = value
        self.taint()
        return True

    def typefun(self, types):
        return [DataType(Kind.POINTS, self.value.shape)]

    def evalfun(self, inputs, outputs):
        outputs[0][...] = self.value


class Histogram(Constant):
    """Histogram source: fixed edges, replaceable contents."""

    def __init__(self, graph: Graph, edges, counts=None, name: str | None = None):
        self.edges = np.asarray(edges, dtype=np.float64)
        if counts is None:
            counts = np.zeros(self.edges.size - 1)
        super().__init__(graph, counts, name=name)
        if self.value.shape != (self.edges.size - 1,):
            raise TypeMismatch(f"{self.name}: {self.value.size} counts for {self.edges.size - 1} bins")

    def typefun(self, types):
        return [DataType.hist(self.edges)]


class Identity(Node):
    def __init__(self, graph: Graph, x, name: str | None = None):
        super().__init__(graph, [_port(x) if x is not None else None], name=name)

    def typefun(self, types):
        return [types[0]]

    def evalfun(self, inputs, outputs):
        outputs[0][...] = inputs[0]


class Sum(Node):
    """Element-wise sum of inputs sharing one data type."""

    def __init__(self, graph: Graph, inputs: Sequence = (), name: str | None = None, n: int | None = None):
        ports = [_port(x) if x is not None else None for x in inputs]
        if n is not None:
            ports += [None] * (n - len(ports))
        super().__init__(graph, ports, name=name)

    def typefun(self, types):
        return [_same_types(types, "Sum")]

    def evalfun(self, inputs, outputs):
        out = outputs[0]
        out[...] = inputs[0]
        for x in inputs[1:]:
            out += x


class Product(Sum):
    """Element-wise product of inputs sharing one data type."""

    def typefun(self, types):
        return [_same_types(types, "Product")]

    def evalfun(self, inputs, outputs):
        out = outputs[0]
        out[...] = inputs[0]
        for x in inputs[1:]:
            out *= x


class WeightedSum(Node):
    """``out = sum_k w_k * x_k``.

    Each weight is either a float constant or a one-element array such as a
    parameter's variable node. Arrays are the first inputs, weight ports follow.
    """

    def __init__(self, graph: Graph, inputs: Sequence, weights: Sequence, name: str | None = None):
        if len(inputs) != len(weights):
            raise TypeMismatch(f"{len(weights)} weights for {len(inputs)} inputs")
        self.constants: list[float | None] = []
        weight_ports = []
        for w in weights:
            if isinstance(w, (int, float, np.floating, np.integer)):
                self.constants.append(float(w))
            else:
                self.constants.append(None)
                weight_ports.append(_port(w))
        ports = [_port(x) if x is not None else None for x in inputs]
        names = [f"in{i}" for i in range(len(ports))] + [f"w{i}" for i in range(len(weight_ports))]
        self.nterms = len(ports)
        super().__init__(graph, ports + weight_ports, name=name, input_names=names)

    def typefun(self, types):
        arrays, weights = types[: self.nterms], types[self.nterms:]
        for i, t in enumerate(weights):
            if t.shape != (1,):
                raise TypeMismatch(f"weight {i} must be a single element, got {t!r}")
        return [_same_types(arrays, "WeightedSum")]

    def evalfun(self, inputs, outputs):
        arrays, ports = inputs[: self.nterms], iter(inputs[self.nterms:])
        out = outputs[0]
        for k, (x, c) in enumerate(zip(arrays, self.constants)):
            w = c if c is not None else next(ports)[0]
            if k == 0:
                np.multiply(x, w, out=out)
            else:
                out += w * x


class Concat(Node):
    """Join rank-1 inputs end to end."""

    def __init__(self, graph: Graph, inputs: Sequence, name: str | None = None):
        super().__init__(graph, [_port(x) if x is not None else None for x in inputs], name=name)

    def typefun(self, types):
        if not types:
            raise TypeMismatch("Concat needs at least one input")
        for i, t in enumerate(types):
            if t.rank != 1:
                raise TypeMismatch(f"Concat input {i} has rank {t.rank}")
        return [DataType.points(sum(t.shape[0] for t in types))]

    def evalfun(self, inputs, outputs):
        np.concatenate(inputs, out=outputs[0])


class Elementwise(Node):
    """Apply a pure vectorized function to inputs of equal shape.

    One-element inputs broadcast as scalars; the output takes the type of the
    first input with more than one element.
    """

    def __init__(self, graph: Graph, fn: Callable[..., np.ndarray], inputs: Sequence,
                 name: str | None = None):
        self.fn = fn
        super().__init__(graph, [_port(x) if x is not None else None for x in inputs],
                         name=name or getattr(fn, "__name__", None))

    def typefun(self, types):
        arrays = [t for t in types if t.shape != (1,)]
        if not arrays:
            return [types[0]]
        return [_same_types(arrays, f"{self.name}")]

    def evalfun(self, inputs, outputs):
        args = [x[0] if x.shape == (1,) and outputs[0].shape != (1,) else x for x in inputs]
        outputs[0][...] = self.fn(*args)
