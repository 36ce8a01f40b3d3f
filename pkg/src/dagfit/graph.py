"""Directed acyclic graph of array transformations.

A :class:`Node` owns ordered input and output ports. Outputs own dense float64
buffers whose shape is fixed by type propagation. Each node carries a
:class:`TaintFlag`; changing an upstream value marks every dependent flag
immediately while the actual recomputation waits until somebody calls
:meth:`Graph.touch` on a node whose value is needed.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AlreadyBound,
    CycleError,
    DagfitError,
    EvalError,
    FrozenWhileTainted,
    TypeMismatch,
    UnboundInput,
)


class Kind(enum.Enum):
    POINTS = "points"
    HISTOGRAM = "hist"


class DataType:
    """Shape descriptor of an output buffer.

    Histograms are rank 1 and carry strictly increasing bin edges; points
    arrays are rank 1 or 2 and carry none.
    """

    __slots__ = ("kind", "shape", "edges")

    def __init__(self, kind: Kind, shape: Sequence[int], edges=None):
        shape = tuple(int(s) for s in shape)
        if len(shape) not in (1, 2) or any(s < 1 for s in shape):
            raise TypeMismatch(f"shape must be rank 1 or 2 with positive extents, got {shape}")
        if kind is Kind.HISTOGRAM:
            if len(shape) != 1 or edges is None:
                raise TypeMismatch("histogram must be rank 1 with edges")
            edges = np.array(edges, dtype=np.float64)
            if edges.shape != (shape[0] + 1,) or np.any(np.diff(edges) <= 0):
                raise TypeMismatch("histogram edges must be strictly increasing with n+1 entries")
            edges.setflags(write=False)
        elif edges is not None:
            raise TypeMismatch("points arrays carry no edges")
        self.kind = kind
        self.shape = shape
        self.edges = edges

    @classmethod
    def points(cls, *shape: int) -> "DataType":
        return cls(Kind.POINTS, shape)

    @classmethod
    def hist(cls, edges) -> "DataType":
        edges = np.asarray(edges, dtype=np.float64)
        return cls(Kind.HISTOGRAM, (edges.size - 1,), edges)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def rank(self) -> int:
        return len(self.shape)

    def __eq__(self, other):
        if not isinstance(other, DataType):
            return NotImplemented
        if self.kind is not other.kind or self.shape != other.shape:
            return False
        if self.edges is None:
            return True
        return bool(np.array_equal(self.edges, other.edges))

    def __hash__(self):
        return hash((self.kind, self.shape))

    def __repr__(self):
        dims = "x".join(map(str, self.shape))
        if self.kind is Kind.HISTOGRAM:
            return f"Hist[{dims}]({self.edges[0]:g}..{self.edges[-1]:g})"
        return f"Points[{dims}]"


class TaintFlag:
    """Dirty marker with eager downstream propagation.

    Propagation never enters a frozen flag, and it stops at flags that are
    already tainted: a tainted flag's dependents are tainted too, so there is
    nothing left to do behind it.
    """

    __slots__ = ("tainted", "frozen", "downstream", "__weakref__")

    def __init__(self, tainted: bool = True):
        self.tainted = tainted
        self.frozen = False
        self.downstream: list[TaintFlag] = []

    def subscribe(self, other: "TaintFlag") -> None:
        if not any(f is other for f in self.downstream):
            self.downstream.append(other)

    def taint(self) -> int:
        """Taint this flag and its dependents; return how many flags changed."""
        changed = 0
        stack = [self]
        while stack:
            flag = stack.pop()
            if flag.frozen or flag.tainted:
                continue
            flag.tainted = True
            changed += 1
            stack.extend(flag.downstream)
        return changed

    def __repr__(self):
        state = "tainted" if self.tainted else "clean"
        return f"<TaintFlag {state}{' frozen' if self.frozen else ''}>"


class InputPort:
    __slots__ = ("node", "index", "name", "source")

    def __init__(self, node: "Node", index: int, name: str):
        self.node = node
        self.index = index
        self.name = name
        self.source: OutputPort | None = None

    def __repr__(self):
        return f"{self.node.name}.{self.name}"


class OutputPort:
    __slots__ = ("node", "index", "name", "dtype", "data", "consumers")

    def __init__(self, node: "Node", index: int, name: str):
        self.node = node
        self.index = index
        self.name = name
        self.dtype: DataType | None = None
        self.data: np.ndarray | None = None
        self.consumers: list[InputPort] = []

    def __call__(self) -> np.ndarray:
        """Evaluate lazily and return the (read-only view of the) buffer."""
        self.node.touch()
        view = self.data.view()
        view.setflags(write=False)
        return view

    def __repr__(self):
        return f"{self.node.name}.{self.name}"


def as_output(obj) -> OutputPort:
    """Accept a node with a single output wherever a port is expected."""
    if isinstance(obj, OutputPort):
        return obj
    if isinstance(obj, Node):
        if len(obj.outputs) != 1:
            raise TypeMismatch(f"node '{obj.name}' has {len(obj.outputs)} outputs; pick one")
        return obj.outputs[0]
    src = getattr(obj, "output", None)
    if isinstance(src, OutputPort):
        return src
    raise TypeError(f"cannot use {obj!r} as an output port")


class Node:
    """Base transformation.

    Subclasses implement :meth:`typefun` and :meth:`evalfun`. ``evalfun``
    receives the bound input buffers and this node's own output buffers and
    must write results in place without touching anything else.
    """

    output_names: tuple[str, ...] = ("out",)

    def __init__(self, graph: "Graph", inputs: Iterable = (), name: str | None = None,
                 input_names: Sequence[str] | None = None):
        self.graph = None
        self.name = name or type(self).__name__.lower()
        self.inputs: list[InputPort] = []
        self.outputs = [OutputPort(self, i, n) for i, n in enumerate(self.output_names)]
        self.taintflag = TaintFlag()
        self.nevals = 0
        self.index = -1
        graph.add(self)
        inputs = list(inputs)
        names = list(input_names) if input_names is not None else [f"in{i}" for i in range(len(inputs))]
        for name_, src in zip(names, inputs):
            port = self.add_input(name_)
            if src is not None:
                graph.bind(as_output(src), port)

    @property
    def kind(self) -> str:
        return type(self).__name__

    def add_input(self, name: str | None = None) -> InputPort:
        port = InputPort(self, len(self.inputs), name or f"in{len(self.inputs)}")
        self.inputs.append(port)
        if self.graph is not None:
            self.graph._mark_untyped(self)
        return port

    @property
    def out(self) -> OutputPort:
        return self.outputs[0]

    @property
    def tainted(self) -> bool:
        return self.taintflag.tainted

    @property
    def frozen(self) -> bool:
        return self.taintflag.frozen

    def upstream(self) -> list["Node"]:
        seen = []
        for port in self.inputs:
            if port.source is not None and port.source.node not in seen:
                seen.append(port.source.node)
        return seen

    def downstream(self) -> list["Node"]:
        seen = []
        for out in self.outputs:
            for port in out.consumers:
                if port.node not in seen:
                    seen.append(port.node)
        return seen

    def open_inputs(self) -> list[InputPort]:
        return [p for p in self.inputs if p.source is None]

    def touch(self) -> int:
        return self.graph.touch(self)

    def taint(self) -> int:
        return self.taintflag.taint()

    def typefun(self, types: list[DataType]) -> list[DataType]:
        raise NotImplementedError

    def evalfun(self, inputs: list[np.ndarray], outputs: list[np.ndarray]) -> None:
        raise NotImplementedError

    def __repr__(self):
        return f"<{self.kind} '{self.name}'>"


class Graph:
    """Container owning nodes and the bindings between them."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._names: set[str] = set()
        self._untyped: set[Node] = set()

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def add(self, node: Node) -> Node:
        if node.graph is not None:
            raise DagfitError(f"node '{node.name}' already belongs to a graph")
        base, k = node.name, 1
        while node.name in self._names:
            k += 1
            node.name = f"{base}#{k}"
        self._names.add(node.name)
        node.graph = self
        node.index = len(self.nodes)
        self.nodes.append(node)
        self._untyped.add(node)
        return node

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    # -- structure ---------------------------------------------------------

    def bind(self, out: OutputPort, inp: InputPort) -> None:
        if inp.source is not None:
            raise AlreadyBound(f"input {inp!r} is already bound to {inp.source!r}")
        if out.node.graph is not self or inp.node.graph is not self:
            raise DagfitError("cannot bind ports of different graphs")
        if out.node is inp.node or out.node in self.descendants(inp.node):
            raise CycleError(f"binding {out!r} -> {inp!r} would create a cycle")
        inp.source = out
        out.consumers.append(inp)
        out.node.taintflag.subscribe(inp.node.taintflag)
        self._mark_untyped(inp.node)
        inp.node.taintflag.taint()

    def _mark_untyped(self, node: Node) -> None:
        self._untyped.add(node)
        self._untyped.update(self.descendants(node))

    def descendants(self, node: Node) -> set[Node]:
        seen: set[Node] = set()
        stack = node.downstream()
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(n.downstream())
        return seen

    def ancestors(self, node: Node) -> set[Node]:
        seen: set[Node] = set()
        stack = node.upstream()
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(n.upstream())
        return seen

    def topological_order(self, nodes: Iterable[Node] | None = None) -> list[Node]:
        """Kahn's algorithm; ties go to the earliest inserted node."""
        import heapq

        members = set(self.nodes if nodes is None else nodes)
        indeg = {n: 0 for n in members}
        for n in members:
            for u in n.upstream():
                if u in members:
                    indeg[n] += 1
        heap = [(n.index, n) for n in members if indeg[n] == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            _, n = heapq.heappop(heap)
            order.append(n)
            for d in n.downstream():
                if d in members:
                    indeg[d] -= 1
                    if indeg[d] == 0:
                        heapq.heappush(heap, (d.index, d))
        if len(order) != len(members):
            raise CycleError("graph contains a cycle")
        return order

    # -- types ---------------------------------------------------------------

    def propagate_types(self, roots: Iterable[Node] | None = None) -> None:
        """Run shape inference over the whole graph or the ancestry of ``roots``."""
        if roots is None:
            members = list(self.nodes)
        else:
            members = set()
            for r in roots:
                members.add(r)
                members |= self.ancestors(r)
        for node in self.topological_order(members):
            types = []
            for port in node.inputs:
                if port.source is None:
                    raise UnboundInput(f"node '{node.name}': input '{port.name}' is not bound")
                types.append(port.source.dtype)
            try:
                out_types = node.typefun(types)
            except TypeMismatch as exc:
                raise type(exc)(f"node '{node.name}': {exc}") from None
            for port, dtype in zip(node.outputs, out_types):
                if port.dtype is None or port.dtype != dtype:
                    port.dtype = dtype
                    port.data = np.zeros(dtype.shape, dtype=np.float64)
                    node.taintflag.taint()
            self._untyped.discard(node)

    # -- taint & evaluation --------------------------------------------------

    def taint(self, node: Node) -> int:
        return node.taintflag.taint()

    def freeze(self, node: Node) -> None:
        if node.taintflag.tainted:
            raise FrozenWhileTainted(f"node '{node.name}' is tainted; touch it before freezing")
        node.taintflag.frozen = True

    def unfreeze(self, node: Node) -> None:
        node.taintflag.frozen = False
        node.taintflag.taint()

    def stale_ancestry(self, node: Node) -> list[Node]:
        """Tainted nodes needed to refresh ``node``, in evaluation order."""
        if not node.taintflag.tainted:
            return []
        order = []
        seen = {node}
        stack = [(node, iter(node.upstream()))]
        while stack:
            current, it = stack[-1]
            for u in it:
                if u not in seen and u.taintflag.tainted:
                    seen.add(u)
                    stack.append((u, iter(u.upstream())))
                    break
            else:
                stack.pop()
                order.append(current)
        return order

    def touch(self, node: Node, workers: int | None = None) -> int:
        """Bring ``node`` up to date; return the number of evaluations performed.

        With ``workers > 1`` independent stale nodes are evaluated by a thread
        pool one dependency level at a time. Flags and counters are only
        updated from the calling thread.
        """
        if self._untyped:
            pending = self.ancestors(node) | {node}
            if not pending.isdisjoint(self._untyped):
                self.propagate_types([node])
        order = self.stale_ancestry(node)
        if not order:
            return 0
        if workers and workers > 1 and len(order) > 1:
            self._evaluate_parallel(order, workers)
        else:
            for n in order:
                _run(n)
                n.nevals += 1
                n.taintflag.tainted = False
        return len(order)

    def _evaluate_parallel(self, order: list[Node], workers: int) -> None:
        level: dict[Node, int] = {}
        for n in order:
            level[n] = 1 + max((level[u] for u in n.upstream() if u in level), default=-1)
        waves: dict[int, list[Node]] = {}
        for n in order:
            waves.setdefault(level[n], []).append(n)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for k in sorted(waves):
                list(pool.map(_run, waves[k]))
                for n in waves[k]:
                    n.nevals += 1
                    n.taintflag.tainted = False

    def taint_state(self) -> list[bool]:
        return [n.taintflag.tainted for n in self.nodes]

    def restore_taint_state(self, state: Sequence[bool]) -> None:
        """Overwrite flags without propagation (used after value-preserving excursions)."""
        for n, tainted in zip(self.nodes, state):
            n.taintflag.tainted = tainted

    def evaluation_counts(self) -> dict[str, int]:
        return {n.name: n.nevals for n in self.nodes}

    # -- export ----------------------------------------------------------------

    def dump(self) -> str:
        lines = []
        for n in self.nodes:
            ins = ", ".join(
                f"{p.name}<-{p.source!r}" if p.source is not None else f"{p.name}<-?"
                for p in n.inputs
            )
            outs = ", ".join(f"{p.name}:{p.dtype!r}" for p in n.outputs)
            state = "tainted" if n.tainted else "clean"
            if n.frozen:
                state += ",frozen"
            lines.append(f"{n.name} {n.kind} [{ins}] -> [{outs}] {state}")
        return "\n".join(lines) + ("\n" if lines else "")

    def to_dot(self) -> str:
        lines = ["digraph dagfit {", "  rankdir=LR;"]
        for n in self.nodes:
            label = f"{n.name}\\n{n.kind}"
            style = ', style=filled, fillcolor="#f4cccc"' if n.tainted else ""
            lines.append(f'  n{n.index} [label="{label}", shape=box{style}];')
        for n in self.nodes:
            for p in n.inputs:
                if p.source is not None:
                    src = p.source
                    lines.append(
                        f'  n{src.node.index} -> n{n.index} [label="{src.name}->{p.name}"];'
                    )
        lines.append("}")
        return "\n".join(lines) + "\n"


def _run(node: Node) -> None:
    inputs = [p.source.data for p in node.inputs]
    outputs = [p.data for p in node.outputs]
    try:
        node.evalfun(inputs, outputs)
    except EvalError:
        raise
    except Exception as exc:
        raise EvalError(node.name, str(exc) or type(exc).__name__) from exc
