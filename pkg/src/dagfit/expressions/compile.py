"""Index expansion and graph construction for parsed expressions."""

from __future__ import annotations

from typing import Mapping, Sequence

from ..errors import AlreadyBound, TypeMismatch, UnboundIndex, UnknownAxis
from ..graph import OutputPort, as_output
from ..model import IndexSpace, Model, OpenSubgraph
from ..parameters import Parameter
from ..transforms import Constant, MatrixProduct, Product, Sum, WeightedSum
from .syntax import Add, Call, Expr, Mul, NameRef, Num, SumReduce


def join_key(name: str, labels: Sequence[str]) -> str:
    return ".".join([name, *labels])


def free_indices(ast: Expr) -> list[str]:
    """Index variables not bound by an enclosing sum, in first-use order."""
    found: list[str] = []

    def walk(n: Expr, bound: frozenset) -> None:
        if isinstance(n, NameRef):
            for v in n.indices:
                if v not in bound and v not in found:
                    found.append(v)
        elif isinstance(n, Call):
            walk(n.callee, bound)
            for a in n.args:
                walk(a, bound)
        elif isinstance(n, (Add, Mul)):
            for c in (n.terms if isinstance(n, Add) else n.factors):
                walk(c, bound)
        elif isinstance(n, SumReduce):
            walk(n.body, bound | {n.var})

    walk(ast, frozenset())
    return found


def expand(ast: Expr, space: IndexSpace, bindings: Mapping[str, str] | None = None) -> Expr:
    """Unroll sums over their axis labels and substitute indices by labels.

    ``x[d]`` with ``d`` bound to ``AD1`` becomes the plain name ``x.AD1``.
    """
    bindings = dict(bindings or {})

    def walk(n: Expr, env: dict) -> Expr:
        if isinstance(n, NameRef):
            if not n.indices:
                return n
            labels = []
            for v in n.indices:
                if v not in env:
                    raise UnboundIndex(f"index '{v}' of '{n.name}' is not bound")
                labels.append(env[v])
            return NameRef(join_key(n.name, labels))
        if isinstance(n, Num):
            return n
        if isinstance(n, Call):
            return Call(walk(n.callee, env), tuple(walk(a, env) for a in n.args))
        if isinstance(n, Mul):
            return Mul(tuple(walk(f, env) for f in n.factors))
        if isinstance(n, Add):
            return Add(tuple(walk(t, env) for t in n.terms))
        if isinstance(n, SumReduce):
            if n.var not in space:
                raise UnknownAxis(f"sum over unknown axis '{n.var}'")
            bodies = [walk(n.body, {**env, n.var: label}) for label in space[n.var]]
            return bodies[0] if len(bodies) == 1 else Add(tuple(bodies))
        raise TypeError(f"not an expression node: {n!r}")

    return walk(ast, bindings)


def replicate(ast: Expr, space: IndexSpace, free: Sequence[str]) -> list[tuple[tuple[str, ...], Expr]]:
    """One expanded copy of ``ast`` per label combination of the ``free`` axes."""
    undeclared = [v for v in free_indices(ast) if v not in free]
    if undeclared:
        raise UnboundIndex(f"index variables {', '.join(undeclared)} are neither summed nor declared free")
    for axis in free:
        if axis not in space:
            raise UnknownAxis(f"unknown axis '{axis}'")
    return [(tuple(b[a] for a in free), expand(ast, space, b)) for b in space.combinations(list(free))]


class ExpressionBuilder:
    """Compile index-free expressions into nodes of ``model.graph``.

    Structurally identical subexpressions are built once per builder, so
    replicated models share common pieces of graph.
    """

    def __init__(self, model: Model):
        self.model = model
        self.graph = model.graph
        self._values: dict[Expr, tuple] = {}
        self._arrays: dict[Expr, OutputPort] = {}
        self.nodes_created = 0

    def build(self, ast: Expr) -> OutputPort:
        return self._array(ast)

    # A value is one of
    #   ("const", float)
    #   ("param", Parameter)
    #   ("array", OutputPort)
    #   ("scaled", OutputPort, [Parameter, ...], float | None)

    def _value(self, ast: Expr) -> tuple:
        if ast in self._values:
            return self._values[ast]
        if isinstance(ast, Num):
            val = ("const", ast.value)
        elif isinstance(ast, NameRef):
            if ast.indices:
                raise UnboundIndex(f"'{ast.name}' still has index variables; expand first")
            entry = self.model.lookup(ast.name)
            if isinstance(entry, Parameter):
                val = ("param", entry)
            elif isinstance(entry, OpenSubgraph):
                val = ("array", entry.output)
            else:
                val = ("array", as_output(entry))
        elif isinstance(ast, Call):
            val = ("array", self._call(ast))
        elif isinstance(ast, Mul):
            val = self._mul(ast)
        elif isinstance(ast, Add):
            val = ("array", self._add(ast))
        elif isinstance(ast, SumReduce):
            raise UnboundIndex(f"sum over '{ast.var}' must be expanded before building")
        else:
            raise TypeError(f"not an expression node: {ast!r}")
        self._values[ast] = val
        return val

    def _array(self, ast: Expr) -> OutputPort:
        if ast in self._arrays:
            return self._arrays[ast]
        val = self._value(ast)
        port = self._materialize(val)
        self._arrays[ast] = port
        return port

    def _materialize(self, val: tuple) -> OutputPort:
        tag = val[0]
        if tag == "array":
            return val[1]
        if tag == "param":
            return val[1].output
        if tag == "const":
            return self._node(Constant, [val[1]], name="const").out
        _, arr, params, const = val
        return self._node(WeightedSum, [arr], [self._weight(params, const)], name="scale").out

    def _weight(self, params: list[Parameter], const: float | None):
        """Collapse scalar factors into a float or a one-element port."""
        if not params:
            return 1.0 if const is None else const
        port = params[0].output if len(params) == 1 else \
            self._node(Product, [p.output for p in params], name="scalar").out
        if const is None:
            return port
        return self._node(WeightedSum, [port], [const], name="scalar").out

    def _node(self, cls, *args, **kwargs):
        self.nodes_created += 1
        return cls(self.graph, *args, **kwargs)

    def _call(self, ast: Call) -> OutputPort:
        entry = self.model.lookup(ast.callee.name)
        if not isinstance(entry, OpenSubgraph):
            raise TypeMismatch(f"'{ast.callee.name}' is not callable")
        if not ast.args:
            return entry.output
        if len(ast.args) != len(entry.inputs):
            raise TypeMismatch(f"'{ast.callee.name}' takes {len(entry.inputs)} arguments, "
                               f"got {len(ast.args)}")
        for arg, port in zip(ast.args, entry.inputs):
            src = self._array(arg)
            if port.source is None:
                self.graph.bind(src, port)
            elif port.source is not src:
                raise AlreadyBound(f"'{ast.callee.name}' was already called with different arguments")
        return entry.output

    def _mul(self, ast: Mul) -> tuple:
        const: float | None = None
        params: list[Parameter] = []
        arrays: list[OutputPort] = []
        for f in ast.factors:
            val = self._value(f)
            if val[0] == "const":
                const = val[1] if const is None else const * val[1]
            elif val[0] == "param":
                params.append(val[1])
            elif val[0] == "array":
                arrays.append(val[1])
            else:
                arrays.append(self._array(f))
        if not arrays:
            if not params:
                return ("const", const)
            arrays.append(params.pop().output)
        arr = self._combine(arrays)
        if not params and const is None:
            return ("array", arr)
        return ("scaled", arr, params, const)

    def _combine(self, arrays: list[OutputPort]) -> OutputPort:
        """Matrix products while the left operand is a matrix, element-wise after."""
        if len(arrays) == 1:
            return arrays[0]
        self.graph.propagate_types([a.node for a in arrays])
        acc = arrays[0]
        pending: list[OutputPort] = [acc]
        for b in arrays[1:]:
            if len(pending) == 1 and pending[0].dtype.rank == 2:
                mp = self._node(MatrixProduct, pending[0], b, name="matmul")
                self.graph.propagate_types([mp])
                pending = [mp.out]
            else:
                pending.append(b)
        if len(pending) == 1:
            return pending[0]
        return self._node(Product, pending, name="product").out

    def _add(self, ast: Add) -> OutputPort:
        arrays: list[OutputPort] = []
        weights: list = []
        weighted = False
        for t in ast.terms:
            val = self._value(t)
            if val[0] == "scaled":
                _, arr, params, const = val
                arrays.append(arr)
                weights.append(self._weight(params, const))
                weighted = True
            else:
                arrays.append(self._materialize(val) if val[0] != "array" else val[1])
                weights.append(1.0)
        if weighted:
            return self._node(WeightedSum, arrays, weights, name="wsum").out
        return self._node(Sum, arrays, name="sum").out


def compile_expression(src_or_ast, model: Model, builder: ExpressionBuilder | None = None) -> OutputPort:
    """Parse (if needed), expand over ``model.space`` and build one expression."""
    from .syntax import parse

    ast = parse(src_or_ast) if isinstance(src_or_ast, str) else src_or_ast
    builder = builder or ExpressionBuilder(model)
    return builder.build(expand(ast, model.space))
