"""Test statistics and covariance assembly.

Both statistics follow the "smaller is better, one unit per sigma squared"
convention: chi-square with a full covariance matrix, and -2 ln(lambda) for
Poisson counts. Gaussian pull terms for constrained parameters share it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from .errors import (
    FixedParameter,
    NonPositivePrediction,
    NotPositiveDefinite,
    NotPSD,
    TypeMismatch,
)
from .graph import DataType, Graph, Node, OutputPort, as_output
from .parameters import Parameter, ParameterGroup, ParameterRegistry, ParameterSnapshot, group_covariance
from .transforms import Cholesky, Concat, Constant, Sum, finite_diff_jacobian


def chi2_cov(pred, data, V) -> float:
    """``d^T V^-1 d`` with ``d = pred - data``, solved through Cholesky."""
    pred = np.ravel(np.asarray(pred, dtype=np.float64))
    data = np.ravel(np.asarray(data, dtype=np.float64))
    if pred.shape != data.shape:
        raise TypeMismatch(f"prediction {pred.shape} and data {data.shape} differ")
    return linalg.quadratic_form(linalg.cholesky(V), pred - data)


def poisson_logl(pred, data) -> float:
    """Poisson ``-2 ln(lambda)`` relative to the saturated model."""
    pred = np.ravel(np.asarray(pred, dtype=np.float64))
    data = np.ravel(np.asarray(data, dtype=np.float64))
    if pred.shape != data.shape:
        raise TypeMismatch(f"prediction {pred.shape} and data {data.shape} differ")
    if np.any(~(pred > 0)):
        i = int(np.argmax(~(pred > 0)))
        raise NonPositivePrediction(f"prediction in bin {i} is {pred[i]!r}")
    terms = pred - data
    nz = data > 0
    terms[nz] += data[nz] * np.log(data[nz] / pred[nz])
    return float(2.0 * terms.sum())


def _pull_blocks(pulls: Sequence[Parameter], registry: ParameterRegistry | None):
    """Split pulls into correlated blocks: list of (indices, lower Cholesky)."""
    for p in pulls:
        if p.fixed:
            raise FixedParameter(f"pull on fixed parameter '{p.name}'")
    index = {p.name: i for i, p in enumerate(pulls)}
    blocks, used = [], set()
    for g in (registry.groups if registry is not None else ()):
        idx = [index[m] for m in g.members if m in index]
        if len(idx) < 2:
            continue
        full = group_covariance(registry, g)
        sel = [k for k, m in enumerate(g.members) if m in index]
        blocks.append((idx, linalg.cholesky(full[np.ix_(sel, sel)])))
        used.update(idx)
    for i, p in enumerate(pulls):
        if i not in used:
            blocks.append(([i], np.array([[p.sigma]])))
    return blocks


def pull_penalty(pulls: Sequence[Parameter], registry: ParameterRegistry | None = None) -> float:
    if not pulls:
        return 0.0
    d = np.array([p.value - p.central for p in pulls])
    total = 0.0
    for idx, L in _pull_blocks(pulls, registry):
        if len(idx) == 1:
            total += (d[idx[0]] / L[0, 0]) ** 2
        else:
            total += linalg.quadratic_form(L, d[idx])
    return total


def add_pulls(stat: float, pulls: Sequence[Parameter], registry: ParameterRegistry | None = None) -> float:
    """Add Gaussian constraint terms; correlated groups use their full covariance."""
    return stat + pull_penalty(pulls, registry)


# -- covariance --------------------------------------------------------------


@dataclass
class CovarianceModel:
    """How to assemble the covariance of a binned prediction.

    ``stat`` is ``"prediction"``, ``"data"`` or a fixed matrix. Each entry of
    ``syst`` is a :class:`ParameterGroup` (or a plain list of parameter names,
    treated as uncorrelated) whose uncertainty is propagated as ``J C J^T``.
    """

    stat: object = "prediction"
    syst: list = field(default_factory=list)
    jacobians: dict = field(default_factory=dict, repr=False)

    def groups(self, registry: ParameterRegistry) -> list[ParameterGroup]:
        out = []
        for g in self.syst:
            if isinstance(g, ParameterGroup):
                out.append(g)
            else:
                names = [g] if isinstance(g, str) else list(g)
                existing = [registry.group_of(n) for n in names]
                if len(names) > 1 and existing[0] is not None and all(e is existing[0] for e in existing):
                    grp = existing[0]
                    sel = [grp.members.index(n) for n in names]
                    out.append(ParameterGroup(names, grp.correlation[np.ix_(sel, sel)]))
                else:
                    out.append(ParameterGroup(names, np.eye(len(names))))
        return out


def build_covariance(model: CovarianceModel, prediction, data, registry: ParameterRegistry,
                     at: ParameterSnapshot | None = None) -> np.ndarray:
    """``V = V_stat + sum_g J_g C_g J_g^T`` evaluated at snapshot ``at``."""
    port = as_output(prediction)
    current = registry.snapshot()
    if at is not None:
        registry.restore(at)
    try:
        pred = np.ravel(port()).copy()
        n = pred.size
        if isinstance(model.stat, str):
            if model.stat == "prediction":
                V = np.diag(pred)
            elif model.stat == "data":
                obs = np.ravel(as_output(data)() if not isinstance(data, np.ndarray) else data)
                if obs.size != n:
                    raise TypeMismatch(f"data has {obs.size} bins, prediction {n}")
                V = np.diag(obs.astype(np.float64))
            else:
                raise ValueError(f"unknown statistical covariance '{model.stat}'")
        else:
            V = np.array(model.stat, dtype=np.float64)
            if V.shape != (n, n):
                raise TypeMismatch(f"fixed covariance {V.shape} does not match {n} bins")
        model.jacobians = {}
        for g in model.groups(registry):
            C = group_covariance(registry, g)
            J = finite_diff_jacobian(port, [registry[m] for m in g.members])
            model.jacobians[tuple(g.members)] = J
            V = V + J @ C @ J.T
    finally:
        registry.restore(current)
    V = 0.5 * (V + V.T)
    if not linalg.is_psd(V):
        raise NotPSD("assembled covariance is not positive semi-definite")
    return V


def write_matrix_csv(path, matrix, rows: Sequence[str] | None = None, cols: Sequence[str] | None = None) -> None:
    """Dump a matrix as CSV, with optional row/column labels, for auditing."""
    matrix = np.atleast_2d(matrix)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if cols is not None:
            w.writerow(([""] if rows is not None else []) + list(cols))
        for i, row in enumerate(matrix):
            cells = [repr(float(v)) for v in row]
            w.writerow(([rows[i]] if rows is not None else []) + cells)


# -- statistic nodes ------------------------------------------------------------


class Chi2(Node):
    def __init__(self, graph: Graph, pred, data, chol, name: str | None = None):
        super().__init__(graph, [pred, data, chol], name=name, input_names=["pred", "data", "chol"])

    def typefun(self, types):
        pred, data, chol = types
        if pred.size != data.size or chol.shape != (pred.size, pred.size):
            raise TypeMismatch(f"incompatible chi2 inputs {pred!r}, {data!r}, {chol!r}")
        return [DataType.points(1)]

    def evalfun(self, inputs, outputs):
        pred, data, chol = inputs
        outputs[0][0] = linalg.quadratic_form(chol, np.ravel(pred) - np.ravel(data))


class PoissonLogL(Node):
    def __init__(self, graph: Graph, pred, data, name: str | None = None):
        super().__init__(graph, [pred, data], name=name, input_names=["pred", "data"])

    def typefun(self, types):
        pred, data = types
        if pred.size != data.size:
            raise TypeMismatch(f"prediction {pred!r} and data {data!r} differ")
        return [DataType.points(1)]

    def evalfun(self, inputs, outputs):
        outputs[0][0] = poisson_logl(*inputs)


class Pulls(Node):
    """Sum of Gaussian constraint terms over a fixed list of parameters."""

    def __init__(self, graph: Graph, pulls: Sequence[Parameter], registry: ParameterRegistry | None = None,
                 name: str | None = None):
        self.params = list(pulls)
        self.central = np.array([p.central for p in self.params])
        self.blocks = _pull_blocks(self.params, registry)
        super().__init__(graph, [p.output for p in self.params], name=name)

    def typefun(self, types):
        return [DataType.points(1)]

    def evalfun(self, inputs, outputs):
        d = np.array([x[0] for x in inputs]) - self.central
        total = 0.0
        for idx, L in self.blocks:
            if len(idx) == 1:
                total += (d[idx[0]] / L[0, 0]) ** 2
            else:
                total += linalg.quadratic_form(L, d[idx])
        outputs[0][0] = total


def _joined(graph: Graph, ports, name: str) -> OutputPort:
    if isinstance(ports, (list, tuple)):
        ports = [as_output(p) for p in ports]
        if len(ports) == 1:
            return ports[0]
        return Concat(graph, ports, name=name).out
    return as_output(ports)


class Statistic:
    """Scalar statistic node assembled from prediction, data and pulls.

    For chi-square the covariance is assembled once, at construction time, and
    kept in a constant node feeding a Cholesky node; :meth:`update_covariance`
    re-assembles it at the current parameter values.
    """

    def __init__(self, kind: str, prediction, data, registry: ParameterRegistry,
                 pulls: Sequence[Parameter] = (), covariance: CovarianceModel | None = None,
                 name: str = "stat"):
        if kind not in ("chi2", "poisson"):
            raise ValueError(f"unknown statistic kind '{kind}'")
        self.kind = kind
        self.registry = registry
        graph = self.graph = registry.graph
        self.prediction = _joined(graph, prediction, f"{name}.prediction")
        self.data = _joined(graph, data, f"{name}.data")
        graph.propagate_types([self.prediction.node, self.data.node])
        if self.prediction.dtype.size != self.data.dtype.size:
            raise TypeMismatch(f"prediction {self.prediction.dtype!r} and data {self.data.dtype!r} differ")
        self.pulls = list(pulls)
        if kind == "chi2":
            n = self.prediction.dtype.size
            self.covariance = covariance or CovarianceModel()
            self.cov_node = Constant(graph, np.eye(n), name=f"{name}.covariance")
            self.chol = Cholesky(graph, self.cov_node, name=f"{name}.cholesky")
            core = Chi2(graph, self.prediction, self.data, self.chol, name=f"{name}.chi2")
            self.update_covariance()
        else:
            self.covariance = None
            core = PoissonLogL(graph, self.prediction, self.data, name=f"{name}.poisson")
        self.core = core
        if self.pulls:
            self.pull_node = Pulls(graph, self.pulls, registry, name=f"{name}.pulls")
            self.node = Sum(graph, [core, self.pull_node], name=name)
        else:
            self.pull_node = None
            self.node = core

    @property
    def output(self) -> OutputPort:
        return self.node.out

    def update_covariance(self) -> np.ndarray:
        V = build_covariance(self.covariance, self.prediction, self.data, self.registry)
        self.cov_node.set(V)
        return V

    def value(self) -> float:
        return float(self.output()[0])
