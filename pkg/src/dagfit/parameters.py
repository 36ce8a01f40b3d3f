"""Named scalar parameters and their correlations.

Each parameter is backed by a one-element :class:`Variable` node, so the rest
of the graph consumes parameters like any other array. Changing a value taints
that node (and therefore everything that depends on it) only when the value
actually changes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import linalg
from .errors import (
    BadBounds,
    DuplicateName,
    FixedParameter,
    NegativeSigma,
    NotPositiveDefinite,
    NotPSD,
    OutOfBounds,
    UnknownMember,
    UnknownName,
)
from .graph import DataType, Graph, Node

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z0-9_]+)*$")


class Variable(Node):
    """Source node holding a single parameter value."""

    def __init__(self, graph: Graph, value: float, name: str):
        self.value = float(value)
        super().__init__(graph, name=name)

    def typefun(self, types):
        return [DataType.points(1)]

    def evalfun(self, inputs, outputs):
        outputs[0][0] = self.value


class Parameter:
    def __init__(self, name: str, central: float, sigma: float, node: Variable,
                 bounds: tuple[float, float] | None = None, constrained: bool = False):
        self.name = name
        self.central = float(central)
        self.sigma = float(sigma)
        self.bounds = bounds
        self.constrained = constrained
        self.node = node
        self.ntaints = 0

    @property
    def value(self) -> float:
        return self.node.value

    @value.setter
    def value(self, v: float) -> None:
        self.set(v)

    @property
    def output(self):
        return self.node.out

    @property
    def fixed(self) -> bool:
        return self.sigma == 0.0

    def set(self, v: float) -> bool:
        """Assign a value; return True if anything was tainted."""
        v = float(v)
        if self.bounds is not None and not (self.bounds[0] <= v <= self.bounds[1]):
            raise OutOfBounds(f"{self.name}: {v} outside bounds {self.bounds}")
        if v == self.node.value:
            return False
        self.node.value = v
        self.node.taintflag.taint()
        self.ntaints += 1
        return True

    def set_normalized(self, t: float) -> bool:
        if self.fixed:
            raise FixedParameter(f"{self.name} has zero sigma")
        return self.set(self.central + t * self.sigma)

    @property
    def normalized(self) -> float:
        if self.fixed:
            raise FixedParameter(f"{self.name} has zero sigma")
        return (self.value - self.central) / self.sigma

    def __repr__(self):
        return f"<Parameter {self.name}={self.value:g} ({self.central:g}±{self.sigma:g})>"


@dataclass
class ParameterGroup:
    """Correlated block of parameters."""

    members: list[str]
    correlation: np.ndarray

    def __post_init__(self):
        self.members = list(self.members)
        self.correlation = np.array(self.correlation, dtype=np.float64)


class ParameterSnapshot(dict):
    """Mapping name -> value captured by :meth:`ParameterRegistry.snapshot`."""


class ParameterRegistry:
    def __init__(self, graph: Graph | None = None):
        self.graph = graph if graph is not None else Graph()
        self._params: dict[str, Parameter] = {}
        self.groups: list[ParameterGroup] = []

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> Parameter:
        try:
            return self._params[name]
        except KeyError:
            raise UnknownName(f"unknown parameter '{name}'") from None

    get = __getitem__

    def names(self) -> list[str]:
        return list(self._params)

    def namespace(self, prefix: str) -> list[Parameter]:
        prefix = prefix.rstrip(".") + "."
        return [p for n, p in self._params.items() if n.startswith(prefix)]

    def define(self, name: str, central: float, sigma: float = 0.0, *,
               bounds: Sequence[float] | None = None, constrained: bool = False) -> Parameter:
        if not NAME_RE.match(name):
            raise ValueError(f"invalid parameter name '{name}'")
        if name in self._params:
            raise DuplicateName(f"parameter '{name}' already defined")
        if sigma < 0:
            raise NegativeSigma(f"{name}: sigma {sigma} < 0")
        if bounds is not None:
            lo, hi = map(float, bounds)
            if not lo < hi:
                raise BadBounds(f"{name}: bounds ({lo}, {hi}) are not ordered")
            if not lo <= central <= hi:
                raise BadBounds(f"{name}: central {central} outside bounds ({lo}, {hi})")
            bounds = (lo, hi)
        node = Variable(self.graph, central, name=name)
        p = Parameter(name, central, sigma, node, bounds=bounds, constrained=constrained)
        self._params[name] = p
        return p

    def _resolve(self, p: Parameter | str) -> Parameter:
        return self[p] if isinstance(p, str) else p

    def set_value(self, p: Parameter | str, v: float) -> bool:
        return self._resolve(p).set(v)

    def set_normalized(self, p: Parameter | str, t: float) -> bool:
        return self._resolve(p).set_normalized(t)

    def free(self) -> list[Parameter]:
        return [p for p in self._params.values() if not p.fixed]

    def constrained(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.constrained and not p.fixed]

    # -- correlations --------------------------------------------------------

    def correlate(self, members: Sequence[str], correlation) -> ParameterGroup:
        group = ParameterGroup(list(members), correlation)
        group_covariance(self, group)
        self.groups.append(group)
        return group

    def group_of(self, name: str) -> ParameterGroup | None:
        for g in self.groups:
            if name in g.members:
                return g
        return None

    def covariance(self, params: Sequence[Parameter | str]) -> np.ndarray:
        """Prior covariance over ``params`` assembled block by block."""
        params = [self._resolve(p) for p in params]
        index = {p.name: i for i, p in enumerate(params)}
        C = np.diag([p.sigma ** 2 for p in params])
        for g in self.groups:
            Cg = group_covariance(self, g)
            for a, ma in enumerate(g.members):
                for b, mb in enumerate(g.members):
                    if ma in index and mb in index:
                        C[index[ma], index[mb]] = Cg[a, b]
        return C

    # -- snapshots -------------------------------------------------------------

    def snapshot(self) -> ParameterSnapshot:
        return ParameterSnapshot((n, p.value) for n, p in self._params.items())

    def restore(self, snap: ParameterSnapshot) -> int:
        unknown = [n for n in snap if n not in self._params]
        if unknown:
            raise UnknownName(f"snapshot has unknown parameters: {', '.join(unknown)}")
        return sum(self._params[n].set(v) for n, v in snap.items())

    def table(self) -> str:
        """Flat text dump: name, value, central, sigma, flags."""
        rows = [("name", "value", "central", "sigma", "flags")]
        for p in self._params.values():
            flags = []
            if p.fixed:
                flags.append("fixed")
            if p.constrained:
                flags.append("constrained")
            if p.bounds is not None:
                flags.append(f"bounds=[{p.bounds[0]!r},{p.bounds[1]!r}]")
            if self.group_of(p.name) is not None:
                flags.append("correlated")
            rows.append((p.name, repr(p.value), repr(p.central), repr(p.sigma), ",".join(flags) or "-"))
        width = max(len(r[0]) for r in rows)
        return "".join(f"{r[0]:<{width}}  " + "  ".join(r[1:]) + "\n" for r in rows)


def group_covariance(registry: ParameterRegistry, group: ParameterGroup) -> np.ndarray:
    """``C[i, j] = corr[i, j] * sigma_i * sigma_j`` for the members of ``group``."""
    missing = [m for m in group.members if m not in registry]
    if missing:
        raise UnknownMember(f"unknown group members: {', '.join(missing)}")
    corr = group.correlation
    n = len(group.members)
    if corr.shape != (n, n):
        raise NotPSD(f"correlation shape {corr.shape} does not match {n} members")
    if not np.all(np.diag(corr) == 1.0):
        raise NotPSD("correlation diagonal must be exactly 1")
    if np.any(np.abs(corr) > 1.0):
        raise NotPSD("correlation entries must lie in [-1, 1]")
    if not np.allclose(corr, corr.T, rtol=0, atol=1e-12):
        raise NotPSD("correlation matrix is not symmetric")
    corr = 0.5 * (corr + corr.T)
    try:
        linalg.cholesky(corr, semidefinite=True)
    except NotPositiveDefinite as exc:
        raise NotPSD(f"correlation is not positive semi-definite: {exc}") from None
    sigma = np.array([registry[m].sigma for m in group.members])
    return corr * np.outer(sigma, sigma)

