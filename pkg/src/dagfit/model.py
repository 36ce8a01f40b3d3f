"""Model namespace: the graph, its parameters and the named outputs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .errors import DuplicateName, UnknownAxis, UnknownName
from .graph import Graph, InputPort, OutputPort
from .parameters import ParameterRegistry


class IndexSpace:
    """Ordered named axes, each with an ordered list of labels."""

    def __init__(self, axes: Mapping[str, Sequence[str]] | Sequence[tuple[str, Sequence[str]]] = ()):
        items = list(axes.items()) if isinstance(axes, Mapping) else list(axes)
        self.axes: dict[str, tuple[str, ...]] = {}
        for name, labels in items:
            if name in self.axes:
                raise DuplicateName(f"axis '{name}' declared twice")
            labels = tuple(str(l) for l in labels)
            if not labels:
                raise ValueError(f"axis '{name}' has no labels")
            if len(set(labels)) != len(labels):
                raise DuplicateName(f"axis '{name}' has repeated labels")
            self.axes[name] = labels

    def __contains__(self, axis: str) -> bool:
        return axis in self.axes

    def __getitem__(self, axis: str) -> tuple[str, ...]:
        try:
            return self.axes[axis]
        except KeyError:
            raise UnknownAxis(f"unknown axis '{axis}'") from None

    def combinations(self, axes: Sequence[str]) -> Iterator[dict[str, str]]:
        """Every label assignment for ``axes``, last axis varying fastest."""
        for combo in itertools.product(*(self[a] for a in axes)):
            yield dict(zip(axes, combo))


@dataclass
class OpenSubgraph:
    """A registered piece of graph with inputs left open for a later call."""

    inputs: list[InputPort]
    output: OutputPort


@dataclass
class Model:
    params: ParameterRegistry = field(default_factory=ParameterRegistry)
    space: IndexSpace = field(default_factory=IndexSpace)
    outputs: dict[str, object] = field(default_factory=dict)
    open_inputs: dict[str, InputPort] = field(default_factory=dict)

    @property
    def graph(self) -> Graph:
        return self.params.graph

    def register(self, key: str, obj) -> None:
        if key in self.outputs:
            raise DuplicateName(f"output '{key}' already registered")
        self.outputs[key] = obj

    def register_input(self, key: str, port: InputPort) -> None:
        if key in self.open_inputs:
            raise DuplicateName(f"input '{key}' already registered")
        self.open_inputs[key] = port

    def lookup(self, key: str):
        """Registered output (or open subgraph) first, then parameter."""
        if key in self.outputs:
            return self.outputs[key]
        if key in self.params:
            return self.params[key]
        raise UnknownName(f"unknown name '{key}'")
