"""Lazily evaluated dataflow graphs for building and fitting statistical models."""

from .errors import DagfitError
from .graph import DataType, Graph, Kind, Node
from .model import IndexSpace, Model, OpenSubgraph
from .parameters import Parameter, ParameterGroup, ParameterRegistry, group_covariance

__version__ = "0.1.0"

__all__ = [
    "DagfitError",
    "DataType",
    "Graph",
    "IndexSpace",
    "Kind",
    "Model",
    "Node",
    "OpenSubgraph",
    "Parameter",
    "ParameterGroup",
    "ParameterRegistry",
    "group_covariance",
]
