"""Bundles: model fragments replicated over index-space points.

A bundle kind is a factory that builds one instance of a fragment. The
bundle config says which parameters to define (via name templates such as
``"eff.{det}"``), which axes to replicate over and under which keys the
instance's outputs and open inputs are registered. A parameter template
without a replicated placeholder yields one parameter shared by all
instances.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, DuplicateKind, DuplicateName, UnknownAxis, UnknownBundleKind
from .graph import DataType, Graph, InputPort, Node
from .model import IndexSpace, Model, OpenSubgraph
from .parameters import Parameter
from .transforms import Elementwise, Histogram, Integrator, SmearMatrixApply, WeightedSum, check_edges


@dataclass
class ParameterSpec:
    name: str
    central: float
    sigma: float = 0.0
    bounds: tuple[float, float] | None = None
    constrained: bool = False

    @classmethod
    def coerce(cls, spec) -> "ParameterSpec":
        if isinstance(spec, ParameterSpec):
            return spec
        if isinstance(spec, dict):
            return cls(**spec)
        return cls(*spec)


@dataclass
class BundleConfig:
    kind: str
    parameters: list = field(default_factory=list)
    major: list[str] = field(default_factory=list)
    provides: list[str] = field(default_factory=list)
    expects: list[str] = field(default_factory=list)
    options: dict = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        self.parameters = [ParameterSpec.coerce(p) for p in self.parameters]
        self.major = list(self.major)
        self.provides = list(self.provides)
        self.expects = list(self.expects)
        self.name = self.name or self.kind

    def templates(self) -> list[str]:
        return [p.name for p in self.parameters] + self.provides + self.expects


@dataclass
class BundleContext:
    """Everything a factory needs to build one instance."""

    model: Model
    config: BundleConfig
    labels: dict[str, str]
    params: list[Parameter]

    @property
    def graph(self) -> Graph:
        return self.model.graph

    @property
    def options(self) -> dict:
        return self.config.options

    def node_name(self, base: str) -> str:
        suffix = ".".join(self.labels[a] for a in self.config.major)
        return f"{self.config.name}.{base}" + (f".{suffix}" if suffix else "")

    def param(self, i: int, role: str) -> Parameter:
        if i >= len(self.params):
            raise ConfigError(f"bundle kind '{self.config.kind}' needs a '{role}' parameter "
                              f"(position {i})", key=f"bundles.{self.config.name}.parameters")
        return self.params[i]


# A factory returns the objects to register under ``provides`` (output ports
# or OpenSubgraph callables) and the open input ports for ``expects``.
Factory = Callable[[BundleContext], tuple[list, list[InputPort]]]

CATALOG: dict[str, Factory] = {}


def catalog_register(kind: str, factory: Factory, catalog: dict | None = None) -> None:
    catalog = CATALOG if catalog is None else catalog
    if kind in catalog:
        raise DuplicateKind(f"bundle kind '{kind}' is already registered")
    catalog[kind] = factory


def _placeholders(template: str) -> set[str]:
    return {f for _, f, _, _ in string.Formatter().parse(template) if f is not None}


def instantiate(cfg: BundleConfig, space: IndexSpace, model: Model, catalog: dict | None = None) -> list[str]:
    """Build every instance of ``cfg``; return the registered output keys."""
    catalog = CATALOG if catalog is None else catalog
    try:
        factory = catalog[cfg.kind]
    except KeyError:
        raise UnknownBundleKind(f"unknown bundle kind '{cfg.kind}'") from None
    for axis in cfg.major:
        if axis not in space:
            raise UnknownAxis(f"bundle '{cfg.name}': unknown axis '{axis}'")
    for tmpl in cfg.templates():
        extra = _placeholders(tmpl) - set(cfg.major)
        if extra:
            raise UnknownAxis(f"bundle '{cfg.name}': template '{tmpl}' uses "
                              f"{', '.join(sorted(extra))} which are not major axes")

    combos = list(space.combinations(cfg.major))
    # check every name before building anything
    param_names = {p.name.format(**lab) for lab in combos for p in cfg.parameters}
    for name in sorted(param_names):
        if name in model.params:
            raise DuplicateName(f"bundle '{cfg.name}': parameter '{name}' already defined")
    for lab in combos:
        for tmpl in cfg.provides:
            if tmpl.format(**lab) in model.outputs:
                raise DuplicateName(f"bundle '{cfg.name}': output '{tmpl.format(**lab)}' already registered")

    created: dict[str, Parameter] = {}
    keys = []
    for labels in combos:
        params = []
        for spec in cfg.parameters:
            name = spec.name.format(**labels)
            if name not in created:
                created[name] = model.params.define(name, spec.central, spec.sigma, bounds=spec.bounds,
                                                    constrained=spec.constrained)
            params.append(created[name])
        provided, open_inputs = factory(BundleContext(model, cfg, labels, params))
        if len(provided) < len(cfg.provides) or len(open_inputs) < len(cfg.expects):
            raise ConfigError(f"bundle kind '{cfg.kind}' provides {len(provided)} outputs and "
                              f"{len(open_inputs)} inputs; config asks for {len(cfg.provides)} and "
                              f"{len(cfg.expects)}", key=f"bundles.{cfg.name}")
        for tmpl, obj in zip(cfg.provides, provided):
            key = tmpl.format(**labels)
            model.register(key, obj)
            keys.append(key)
        for tmpl, port in zip(cfg.expects, open_inputs):
            model.register_input(tmpl.format(**labels), port)
    return keys


# -- built-in kinds -------------------------------------------------------------


def parse_edges(spec) -> np.ndarray:
    """Edges from an explicit list or ``{lo, hi, n}`` for ``n`` uniform bins."""
    if isinstance(spec, dict):
        return check_edges(np.linspace(float(spec["lo"]), float(spec["hi"]), int(spec["n"]) + 1))
    return check_edges(spec)


def gaussian_density(x, mean, width):
    z = (x - mean) / width
    return np.exp(-0.5 * z * z) / (width * math.sqrt(2.0 * math.pi))


class GaussSmearMatrix(Node):
    """Response matrix for Gaussian resolution ``sigma`` (absolute, observable units).

    Column ``j`` holds the probability that an event at the centre of true bin
    ``j`` is reconstructed in each bin; mass falling outside the range leaks.
    """

    def __init__(self, graph: Graph, edges, resolution, name: str | None = None):
        self.edges = check_edges(edges)
        self.centers = 0.5 * (self.edges[1:] + self.edges[:-1])
        super().__init__(graph, [resolution], name=name)

    def typefun(self, types):
        n = self.centers.size
        return [DataType.points(n, n)]

    def evalfun(self, inputs, outputs):
        sigma = inputs[0][0]
        if not sigma > 0:
            raise ValueError(f"resolution must be positive, got {sigma!r}")
        cdf = ndtr((self.edges[:, None] - self.centers[None, :]) / sigma)
        outputs[0][...] = np.diff(cdf, axis=0)


def _gaussian_peak(ctx: BundleContext):
    edges = parse_edges(ctx.options["edges"])
    order = int(ctx.options.get("order", 5))
    mean, width = ctx.param(0, "mean"), ctx.param(1, "width")
    integ = Integrator(ctx.graph, edges, order, name=ctx.node_name("integrator"))
    density = Elementwise(ctx.graph, gaussian_density, [integ.points, mean.output, width.output],
                          name=ctx.node_name("density"))
    return [integ.integrate(density).out], []


def _norm(ctx: BundleContext):
    scale = ctx.param(0, "scale")
    node = WeightedSum(ctx.graph, [None], [scale.output], name=ctx.node_name("norm"))
    return [OpenSubgraph([node.inputs[0]], node.out)], [node.inputs[0]]


def _smear_gauss(ctx: BundleContext):
    edges = parse_edges(ctx.options["edges"])
    res = ctx.param(0, "resolution")
    matrix = GaussSmearMatrix(ctx.graph, edges, res.output, name=ctx.node_name("matrix"))
    apply = SmearMatrixApply(ctx.graph, matrix, None, name=ctx.node_name("apply"))
    hist_in = apply.inputs[1]
    return [OpenSubgraph([hist_in], apply.out), matrix.out], [hist_in]


def load_counts(path) -> np.ndarray:
    """Counts file: one number per line; blank lines and ``#`` comments ignored."""
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            values.append(float(line))
    return np.array(values, dtype=np.float64)


def _histogram_data(ctx: BundleContext):
    opts = ctx.options
    edges = parse_edges(opts["edges"])
    if "file" in opts:
        path = Path(str(opts["file"]).format(**ctx.labels))
        if not path.is_absolute() and "base_dir" in opts:
            path = Path(opts["base_dir"]) / path
        counts = load_counts(path)
    elif "counts" in opts:
        counts = np.asarray(opts["counts"], dtype=np.float64)
    elif "fill" in opts:
        counts = np.full(edges.size - 1, float(opts["fill"]))
    else:
        counts = np.zeros(edges.size - 1)
    if counts.shape != (edges.size - 1,):
        raise ConfigError(f"{counts.size} counts for {edges.size - 1} bins", key=f"bundles.{ctx.config.name}")
    return [Histogram(ctx.graph, edges, counts, name=ctx.node_name("hist")).out], []


for _kind, _factory in [("gaussian_peak", _gaussian_peak), ("norm", _norm),
                        ("smear_gauss", _smear_gauss), ("histogram_data", _histogram_data)]:
    catalog_register(_kind, _factory)
