"""Quadrature, interpolation and rebinning."""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss

from ..errors import BadEdges, BadKnots, BadOrder, EdgesNotSubset, TypeMismatch
from ..graph import DataType, Graph, Kind, Node
from .basic import _port


def check_edges(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise BadEdges("need at least two bin edges")
    if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
        raise BadEdges("bin edges must be finite and strictly increasing")
    return edges


def gauss_legendre_grid(edges, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature abscissas and weights for every bin, bin-major."""
    if int(order) != order or order < 1:
        raise BadOrder(f"quadrature order must be a positive integer, got {order!r}")
    edges = check_edges(edges)
    nodes, weights = leggauss(int(order))
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = mid[:, None] + half[:, None] * nodes[None, :]
    w = half[:, None] * weights[None, :]
    return x.ravel(), w.ravel()


class IntegratorSampler(Node):
    """Emits the quadrature points at which the integrand is to be evaluated."""

    def __init__(self, graph: Graph, edges, order: int, name: str | None = None):
        self.edges = check_edges(edges)
        self.order = int(order)
        self.x, self.w = gauss_legendre_grid(self.edges, order)
        super().__init__(graph, name=name)

    def typefun(self, types):
        return [DataType.points(self.x.size)]

    def evalfun(self, inputs, outputs):
        outputs[0][...] = self.x


class IntegratorCollector(Node):
    """Weights integrand samples and sums them per bin."""

    def __init__(self, graph: Graph, sampler: IntegratorSampler, f=None, name: str | None = None):
        self.sampler = sampler
        super().__init__(graph, [_port(f) if f is not None else None], name=name)

    def typefun(self, types):
        (f,) = types
        if f.shape != (self.sampler.x.size,):
            raise TypeMismatch(f"integrand has type {f!r}, expected {self.sampler.x.size} samples")
        return [DataType.hist(self.sampler.edges)]

    def evalfun(self, inputs, outputs):
        samples = (inputs[0] * self.sampler.w).reshape(-1, self.sampler.order)
        np.sum(samples, axis=1, out=outputs[0])


class Integrator:
    """Pair of sampler and collector nodes around an integrand subgraph.

    >>> integ = Integrator(g, edges=[0, 1, 2], order=3)
    >>> f = Elementwise(g, np.sin, [integ.points])
    >>> hist = integ.integrate(f)
    """

    def __init__(self, graph: Graph, edges, order: int = 5, name: str = "integrator"):
        self.graph = graph
        self.sampler = IntegratorSampler(graph, edges, order, name=f"{name}.sampler")
        self.name = name

    @property
    def points(self):
        return self.sampler.out

    def integrate(self, f=None) -> IntegratorCollector:
        return IntegratorCollector(self.graph, self.sampler, f, name=f"{self.name}.collector")


def interpolate_linear(xk, yk, xq, extrapolation: str = "constant") -> np.ndarray:
    """Piecewise-linear interpolation through ``(xk, yk)``.

    Outside the knot range the nearest knot value is repeated, or the end
    segment is extended when ``extrapolation == "linear"``.
    """
    xk = np.asarray(xk, dtype=np.float64)
    yk = np.asarray(yk, dtype=np.float64)
    xq = np.asarray(xq, dtype=np.float64)
    if xk.ndim != 1 or xk.size < 2 or yk.shape != xk.shape:
        raise BadKnots("need at least two knots with matching values")
    if np.any(np.diff(xk) <= 0):
        raise BadKnots("knots must be strictly increasing")
    if extrapolation not in ("constant", "linear"):
        raise ValueError(f"unknown extrapolation mode '{extrapolation}'")
    seg = np.clip(np.searchsorted(xk, xq, side="right") - 1, 0, xk.size - 2)
    x0, x1 = xk[seg], xk[seg + 1]
    y0, y1 = yk[seg], yk[seg + 1]
    t = (xq - x0) / (x1 - x0)
    out = y0 + t * (y1 - y0)
    # exact at knots regardless of rounding in t
    out = np.where(xq == x1, y1, out)
    out = np.where(xq == x0, y0, out)
    if extrapolation == "constant":
        out = np.where(xq < xk[0], yk[0], out)
        out = np.where(xq > xk[-1], yk[-1], out)
    return out


class Interpolator(Node):
    def __init__(self, graph: Graph, xk, yk, xq, extrapolation: str = "constant",
                 name: str | None = None):
        if extrapolation not in ("constant", "linear"):
            raise ValueError(f"unknown extrapolation mode '{extrapolation}'")
        self.extrapolation = extrapolation
        ports = [_port(p) if p is not None else None for p in (xk, yk, xq)]
        super().__init__(graph, ports, name=name, input_names=["xk", "yk", "xq"])

    def typefun(self, types):
        xk, yk, xq = types
        if xk.rank != 1 or xk.shape != yk.shape or xk.shape[0] < 2:
            raise TypeMismatch(f"knots {xk!r} and values {yk!r} must be rank 1 of equal length >= 2")
        return [DataType.points(*xq.shape)]

    def evalfun(self, inputs, outputs):
        outputs[0][...] = interpolate_linear(*inputs, extrapolation=self.extrapolation)


class Rebin(Node):
    """Merge adjacent bins; target edges must be a subset of the source edges."""

    def __init__(self, graph: Graph, hist, new_edges, name: str | None = None):
        self.new_edges = check_edges(new_edges)
        super().__init__(graph, [_port(hist) if hist is not None else None], name=name)

    def typefun(self, types):
        (h,) = types
        if h.kind is not Kind.HISTOGRAM:
            raise TypeMismatch(f"Rebin needs a histogram, got {h!r}")
        old = h.edges
        scale = 1e-12 * (old[-1] - old[0])
        idx = np.searchsorted(old, self.new_edges - scale)
        idx = np.minimum(idx, old.size - 1)
        if (np.any(np.abs(old[idx] - self.new_edges) > scale)
                or idx[0] != 0 or idx[-1] != old.size - 1):
            raise EdgesNotSubset("target edges must be a subsequence of the source edges "
                                 "spanning the same range")
        self._starts = idx[:-1]
        return [DataType.hist(old[idx])]

    def evalfun(self, inputs, outputs):
        outputs[0][...] = np.add.reduceat(inputs[0], self._starts)
