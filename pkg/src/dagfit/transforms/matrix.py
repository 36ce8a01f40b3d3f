"""Matrix transformations: products, Cholesky factorization, smearing."""

from __future__ import annotations

import numpy as np

from .. import linalg
from ..errors import TypeMismatch
from ..graph import DataType, Graph, Kind, Node
from .basic import _port

COLUMN_SUM_TOL = 1e-12


class MatrixProduct(Node):
    """``A @ B`` for ``A`` (r, c) and ``B`` (c, k) or (c,)."""

    def __init__(self, graph: Graph, a, b, name: str | None = None):
        super().__init__(graph, [_port(a) if a is not None else None, _port(b) if b is not None else None],
                         name=name, input_names=["matrix", "operand"])

    def typefun(self, types):
        a, b = types
        if a.rank != 2:
            raise TypeMismatch(f"left operand must be a matrix, got {a!r}")
        if a.shape[1] != b.shape[0]:
            raise TypeMismatch(f"inner dimensions differ: {a.shape} x {b.shape}")
        if b.rank == 1:
            return [DataType.points(a.shape[0])]
        return [DataType.points(a.shape[0], b.shape[1])]

    def evalfun(self, inputs, outputs):
        np.matmul(inputs[0], inputs[1], out=outputs[0])


class Cholesky(Node):
    """Lower Cholesky factor of a symmetric positive-definite input."""

    def __init__(self, graph: Graph, v, name: str | None = None):
        super().__init__(graph, [_port(v) if v is not None else None], name=name)

    def typefun(self, types):
        (v,) = types
        if v.rank != 2 or v.shape[0] != v.shape[1]:
            raise TypeMismatch(f"Cholesky needs a square matrix, got {v!r}")
        return [DataType.points(*v.shape)]

    def evalfun(self, inputs, outputs):
        outputs[0][...] = linalg.cholesky(inputs[0])


class SmearMatrixApply(Node):
    """Detector response ``M @ h``; histogram edges pass through.

    Columns may leak (sum below one) but never create events.
    """

    def __init__(self, graph: Graph, matrix, hist, name: str | None = None):
        super().__init__(graph, [_port(matrix) if matrix is not None else None,
                                 _port(hist) if hist is not None else None],
                         name=name, input_names=["matrix", "hist"])

    def typefun(self, types):
        m, h = types
        if h.kind is not Kind.HISTOGRAM:
            raise TypeMismatch(f"smearing applies to histograms, got {h!r}")
        if m.shape != (h.shape[0], h.shape[0]):
            raise TypeMismatch(f"smearing matrix {m.shape} does not match {h!r}")
        return [h]

    def evalfun(self, inputs, outputs):
        m, h = inputs
        colsum = m.sum(axis=0)
        if np.any(colsum > 1.0 + COLUMN_SUM_TOL):
            j = int(np.argmax(colsum))
            raise ValueError(f"smearing column {j} sums to {colsum[j]!r} > 1")
        np.matmul(m, h, out=outputs[0])
