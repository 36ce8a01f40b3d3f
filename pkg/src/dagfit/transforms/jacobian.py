"""Central-difference derivatives of graph outputs with respect to parameters."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import FixedParameter
from ..graph import as_output

DEFAULT_REL_STEP = 0.01


def finite_diff_jacobian(target, params: Sequence, rel_step: float = DEFAULT_REL_STEP) -> np.ndarray:
    """Jacobian ``J[i, k] = d target_i / d param_k`` by central differences.

    Steps are ``rel_step * sigma_k``. Parameter values are restored on exit
    and, because the graph is deterministic, so are all output buffers and
    taint flags: a node that was clean before the call is clean afterwards
    with the same contents, and a tainted one stays tainted.
    """
    port = as_output(target)
    graph = port.node.graph
    for p in params:
        if p.fixed:
            raise FixedParameter(f"cannot differentiate with respect to fixed '{p.name}'")
    saved_state = graph.taint_state()
    saved_values = [p.value for p in params]
    port.node.touch()
    n_out = port.data.size
    jac = np.empty((n_out, len(params)))
    try:
        for k, p in enumerate(params):
            h = rel_step * p.sigma
            x0 = saved_values[k]
            _force(p, x0 + h)
            port.node.touch()
            up = port.data.ravel().copy()
            _force(p, x0 - h)
            port.node.touch()
            down = port.data.ravel()
            jac[:, k] = (up - down) / (2.0 * h)
            p.set(x0)
    finally:
        for p, v in zip(params, saved_values):
            p.set(v)
        # Refresh the target so buffers hold the values for the restored
        # parameters, then reinstate the original flags.
        port.node.touch()
        graph.restore_taint_state(saved_state)
    return jac


def _force(p, v: float) -> None:
    # Steps may leave the bounds; differentiate the model there anyway.
    bounds, p.bounds = p.bounds, None
    try:
        p.set(v)
    finally:
        p.bounds = bounds
