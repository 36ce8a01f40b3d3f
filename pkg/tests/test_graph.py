import random

import numpy as np
import pytest

from dagfit.errors import (
    AlreadyBound,
    CycleError,
    EvalError,
    FrozenWhileTainted,
    TypeMismatch,
    UnboundInput,
)
from dagfit.graph import DataType, Graph, Kind
from dagfit.transforms import Cholesky, Constant, Identity, MatrixProduct, Sum


def chain(n, g=None):
    g = g or Graph()
    src = Constant(g, [1.0, 2.0], name="src")
    nodes = [src]
    for i in range(1, n):
        nodes.append(Identity(g, nodes[-1], name=f"n{i}"))
    return g, nodes


def counts(g):
    return np.array([n.nevals for n in g.nodes])


# -- DataType -----------------------------------------------------------------


def test_datatype_histogram_requires_increasing_edges():
    h = DataType.hist([0, 1, 3])
    assert h.kind is Kind.HISTOGRAM and h.shape == (2,)
    with pytest.raises(TypeMismatch):
        DataType.hist([0, 2, 1])
    with pytest.raises(TypeMismatch):
        DataType(Kind.POINTS, (3,), edges=[0, 1, 2, 3])
    with pytest.raises(TypeMismatch):
        DataType.points(2, 2, 2)


def test_datatype_equality_includes_edges():
    assert DataType.hist([0, 1, 2]) == DataType.hist([0.0, 1.0, 2.0])
    assert DataType.hist([0, 1, 2]) != DataType.hist([0, 1.5, 2])
    assert DataType.points(2) != DataType.hist([0, 1, 2])


# -- bind ---------------------------------------------------------------------


def test_bind_first_edge_taints_consumer():
    g = Graph()
    a = Constant(g, [1.0], name="A")
    b = Identity(g, None, name="B")
    a.touch()
    b.taintflag.tainted = False
    g.bind(a.out, b.inputs[0])
    assert b.inputs[0].source is a.out
    assert b.tainted


def test_bind_rejects_two_cycle():
    g = Graph()
    a = Identity(g, None, name="A")
    b = Identity(g, a, name="B")
    with pytest.raises(CycleError):
        g.bind(b.out, a.inputs[0])
    assert a.inputs[0].source is None


def test_bind_self_loop_and_already_bound():
    g = Graph()
    a = Constant(g, [1.0])
    s = Sum(g, n=2)
    g.bind(a.out, s.inputs[0])
    with pytest.raises(AlreadyBound):
        g.bind(a.out, s.inputs[0])
    with pytest.raises(CycleError):
        g.bind(s.out, s.inputs[1])


def test_taint_transitive_on_chain():
    g, (a, b, c) = chain(3)
    c.touch()
    assert not any(n.tainted for n in (a, b, c))
    a.taint()
    assert b.tainted and c.tainted


# -- types ----------------------------------------------------------------------


def test_sum_shape_passthrough():
    g = Graph()
    s = Sum(g, [Constant(g, np.ones(10)), Constant(g, np.ones(10))])
    g.propagate_types()
    assert s.out.dtype == DataType.points(10)


def test_sum_shape_mismatch():
    g = Graph()
    Sum(g, [Constant(g, np.ones(10)), Constant(g, np.ones(11))], name="bad")
    with pytest.raises(TypeMismatch, match="bad"):
        g.propagate_types()


def test_histogram_edge_disagreement():
    from dagfit.transforms import Histogram

    g = Graph()
    Sum(g, [Histogram(g, [0, 1, 2]), Histogram(g, [0, 1, 3])])
    with pytest.raises(TypeMismatch):
        g.propagate_types()


def test_matrix_product_shape_rule():
    g = Graph()
    m = MatrixProduct(g, Constant(g, np.ones((3, 4))), Constant(g, np.ones((4, 2))))
    g.propagate_types()
    assert m.out.dtype.shape == (3, 2)


def test_unbound_input_names_node():
    g = Graph()
    Sum(g, n=2, name="open")
    with pytest.raises(UnboundInput, match="open"):
        g.propagate_types()


def test_type_propagation_idempotent():
    g, nodes = chain(5)
    g.propagate_types()
    before = [(n.out.dtype, n.out.data) for n in nodes]
    g.propagate_types()
    for n, (t, buf) in zip(nodes, before):
        assert n.out.dtype == t
        assert n.out.data is buf


# -- touch ------------------------------------------------------------------------


def test_touch_twice_is_lazy():
    g, nodes = chain(4)
    assert nodes[-1].touch() == 4
    before = counts(g)
    assert nodes[-1].touch() == 0
    assert np.array_equal(counts(g), before)


def test_diamond_evaluates_each_once():
    g = Graph()
    a = Constant(g, [1.0], name="A")
    b = Identity(g, a, name="B")
    c = Identity(g, a, name="C")
    d = Sum(g, [b, c], name="D")
    d.touch()
    a.set([2.0])
    before = counts(g)
    d.touch()
    assert list(counts(g) - before) == [1, 1, 1, 1]
    assert d.out.data[0] == 4.0


def test_chain_1000_mid_taint():
    g, nodes = chain(1000)
    nodes[-1].touch()
    nodes[500].taint()
    before = counts(g)
    assert nodes[-1].touch() == 500
    assert (counts(g) - before).sum() == 500


def test_eval_error_carries_node_name():
    g = Graph()
    v = Constant(g, [[1.0, 2.0], [2.0, 1.0]])
    ch = Cholesky(g, v, name="chol")
    with pytest.raises(EvalError) as info:
        ch.touch()
    assert info.value.node == "chol"


# -- taint / freeze ------------------------------------------------------------------


def test_taint_leaf_only_sets_itself():
    g = Graph()
    a = Constant(g, [1.0])
    a.touch()
    assert a.taint() == 1
    assert a.tainted


def test_taint_stops_at_frozen():
    g, (a, b, c) = chain(3)
    c.touch()
    g.freeze(b)
    a.taint()
    assert a.tainted and not b.tainted and not c.tainted


def test_taint_frozen_branch():
    g = Graph()
    a = Constant(g, [1.0], name="A")
    b = Identity(g, a, name="B")
    c = Identity(g, a, name="C")
    b.touch()
    c.touch()
    g.freeze(c)
    a.taint()
    assert a.tainted and b.tainted and not c.tainted


def test_freeze_uses_stale_value_and_unfreeze_resyncs():
    g, (a, b, c) = chain(3)
    c.touch()
    g.freeze(b)
    a.set([5.0, 6.0])
    c.touch()
    assert list(c.out.data) == [1.0, 2.0]
    g.unfreeze(b)
    assert b.tainted and c.tainted
    c.touch()
    assert list(c.out.data) == [5.0, 6.0]


def test_freeze_tainted_node_rejected():
    g, (a, b) = chain(2)
    with pytest.raises(FrozenWhileTainted):
        g.freeze(b)


# -- topological order ----------------------------------------------------------------


def test_topological_single():
    g = Graph()
    a = Constant(g, [1.0])
    assert g.topological_order() == [a]


def test_topological_small():
    g = Graph()
    a = Constant(g, [1.0], name="A")
    b = Identity(g, a, name="B")
    c = Sum(g, [a, b], name="C")
    assert g.topological_order() == [a, b, c]


def random_dag(rng, n, width=3):
    """Sums over random earlier nodes; sources are constants."""
    g = Graph()
    nodes = []
    for i in range(n):
        preds = rng.sample(nodes, k=min(len(nodes), rng.randint(0, 3)))
        if not preds:
            nodes.append(Constant(g, [float(i)] * width, name=f"c{i}"))
        else:
            nodes.append(Sum(g, preds, name=f"s{i}"))
    return g, nodes


def reachability(g):
    """Transitive closure by repeated boolean matrix squaring."""
    n = len(g.nodes)
    R = np.eye(n, dtype=bool)
    for node in g.nodes:
        for u in node.upstream():
            R[u.index, node.index] = True
    for _ in range(int(np.ceil(np.log2(max(n, 2)))) + 1):
        R = R | ((R.astype(np.int64) @ R.astype(np.int64)) > 0)
    return R


def test_random_dag_order_points_forward():
    rng = random.Random(7)
    g, nodes = random_dag(rng, 50)
    # shuffle insertion-independent check: all edges forward in the order
    pos = {n: i for i, n in enumerate(g.topological_order())}
    for n in nodes:
        for u in n.upstream():
            assert pos[u] < pos[n]


def test_topological_order_deterministic():
    rng = random.Random(3)
    g, _ = random_dag(rng, 40)
    assert g.topological_order() == g.topological_order()


# -- properties -----------------------------------------------------------------------------


def test_laziness_on_random_graphs():
    rng = random.Random(11)
    for _ in range(20):
        g, nodes = random_dag(rng, 30)
        sink = nodes[-1]
        sink.touch()
        before = counts(g)
        assert sink.touch() == 0
        assert np.array_equal(before, counts(g))


def test_taint_minimality_random():
    rng = random.Random(12345)
    for _ in range(120):
        g, nodes = random_dag(rng, rng.randint(5, 40))
        for n in nodes:
            n.touch()
        R = reachability(g)
        src = rng.choice(nodes)
        sink = rng.choice(nodes)
        src.taint()
        before = counts(g)
        sink.touch()
        executed = set(np.nonzero(counts(g) - before)[0])
        expected = set(np.nonzero(R[src.index, :] & R[:, sink.index])[0])
        assert executed == expected
        assert max(counts(g) - before) <= 1


def test_determinism_bit_identical():
    rng = random.Random(5)
    g, nodes = random_dag(rng, 30)
    sink = nodes[-1]
    sink.touch()
    first = sink.out.data.copy()
    for n in nodes:
        n.taintflag.tainted = True
    sink.touch()
    assert first.tobytes() == sink.out.data.tobytes()


def has_cycle(n, edges):
    """Independent DFS three-colour cycle check."""
    adj = {i: [] for i in range(n)}
    for u, v in edges:
        adj[u].append(v)
    colour = [0] * n

    def visit(u):
        colour[u] = 1
        for v in adj[u]:
            if colour[v] == 1 or (colour[v] == 0 and visit(v)):
                return True
        colour[u] = 2
        return False

    return any(colour[i] == 0 and visit(i) for i in range(n))


def test_acyclicity_under_random_binds():
    rng = random.Random(99)
    for _ in range(30):
        g = Graph()
        n = 12
        nodes = [Sum(g, n=4, name=f"s{i}") for i in range(n)]
        edges = []
        for _ in range(60):
            u, v = rng.randrange(n), rng.randrange(n)
            free = nodes[v].open_inputs()
            if not free:
                continue
            try:
                g.bind(nodes[u].out, free[0])
            except CycleError:
                assert has_cycle(n, edges + [(u, v)])
            else:
                edges.append((u, v))
                assert not has_cycle(n, edges)


def test_parallel_touch_matches_serial():
    rng = random.Random(21)
    g, nodes = random_dag(rng, 60)
    serial = [n.out() .copy() for n in nodes]
    for n in nodes:
        n.taintflag.tainted = True
    for n in reversed(nodes):
        g.touch(n, workers=4)
    for a, n in zip(serial, nodes):
        assert a.tobytes() == n.out.data.tobytes()
        assert not n.tainted


def test_restore_taint_state():
    g, nodes = chain(4)
    nodes[-1].touch()
    nodes[2].taint()
    state = g.taint_state()
    nodes[0].taint()
    g.restore_taint_state(state)
    assert g.taint_state() == state


# -- export ---------------------------------------------------------------------------------


def test_dump_one_line_per_node():
    g, nodes = chain(3)
    nodes[-1].touch()
    nodes[1].taint()
    lines = g.dump().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("src Constant [] -> [out:Points[2]] clean")
    assert lines[1] == "n1 Identity [in0<-src.out] -> [out:Points[2]] tainted"


def test_dot_export():
    g, nodes = chain(2)
    dot = g.to_dot()
    assert dot.startswith("digraph dagfit {")
    assert 'n0 -> n1 [label="out->in0"];' in dot


def test_duplicate_names_are_suffixed():
    g = Graph()
    a = Constant(g, [1.0], name="x")
    b = Constant(g, [1.0], name="x")
    assert a.name == "x" and b.name == "x#2"
