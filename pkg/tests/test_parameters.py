import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagfit.errors import (
    BadBounds,
    DuplicateName,
    FixedParameter,
    NegativeSigma,
    NotPSD,
    OutOfBounds,
    UnknownMember,
    UnknownName,
)
from dagfit.linalg import cholesky
from dagfit.parameters import ParameterGroup, ParameterRegistry, ParameterSnapshot, group_covariance
from dagfit.transforms import Identity, WeightedSum


@pytest.fixture
def reg():
    return ParameterRegistry()


def test_define_sets_value_to_central(reg):
    p = reg.define("osc.sin2theta", 0.85, 0.03)
    assert p.value == 0.85
    assert reg["osc.sin2theta"] is p


def test_define_duplicate(reg):
    reg.define("a", 1.0, 0.1)
    with pytest.raises(DuplicateName):
        reg.define("a", 2.0, 0.1)


def test_define_negative_sigma(reg):
    with pytest.raises(NegativeSigma):
        reg.define("a", 1.0, -0.1)


@pytest.mark.parametrize("bounds", [(1.0, 1.0), (2.0, 1.0), (2.0, 3.0)])
def test_define_bad_bounds(reg, bounds):
    with pytest.raises(BadBounds):
        reg.define("a", 1.0, 0.1, bounds=bounds)


def test_unknown_lookup(reg):
    with pytest.raises(UnknownName, match="nope"):
        reg["nope"]


def test_zero_sigma_is_fixed_and_not_free(reg):
    reg.define("a", 1.0, 0.0)
    b = reg.define("b", 1.0, 0.5, constrained=True)
    assert reg["a"].fixed
    assert reg.free() == [b]
    assert reg.constrained() == [b]


# -- set_value -----------------------------------------------------------------


def watched(reg):
    p = reg.define("p", 1.0, 0.1, bounds=(0.0, 2.0))
    w = WeightedSum(reg.graph, [p.output], [2.0])
    sink = Identity(reg.graph, w)
    sink.touch()
    return p, w, sink


def test_set_identical_value_taints_nothing(reg):
    p, w, sink = watched(reg)
    assert not reg.set_value(p, 1.0)
    assert not any(n.tainted for n in reg.graph)


def test_set_new_value_taints_users(reg):
    p, w, sink = watched(reg)
    assert reg.set_value("p", 1.5)
    assert p.node.tainted and w.tainted and sink.tainted
    assert sink.out()[0] == 3.0


def test_set_out_of_bounds_keeps_value(reg):
    p, _, sink = watched(reg)
    with pytest.raises(OutOfBounds):
        p.set(2.5)
    assert p.value == 1.0
    assert not sink.tainted


def test_set_normalized(reg):
    p = reg.define("p", 10.0, 2.0)
    reg.set_normalized(p, 1.0)
    assert p.value == 12.0
    p.set_normalized(0.0)
    assert p.value == p.central
    assert p.normalized == 0.0
    q = reg.define("q", 1.0, 0.0)
    with pytest.raises(FixedParameter):
        q.set_normalized(1.0)


# -- group_covariance ----------------------------------------------------------------


def test_group_covariance_identity(reg):
    reg.define("a", 0, 2)
    reg.define("b", 0, 3)
    C = group_covariance(reg, ParameterGroup(["a", "b"], np.eye(2)))
    assert np.array_equal(C, np.diag([4.0, 9.0]))


def test_group_covariance_offdiag(reg):
    reg.define("a", 0, 1)
    reg.define("b", 0, 1)
    C = group_covariance(reg, ParameterGroup(["a", "b"], [[1, 0.5], [0.5, 1]]))
    assert np.array_equal(C, [[1, 0.5], [0.5, 1]])


def test_group_covariance_out_of_range(reg):
    reg.define("a", 0, 1)
    reg.define("b", 0, 1)
    with pytest.raises(NotPSD):
        reg.correlate(["a", "b"], [[1, 1.2], [1.2, 1]])


def test_group_covariance_not_psd_in_range(reg):
    for n in "abc":
        reg.define(n, 0, 1)
    corr = [[1, 0.9, -0.9], [0.9, 1, 0.9], [-0.9, 0.9, 1]]
    assert np.linalg.eigvalsh(corr).min() < 0
    with pytest.raises(NotPSD):
        reg.correlate(list("abc"), corr)


def test_group_covariance_unknown_member(reg):
    reg.define("a", 0, 1)
    with pytest.raises(UnknownMember):
        reg.correlate(["a", "zz"], np.eye(2))


def test_full_correlation_is_accepted(reg):
    reg.define("a", 0, 1)
    reg.define("b", 0, 2)
    g = reg.correlate(["a", "b"], [[1, 1], [1, 1]])
    assert np.array_equal(group_covariance(reg, g), [[1, 2], [2, 4]])


@st.composite
def correlations(draw):
    n = draw(st.integers(1, 6))
    A = np.array(draw(st.lists(st.floats(-1, 1), min_size=n * n, max_size=n * n))).reshape(n, n)
    S = A @ A.T + 1e-3 * np.eye(n)
    d = np.sqrt(np.diag(S))
    corr = S / np.outer(d, d)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    sig = draw(st.lists(st.floats(0.01, 100), min_size=n, max_size=n))
    return corr, sig


@settings(max_examples=80, deadline=None)
@given(correlations())
def test_group_covariance_symmetric_psd(case):
    corr, sig = case
    reg = ParameterRegistry()
    names = [f"g.p{i}" for i in range(len(sig))]
    for n, s in zip(names, sig):
        reg.define(n, 0.0, s)
    C = group_covariance(reg, reg.correlate(names, corr))
    assert np.array_equal(C, C.T)
    L = cholesky(C, semidefinite=True)
    assert np.allclose(L @ L.T, C, rtol=1e-10, atol=1e-12 * np.abs(C).max())


def test_registry_covariance_blocks(reg):
    reg.define("a", 0, 1)
    reg.define("b", 0, 2)
    reg.define("c", 0, 3)
    reg.correlate(["a", "c"], [[1, -0.5], [-0.5, 1]])
    C = reg.covariance(["a", "b", "c"])
    assert np.array_equal(C, [[1, 0, -1.5], [0, 4, 0], [-1.5, 0, 9]])


# -- snapshots -------------------------------------------------------------------------


def test_restore_unchanged_is_noop(reg):
    p, _, sink = watched(reg)
    snap = reg.snapshot()
    assert reg.restore(snap) == 0
    assert not sink.tainted


def test_restore_after_change_taints_twice(reg):
    p, w, sink = watched(reg)
    snap = reg.snapshot()
    p.set(0.5)
    assert reg.restore(snap) == 1
    assert p.value == 1.0
    assert p.ntaints == 2
    sink.touch()
    assert sink.out()[0] == 2.0


def test_restore_foreign_snapshot(reg):
    reg.define("a", 1, 1)
    with pytest.raises(UnknownName):
        reg.restore(ParameterSnapshot({"a": 2.0, "ghost": 1.0}))
    assert reg["a"].value == 1.0


def test_namespaced_lookup_roundtrip():
    reg = ParameterRegistry()
    names = [f"ns{i % 97}.sub{i // 97}.p{i}" for i in range(10_000)]
    for i, n in enumerate(names):
        reg.define(n, float(i), 1.0)
    for i, n in enumerate(names):
        assert reg[n].value == float(i)
    assert len(reg.namespace("ns3")) == sum(n.startswith("ns3.") for n in names)


def test_table_lists_every_parameter(reg):
    reg.define("a", 1.0, 0.0)
    reg.define("b", 2.0, 0.5, bounds=(0, 5), constrained=True)
    lines = reg.table().splitlines()
    assert lines[0].split() == ["name", "value", "central", "sigma", "flags"]
    assert lines[1].split() == ["a", "1.0", "1.0", "0.0", "fixed"]
    assert lines[2].split() == ["b", "2.0", "2.0", "0.5", "constrained,bounds=[0.0,5.0]"]


def test_set_value_matches_rebuild():
    """Incremental evaluation equals a fresh graph built at the new values."""
    rng = random.Random(4)

    def build(values):
        reg = ParameterRegistry()
        ps = [reg.define(f"p{i}", v, 1.0) for i, v in enumerate(values)]
        base = WeightedSum(reg.graph, [ps[0].output] * 3, [ps[1].output, ps[2].output, 0.5])
        top = WeightedSum(reg.graph, [base, ps[0].output], [ps[2].output, 2.0])
        return reg, top

    for _ in range(50):
        start = [rng.uniform(-2, 2) for _ in range(3)]
        reg, top = build(start)
        top.touch()
        new = list(start)
        for _ in range(rng.randint(1, 5)):
            k = rng.randrange(3)
            new[k] = rng.uniform(-2, 2)
            reg.set_value(f"p{k}", new[k])
        _, fresh = build(new)
        assert top.out().tobytes() == fresh.out().tobytes()
