import math

import pytest

from idvauction.core import QueryLedger
from idvauction.kdep_mech import (
    KdepMechanism,
    allocate_kdep,
    build_dependency_graph,
    candidate_probability,
    candidates,
    payment_kdep,
    run,
    thresholds,
)
from idvauction.valuations import DEFAULT_EPS, build_instance, carl_daphne, kdep_lb1, make_oracle, sc_case2
from idvauction.core import Instance

from conftest import random_instances


def private(values):
    return build_instance([("affine_own", {"a": v, "b": 1e-3}) for v in values], (0.0,) * len(values))


def test_graph_kdep_lb1():
    g = build_dependency_graph(kdep_lb1(5, 2))
    assert g.out_degrees == [2, 2, 2, 0, 0]
    assert g.k == 2
    assert g.predecessors(0) == [1, 2]


def test_graph_private_values():
    g = build_dependency_graph(private([1.0, 2.0, 3.0]))
    assert g.k == 0 and all(not e for e in g.edges)


def test_graph_requires_declarations():
    o = make_oracle("weighted_sum", {"weights": [1.0, 1.0]}, 0, 2, deps=None)
    inst = Instance((o, make_oracle("affine_own", {}, 1, 2)), (0.5, 0.5))
    with pytest.raises(ValueError):
        build_dependency_graph(inst)


def test_audit_flags_declarations():
    over = make_oracle("weighted_sum", {"weights": [1.0, 0.0, 1.0]}, 0, 3, deps=[1, 2])
    under = make_oracle("weighted_sum", {"weights": [1.0, 1.0, 0.0]}, 1, 3, deps=[])
    inst = Instance((over, under, make_oracle("affine_own", {}, 2, 3)), (0.5, 0.5, 0.5))
    g = build_dependency_graph(inst, audit_samples=100, seed=1)
    assert g.over_declared == [(0, 1)]
    assert g.under_declared == [(1, 0)]
    assert build_dependency_graph(inst).under_declared == []


def test_thresholds():
    inst = private([1.0, 2.0, 3.0])
    assert thresholds(inst, 0) == {1: 2.0, 2: 3.0}
    cd = carl_daphne(100.0)
    assert thresholds(cd, 0) == {1: DEFAULT_EPS}
    assert thresholds(cd, 1) == {0: 2.0}
    # sc_case2: thresholds against agent 0 use its reported valuation at its reported signal
    sc = sc_case2(4)
    assert thresholds(sc, 2)[0] == 0.5


def test_thresholds_never_read_own_signal():
    inst = random_instances("kdep_mixed", [6], 1)[0]
    ledger = QueryLedger()
    thresholds(inst, 3, ledger)
    for j in range(6):
        assert all(p[3] == 0.0 for p in ledger.profiles(j))


def test_candidates():
    assert candidates(private([1.0, 3.0, 2.0])) == {1}
    twins = private([2.0, 2.0])
    assert twins.value(0) == twins.value(1)
    assert candidates(twins) == {0}


def test_top_agent_always_candidate_and_only_neighbors():
    for inst in random_instances("kdep_mixed", [3, 6, 10], 8):
        values = inst.values()
        top = values.index(max(values))
        cands = candidates(inst)
        assert top in cands
        g = build_dependency_graph(inst)
        assert cands <= {top} | g.edges[top]


def test_allocation_kdep_lb1():
    out = allocate_kdep(kdep_lb1(5, 2))
    assert out.x[0] >= 1 / 6
    assert out.x == pytest.approx([1 / 6, 1 / 6, 0, 0, 0])
    assert out.p == [0.0] * 5


def test_private_values_second_price():
    inst = private([1.0, 3.0, 2.0])
    out = run(inst)
    assert out.x == [0.0, 0.5, 0.0]
    assert out.p == [0.0, 1.0, 0.0]
    assert payment_kdep(inst, 1) == 0.5 * 2.0
    assert payment_kdep(inst, 0) == 0.0


def test_carl_daphne():
    out = KdepMechanism().run(carl_daphne(100.0))
    assert out.x == [0.25, 0.5]
    assert out.p[1] == 0.5 * 2.0
    assert out.diagnostics["candidates"] == [0, 1]


def test_candidate_probability_uses_predecessor_degrees():
    g = build_dependency_graph(kdep_lb1(5, 2))
    assert candidate_probability(g, 0) == 0.5 / 3
    assert candidate_probability(g, 4) == 0.5


def test_random_instances_invariants():
    mech = KdepMechanism()
    for inst in random_instances("kdep_mixed", [2, 5, 12], 10, k=3):
        out = mech.run(inst)
        values = inst.values()
        assert math.fsum(out.x) < 1
        assert math.fsum(x * v for x, v in zip(out.x, values)) >= max(values) / (2 * (out.diagnostics["k"] + 1)) * (1 - 1e-12)
        assert max(out.ledger.counts(inst.n)) <= inst.n
        for i in range(inst.n):
            assert out.x[i] * values[i] - out.p[i] >= 0.0


def test_tie_rule_sets_step_closure():
    twins = private([2.0, 2.0])
    mech = KdepMechanism()
    low = mech.step_function(twins, 0)
    high = mech.step_function(twins, 1)
    w = thresholds(twins, 0)[1]
    assert low(w) == 0.5 and high(w) == 0.0
    assert high(math.nextafter(w, math.inf)) == 0.5


def test_single_agent():
    out = run(build_instance([("affine_own", {})], (0.3,)))
    assert out.x == [1.0] and out.p == [0.0]
