import json
import math

import pytest

from idvauction.core import Instance, ValuationOracle
from idvauction.valuations import build_instance, carl_daphne, make_oracle, sc_case1, sc_case2
from idvauction.verify import (
    MUTANTS,
    DeviationSpec,
    Transform,
    audit_queries,
    check_all,
    check_characterization,
    check_epic,
    check_ir,
    get_mechanism,
    measure_welfare,
    replay_epic_witness,
    retarget,
    value_sweep,
)

from conftest import random_instances


@pytest.fixture(params=["sos", "kdep"])
def mech(request):
    return get_mechanism(request.param)


def test_retarget_hits_value_exactly():
    for inst in random_instances("mixed", [3, 6], 5):
        for i in range(inst.n):
            for target in (0.1, 1 / 3, inst.value(i), 7.25):
                prof = inst.signals[:i] + (0.37,) + inst.signals[i + 1:]
                assert retarget(inst.oracles[i], prof, target)(prof) == target


def test_epic_holds_for_honest_mechanisms(mech):
    for inst in random_instances("mixed", [2, 3, 5], 3):
        rep = check_epic(inst, mech)
        assert rep.passed, rep.witness
        assert rep.checked >= inst.n * 11 * 6


def test_equal_value_deviation_is_identical(mech):
    for inst in random_instances("weighted_sum", [4], 3):
        for i in range(inst.n):
            truthful = mech.agent_outcome(inst, i)
            for signal in (0.0, 0.5, 1.0):
                dev = Transform("target", 1.0).apply(inst, i, signal)
                assert mech.agent_outcome(inst.replace_agent(i, dev, signal), i) == truthful


@pytest.mark.parametrize("name", MUTANTS)
def test_mutants_are_caught(name):
    mutant = get_mechanism(name)
    insts = random_instances("weighted_sum", [3, 4, 5], 3)
    reports = check_all(insts, mutant)
    assert not reports["epic"].passed
    witness = reports["epic"].witness
    # the witness survives JSON and replays bitwise
    witness = json.loads(json.dumps(witness))
    truthful, deviating = replay_epic_witness(witness, mutant)
    assert truthful == witness["truthful_utility"]
    assert deviating == witness["deviating_utility"]
    assert deviating > truthful + 1e-9


def test_ir_edge_cases(mech):
    zero = build_instance([("affine_own", {"a": 0.0, "b": 1.0}), ("affine_own", {"a": 1.0, "b": 1.0})], (0.0, 0.5))
    rep = check_ir(zero, mech)
    assert rep.passed
    x, p = mech.agent_outcome(zero, 0)
    assert zero.value(0) * x - p == 0.0
    solo = build_instance([("affine_own", {"a": 0.25, "b": 1.0})], (0.5,))
    x, p = mech.agent_outcome(solo, 0)
    assert solo.value(0) * x - p == solo.value(0)


def test_characterization_sc_pair(mech):
    for n in (3, 4, 6):
        one, two = sc_case1(n), sc_case2(n)
        assert two.value(0) < one.value(0)
        assert mech.agent_outcome(two, 0)[0] <= mech.agent_outcome(one, 0)[0]


def test_characterization_report(mech):
    for inst in random_instances("mixed", [2, 4, 7], 3):
        for i in range(inst.n):
            assert check_characterization(inst, mech, i).passed


def test_carl_daphne_sweep_monotone(mech):
    sweep = value_sweep(carl_daphne(100.0), mech, 1, points=41)
    xs = [x for _, x in sweep]
    assert xs == sorted(xs)
    assert xs[0] < xs[-1]


def test_scaled_value_preserving_report(mech):
    inst = carl_daphne(10.0)
    scaled = Transform("scale", 2.0).apply(inst, 1, 0.5)
    # a doubled valuation, reported with a signal and shift that keep v_D unchanged
    prof = (inst.signals[0], 0.5)
    fitted = retarget(scaled, prof, inst.value(1))
    assert mech.agent_outcome(inst.replace_agent(1, fitted, 0.5), 1) == mech.agent_outcome(inst, 1)


def test_welfare_records():
    kdep = get_mechanism("kdep")
    priv = build_instance([("affine_own", {"a": a, "b": 0.1}) for a in (0.2, 0.9, 0.5)], (0.1, 0.2, 0.3))
    w = measure_welfare(priv, kdep)
    assert w.ratio == 0.5 and w.bound == 0.5 and w.holds
    solo = build_instance([("affine_own", {})], (0.5,))
    for name in ("sos", "kdep"):
        assert measure_welfare(solo, get_mechanism(name)).ratio == 1.0


def test_query_audit():
    inst = random_instances("weighted_sum", [8], 1)[0]
    sos = audit_queries(inst, get_mechanism("sos"))
    assert sos.passed
    out = get_mechanism("sos").run(inst)
    assert max(out.ledger.counts(8)) <= 15
    out = get_mechanism("kdep").run(inst)
    assert max(out.ledger.counts(8)) <= 8
    solo = build_instance([("affine_own", {})], (0.5,))
    for name in ("sos", "kdep"):
        assert get_mechanism(name).run(solo).ledger.count(0) <= 1


def test_check_all_report_shape(mech):
    reports = check_all(random_instances("mixed", [2, 4], 2), mech, DeviationSpec(signal_grid=(0.0, 1.0)))
    assert set(reports) == {"feasibility", "epic", "ir", "characterization", "welfare", "queries"}
    assert all(r.passed for r in reports.values())
    assert json.dumps({k: r.to_dict() for k, r in reports.items()})


def test_unknown_mechanism():
    with pytest.raises(ValueError):
        get_mechanism("vcg")
    with pytest.raises(ValueError):
        Transform("rotate").apply(carl_daphne(), 0, 0.5)


def test_flat_fee_needs_ir_check():
    mech = get_mechanism("sos-flat-fee")
    insts = random_instances("weighted_sum", [3, 4], 2)
    reports = check_all(insts, mech)
    assert reports["epic"].passed
    assert not reports["ir"].passed
    assert reports["ir"].witness["utility"] < 0
