import itertools

import numpy as np
import pytest

from idvauction.core import Instance
from idvauction.valuations import (
    DEFAULT_EPS,
    SOS_FAMILIES,
    InstanceTooLarge,
    alice_bob,
    alice_bob_deviation,
    carl_daphne,
    check_single_crossing,
    check_sos,
    fixture,
    grid_axis,
    kdep_lb1,
    kdep_lb2,
    make_oracle,
    natural_deps,
    sc_case1,
    sc_case2,
)


def naive_sos(oracle, n, g, d=1.0, tol=1e-12):
    """Direct all-pairs enumeration, written independently of the vectorized checker."""
    axis = grid_axis(g)
    scale = max(1.0, max(abs(oracle(p)) for p in itertools.product(axis, repeat=n)))
    for i in range(n):
        for a in range(g):
            for b in range(a + 1, g):
                for rest in itertools.product(range(g), repeat=n - 1):
                    for rest2 in itertools.product(range(g), repeat=n - 1):
                        if not all(x <= y for x, y in zip(rest, rest2)):
                            continue

                        def at(idx, k):
                            full = list(idx[:i]) + [k] + list(idx[i:])
                            return oracle(tuple(axis[t] for t in full))

                        low = at(rest, b) - at(rest, a)
                        high = at(rest2, b) - at(rest2, a)
                        if d * low < high - tol * scale:
                            return False
    return True


def test_linear_is_sos():
    assert check_sos(make_oracle("weighted_sum", {"weights": [2.0, 3.0]}, 0, 2), 2, 5).holds


def test_product_violates_sos_with_witness():
    oracle = make_oracle("product", {"eps": DEFAULT_EPS}, 0, 2)
    rep = check_sos(oracle, 2, 3)
    assert not rep.holds
    w = rep.witness
    assert w["coordinate"] == 0
    # the rival's signal is raised from 0 to 1
    assert w["profile_low"][1] == 0.0 and w["profile_high"][1] == 1.0
    # replaying the witness reproduces the violation exactly
    i, s, delta = w["coordinate"], w["s_i"], w["delta"]
    lo, hi = list(w["profile_low"]), list(w["profile_high"])
    up = lambda p: tuple(p[:i] + [s + delta] + p[i + 1:])
    assert oracle(up(lo)) - oracle(tuple(lo)) == w["marginal_low"]
    assert oracle(up(hi)) - oracle(tuple(hi)) == w["marginal_high"]
    assert w["marginal_low"] < w["marginal_high"]


def test_max_of_signals_is_sos():
    assert check_sos(make_oracle("max_of_signals", {}, 0, 2), 2, 5).holds


@pytest.mark.parametrize("family", sorted(SOS_FAMILIES))
@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("g", [3, 5])
def test_sos_families_pass(family, n, g):
    params = {"weights": [0.3 + 0.2 * j for j in range(n)]} if family in ("weighted_sum", "concave_of_sum") else {}
    for i in range(n):
        assert check_sos(make_oracle(family, params, i, n), n, g).holds


def test_quadratic_is_d_sos_not_sos():
    w = [0.5, 1.0, 0.8]
    beta = 1.0 / (2 * sum(w))  # d = 2
    oracle = make_oracle("quadratic_of_sum", {"weights": w, "beta": beta}, 0, 3)
    assert not check_sos(oracle, 3, 5).holds
    assert check_sos(oracle, 3, 5, d=2.0).holds


def test_check_guard():
    with pytest.raises(InstanceTooLarge):
        check_sos(make_oracle("mineral_rights_average", {}, 0, 21), 21, 2)
    with pytest.raises(ValueError):
        check_sos(make_oracle("mineral_rights_average", {}, 0, 2), 2, 1)


def test_naive_checker_agrees_on_random_tables():
    rng = np.random.default_rng(2024)
    verdicts = []
    for _ in range(50):
        g = int(rng.integers(3, 5))
        if rng.random() < 0.5:
            # concave of a positive linear form: SOS on the grid
            ax = np.linspace(0.0, 1.0, g)
            w = rng.uniform(0.1, 1.0, 2)
            table = np.sqrt(w[0] * ax[:, None] + w[1] * ax[None, :] + 0.01)
        else:
            # monotone table: cumulative sums of non-negative increments
            inc = rng.uniform(0.0, 1.0, (g, g))
            table = np.cumsum(np.cumsum(inc, axis=0), axis=1)
        oracle = make_oracle("custom_table", {"grid_points": g, "values": table.ravel().tolist()}, 0, 2)
        fast = check_sos(oracle, 2, g).holds
        assert fast == naive_sos(oracle, 2, g)
        verdicts.append(fast)
    # the sample should exercise both outcomes
    assert 0 < sum(verdicts) < 50


def test_custom_table_interpolates():
    oracle = make_oracle("custom_table", {"grid_points": 2, "values": [0.0, 1.0, 2.0, 3.0]}, 0, 2)
    assert oracle((0.5, 0.5)) == pytest.approx(1.5)
    assert oracle((1.0, 1.0)) == 3.0
    with pytest.raises(ValueError):
        make_oracle("custom_table", {"grid_points": 2, "values": [0.0, 1.0, 2.0]}, 0, 2)


def test_alice_bob_single_crossing():
    assert check_single_crossing(alice_bob().oracles, 5).holds


def test_single_crossing_violation():
    v1 = make_oracle("weighted_sum", {"weights": [2.0, 0.0]}, 0, 2)
    v2 = make_oracle("weighted_sum", {"weights": [3.0, 1.0]}, 1, 2)
    rep = check_single_crossing([v1, v2], 3)
    assert not rep.holds
    assert (rep.witness["i"], rep.witness["j"]) == (0, 1)
    assert rep.witness["marginal_i"] < rep.witness["marginal_j"]


def test_single_agent_single_crossing_vacuous():
    assert check_single_crossing([make_oracle("affine_own", {}, 0, 1)], 3).holds


def test_alice_bob_fixture():
    inst = alice_bob()
    assert inst.n == 2 and inst.signals == (1.0, 1.0)
    assert inst.values() == [1.0 + DEFAULT_EPS] * 2
    dev = alice_bob_deviation()
    assert dev.signals == (1.0, 0.0)
    assert dev.value(1) == 0.5


def test_carl_daphne_fixture():
    inst = carl_daphne(100.0)
    assert inst.values() == [2.0, 100.0 + DEFAULT_EPS]
    assert carl_daphne(100.0, s_c=0.0).values() == [1.0, DEFAULT_EPS]


def test_sc_fixtures():
    one, two = sc_case1(4), sc_case2(4)
    assert one.signals == (1.0,) * 4
    assert two.signals == (0.0, 1.0, 1.0, 1.0)
    assert two.value(0) == 0.5
    assert two.oracles[1:] == one.oracles[1:]


def test_kdep_fixtures():
    inst = kdep_lb1(5, 2)
    assert [len(o.deps) for o in inst.oracles] == [2, 2, 2, 0, 0]
    assert inst.signals[0] == 0.0
    assert inst.value(0) == 1.0 and inst.value(1) == DEFAULT_EPS
    inst2 = kdep_lb2(5, 2, case=2)
    assert inst2.value(0) == 0.5
    with pytest.raises(ValueError):
        kdep_lb1(3, 3)


def test_unknown_fixture():
    with pytest.raises(ValueError):
        fixture("nope")


def test_natural_deps():
    assert natural_deps("weighted_sum", {"weights": [1.0, 0.0, 2.0]}, 0, 3) == {2}
    assert natural_deps("affine_own", {}, 0, 3) == frozenset()
    assert natural_deps("product", {"members": [0, 1]}, 0, 3) == {1}
    base = {"family": "weighted_sum", "params": {"weights": [1.0, 1.0]}}
    assert natural_deps("transformed", {"base": base}, 0, 2) == {1}
    assert make_oracle("weighted_sum", {"weights": [1.0, 1.0]}, 0, 2, deps=None).deps is None


@pytest.mark.parametrize("bad", [{"weights": [0.0, 1.0]}, {"weights": [1.0, -1.0]}])
def test_weighted_sum_validation(bad):
    with pytest.raises(ValueError):
        make_oracle("weighted_sum", bad, 0, 2)


def test_transformed():
    base = {"family": "weighted_sum", "params": {"weights": [1.0, 1.0]}}
    oracle = make_oracle("transformed", {"base": base, "scale": 2.0, "shift": 0.5}, 0, 2)
    assert oracle((0.25, 0.25)) == 1.5
    with pytest.raises(ValueError):
        make_oracle("transformed", {"base": base, "scale": 0.0}, 0, 2)
