import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import distributions, pandora_instances
from fairsearch.instances import example_fs
from fairsearch.pandora import (INF, OUTSIDE, Box, CapExceededError, PandoraInstance, Realization, TieBreakRule,
                                ValueDistribution, brute_force_optimal_value, evaluate_mc, expected_outcome_exact,
                                expected_outcome_mc, realization_from_atoms, reservation_index, run_refined_policy,
                                sample_atoms)
from oracles import pandora_dp_value, reservation_by_bisection

D = ValueDistribution


def single(dist, cost, k=1):
    return PandoraInstance((Box(1, dist, cost),), k)


# reservation index

@pytest.mark.parametrize("dist,cost,want", [
    (D((4, 10), (.5, .5)), 1.0, 8.0),
    (D((3, 9), (.5, .5)), 1.0, 7.0),
    (D((2, 8), (.5, .5)), 1.0, 6.0),
    (D((1, 7), (.5, .5)), 1.0, 5.0),
    (D((6,), (1,)), 2.0, 4.0),
    (D((3, 9), (.2, .8)), 4.0, 4.0),
])
def test_reservation_examples(dist, cost, want):
    assert reservation_index(dist, cost) == pytest.approx(want, abs=1e-12)


def test_reservation_negative_cost_is_infinite():
    assert reservation_index(D((1, 2), (.5, .5)), -0.5) == INF


def test_reservation_zero_cost_is_max_support():
    assert reservation_index(D((1, 2, 7), (.2, .3, .5)), 0.0) == 7.0


def test_reservation_below_support():
    # cost exceeds E[(v - min)^+]; the index falls under the support
    s = reservation_index(D((2, 4), (.5, .5)), 5.0)
    assert s < 2
    assert 0.5 * (2 - s) + 0.5 * (4 - s) == pytest.approx(5.0)


def test_reservation_grid_scan():
    d = D((3, 9), (.2, .8))
    grid = np.linspace(0, 9, 90001)
    excess = np.array([0.8 * max(9 - s, 0) + 0.2 * max(3 - s, 0) for s in grid])
    assert grid[np.argmin(np.abs(excess - 4.0))] == pytest.approx(reservation_index(d, 4.0), abs=1e-3)


@given(distributions(max_atoms=4), st.floats(0.01, 20))
def test_reservation_defining_equation(dist, cost):
    s = reservation_index(dist, cost)
    excess = sum(p * max(v - s, 0.0) for v, p in zip(dist.support, dist.probs))
    assert excess == pytest.approx(cost, abs=1e-10)
    assert s == pytest.approx(reservation_by_bisection(dist.support, dist.probs, cost), abs=1e-7)


@given(distributions(max_atoms=4), st.lists(st.floats(0, 20), min_size=2, max_size=6))
def test_reservation_nonincreasing_in_cost(dist, costs):
    costs = sorted(costs)
    idx = [reservation_index(dist, c) for c in costs]
    assert all(a >= b - 1e-12 for a, b in zip(idx, idx[1:]))


# refined policy

def test_example_fs_all_high_trace():
    inst = example_fs()
    real = Realization({1: 10.0, 2: 9.0, 3: 8.0, 4: 7.0})
    out = run_refined_policy(inst, TieBreakRule.lexicographic(), real)
    assert out.inspected == {1}
    assert out.selected == {1}
    assert out.net_utility == 9.0


def test_zero_cost_box_is_selected():
    out = run_refined_policy(single(D((5,), (1,)), 0.0), TieBreakRule(), Realization({1: 5.0}))
    assert out.inspected == {1} and out.selected == {1} and out.net_utility == 5.0


def test_negative_box_is_skipped():
    out = run_refined_policy(single(D((-2,), (1,)), 1.0), TieBreakRule(), Realization({1: -2.0}))
    assert out.inspected == frozenset() and out.selected == frozenset() and out.net_utility == 0.0


def test_realization_must_cover_boxes():
    with pytest.raises(ValueError):
        run_refined_policy(example_fs(), TieBreakRule(), Realization({1: 10.0}))


def test_explicit_scores_must_cover_boxes():
    with pytest.raises(ValueError):
        expected_outcome_exact(example_fs(), TieBreakRule.explicit({1: 1.0, OUTSIDE: 0.0}))


# exact evaluation

def test_example_fs_exact():
    out = expected_outcome_exact(example_fs())
    assert out.utility == pytest.approx(7.0625, abs=1e-12)
    assert out.selection[3] + out.selection[4] == pytest.approx(0.1875, abs=1e-12)


def test_example_fs_value_any_tie():
    for order in [(1, 2, 3, 4), (4, 3, 2, 1), (2, 4, 1, 3)]:
        rule = TieBreakRule.explicit({b: -order.index(b) for b in order})
        assert expected_outcome_exact(example_fs(), rule).utility == pytest.approx(7.0625, abs=1e-12)


def test_deterministic_box_exact():
    out = expected_outcome_exact(single(D((5,), (1,)), 1.0))
    assert out.selection[1] == 1.0 and out.inspection[1] == 1.0 and out.utility == 4.0


def test_cap_error_names_size():
    with pytest.raises(CapExceededError, match="16"):
        expected_outcome_exact(example_fs(), cap=10)


# brute force

def test_brute_force_examples():
    assert brute_force_optimal_value(example_fs()) == pytest.approx(7.0625, abs=1e-12)
    assert brute_force_optimal_value(single(D((5,), (1,)), 1.0)) == 4.0
    assert brute_force_optimal_value(single(D((0, 10), (.5, .5)), 6.0)) == 0.0


@settings(max_examples=120)
@given(pandora_instances())
def test_index_policy_is_optimal(inst):
    v = expected_outcome_exact(inst).utility
    assert v == pytest.approx(brute_force_optimal_value(inst), abs=1e-10)
    assert v == pytest.approx(pandora_dp_value(inst), abs=1e-10)


# Monte Carlo

def test_mc_close_to_exact():
    out = expected_outcome_mc(example_fs(), None, 200_000, 42)
    assert abs(out.utility - 7.0625) <= 3 * out.stderr


def test_mc_deterministic():
    a = expected_outcome_mc(example_fs(), None, 500, 7)
    b = expected_outcome_mc(example_fs(), None, 500, 7)
    assert a == b


def test_mc_single_trial_matches_run():
    inst = example_fs()
    model = inst.model()
    atoms = sample_atoms(model, 1, 3)
    ev = evaluate_mc(model, TieBreakRule(), 1, 3)
    out = run_refined_policy(inst, TieBreakRule(), realization_from_atoms(model, atoms[0]))
    assert ev.utility(model)[0] == pytest.approx(out.net_utility)


@settings(max_examples=15)
@given(pandora_instances(max_boxes=3), st.integers(0, 10_000))
def test_mc_consistency(inst, seed):
    model = inst.model()
    exact = expected_outcome_exact(inst)
    ev = evaluate_mc(model, TieBreakRule(), 100_000, seed)
    u, se = ev.utility(model)
    assert abs(u - exact.utility) <= 4 * se + 1e-9


@settings(max_examples=40)
@given(pandora_instances(), st.integers(0, 1000))
def test_outcome_sanity(inst, seed):
    model = inst.model()
    rng = np.random.default_rng(seed)
    for _ in range(5):
        atoms = [int(rng.integers(len(v))) for v in model.values]
        out = run_refined_policy(inst, TieBreakRule(), realization_from_atoms(model, atoms))
        assert out.selected <= out.inspected
        assert len(out.selected) <= inst.capacity


def test_distribution_validation():
    with pytest.raises(ValueError):
        D((1, 2), (.5, .6))
    with pytest.raises(ValueError):
        D((2, 1), (.5, .5))
    assert math.isclose(D((1, 3), (.5, .5)).mean, 2.0)
