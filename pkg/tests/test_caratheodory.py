import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import pandora_instances
from fairsearch.caratheodory import (CoverageError, Ellipsoid, SlackVertexOracle, convex_weights, eec,
                                     ellipsoid_halfspace_update, ext_lin_oracle, lin_oracle, minimize_dual_multi,
                                     solve_multi_affine)
from fairsearch.constrained import (budget, check_feasibility, parity_inspection, parity_selection, quota,
                                    slack_value, solve_rdip)
from fairsearch.instances import counterexample, counterexample_constraints, example_fs
from fairsearch.pandora import TieBreakRule, evaluate_exact
from oracles import pandora_lp_optimum, tie_orders

TABLE = {
    (1, 2, 3): (1.0, 1.0),
    (2, 1, 3): (1.9, 1.0),
    (3, 1, 2): (-1.8, -1.4),
    (3, 2, 1): (-1.62, -1.4),
    (1, 3, 2): (1.0, 1.0),
    (2, 3, 1): (-0.62, -1.16),
}


@pytest.fixture(scope="module")
def enumerated_slacks():
    """Slack pairs of every tie order of the counterexample (all indices tie at 4)."""
    inst = counterexample()
    model = inst.model()
    cons = counterexample_constraints()
    pts = set()
    for rule in tie_orders(model):
        ev = evaluate_exact(model, rule)
        pts.add(tuple(round(slack_value(ev, model, c)[0], 12) for c in cons))
    return np.array(sorted(pts))


class PointOracle:
    """Lexicographic linear optimization over a fixed finite point set."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        self.calls = 0

    @property
    def m(self):
        return self.points.shape[1]

    def query(self, omegas):
        from fairsearch.caratheodory import VertexHandle

        self.calls += 1
        cand = self.points
        for w in omegas:
            vals = cand @ np.asarray(w)
            cand = cand[vals >= vals.max() - 1e-12]
        return VertexHandle(cand[0].copy())


# counterexample

@pytest.mark.parametrize("order,want", TABLE.items())
def test_counterexample_table(order, want):
    inst = counterexample()
    model = inst.model()
    ev = evaluate_exact(model, TieBreakRule.explicit({b: -order.index(b) for b in order}))
    got = [slack_value(ev, model, c)[0] for c in counterexample_constraints()]
    assert got == pytest.approx(list(want), abs=1e-9)


def test_counterexample_indices_tie():
    assert list(counterexample().model().sigma) == pytest.approx([4.0, 4.0, 4.0], abs=1e-12)


def test_counterexample_lambda_star_zero():
    res = minimize_dual_multi(counterexample(), counterexample_constraints())
    assert np.allclose(res.lambda_star, 0.0, atol=1e-9)


def test_pair_alone_fails_eec_succeeds():
    with pytest.raises(CoverageError):
        convex_weights([TABLE[(2, 1, 3)], TABLE[(3, 1, 2)]])
    policy, res = solve_multi_affine(counterexample(), counterexample_constraints())
    w = convex_weights([p.slacks for p in res.points])
    assert np.abs(np.array([p.slacks for p in res.points]).T @ w).max() <= 1e-9
    for c in counterexample_constraints():
        assert policy.slack(c)[0] == pytest.approx(0.0, abs=1e-10)
    assert policy.utility()[0] == pytest.approx(pandora_lp_optimum(counterexample(), counterexample_constraints()),
                                                abs=1e-9)


@settings(max_examples=40)
@given(arrays(float, 2, elements=st.floats(-1, 1)))
def test_lin_oracle_maximizes(enumerated_slacks, omega):
    assume(np.linalg.norm(omega) > 1e-3)
    oracle = SlackVertexOracle(counterexample(), counterexample_constraints(), [0.0, 0.0])
    v = lin_oracle(oracle, omega)
    assert omega @ v.slacks == pytest.approx(np.max(enumerated_slacks @ omega), abs=1e-9)
    assert v.slacks.tolist() in np.round(enumerated_slacks, 9).tolist() or \
        np.min(np.abs(enumerated_slacks - v.slacks).max(axis=1)) <= 1e-9


def test_ext_oracle_breaks_ties_within_face(enumerated_slacks):
    oracle = SlackVertexOracle(counterexample(), counterexample_constraints(), [0.0, 0.0])
    face = enumerated_slacks[enumerated_slacks[:, 1] >= enumerated_slacks[:, 1].max() - 1e-12]
    for sign in (1.0, -1.0):
        v = ext_lin_oracle(oracle, [[0.0, 1.0], [sign, 0.0]])
        assert v.slacks[1] == pytest.approx(face[:, 1].max(), abs=1e-12)
        assert sign * v.slacks[0] == pytest.approx((sign * face[:, 0]).max(), abs=1e-9)


# ellipsoid

def test_disk_half_cut():
    cut = ellipsoid_halfspace_update(Ellipsoid.ball(np.eye(2)), [1.0, 0.0])
    E = cut.ellipsoid
    assert E.center == pytest.approx([-1 / 3, 0.0])
    assert sorted(E.semi_axes()) == pytest.approx([2 / 3, 2 / math.sqrt(3)])
    assert not cut.contained
    assert cut.volume_ratio == pytest.approx((2 / 3) * (2 / math.sqrt(3)))


def test_interval_half_cut():
    E = ellipsoid_halfspace_update(Ellipsoid.ball(np.eye(1)), [-1.0]).ellipsoid
    assert E.center == pytest.approx([0.5]) and E.semi_axes() == pytest.approx([0.5])


def test_flat_cut_reports_contained():
    basis = np.eye(3)[:, :2]
    cut = ellipsoid_halfspace_update(Ellipsoid.ball(basis), [0.0, 0.0, 1.0])
    assert cut.contained and cut.volume_ratio == 1.0


@settings(max_examples=100)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_cut_volume_ratio_bound(dim, seed):
    rng = np.random.default_rng(seed)
    E = Ellipsoid.ball(np.eye(dim))
    for _ in range(6):
        cut = ellipsoid_halfspace_update(E, rng.normal(size=dim))
        assert cut.volume_ratio <= math.exp(-1 / (2 * (dim + 1))) + 1e-12
        E = cut.ellipsoid


@settings(max_examples=60)
@given(st.integers(1, 4), st.integers(0, 10_000))
def test_cut_keeps_halfspace(dim, seed):
    rng = np.random.default_rng(seed)
    E = Ellipsoid.ball(np.eye(dim))
    for _ in range(3):
        a = rng.normal(size=dim)
        new = ellipsoid_halfspace_update(E, a).ellipsoid
        L = np.linalg.cholesky(E.shape)
        for _ in range(30):
            y = rng.normal(size=dim)
            x = E.center + L @ (y / np.linalg.norm(y)) * rng.uniform() ** (1 / dim)
            if a @ (x - E.center) <= 0:
                assert new.contains(x, 1e-7)
        E = new


# EEC on explicit polytopes

@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_eec_cross_polytope(m):
    pts = np.vstack([np.eye(m), -np.eye(m)]) + 0.0
    res = eec(PointOracle(pts))
    P = np.array([p.slacks for p in res.points])
    assert len(P) <= 10 * m
    w = convex_weights(P)
    assert np.abs(P.T @ w).max() <= 1e-9


def test_eec_origin_on_boundary():
    # 0 sits on the edge between (1, 0) and (-1, 0)
    res = eec(PointOracle([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]))
    P = np.array([p.slacks for p in res.points])
    assert np.abs(P.T @ convex_weights(P)).max() <= 1e-9
    assert len(res.omegas) >= 1


def test_eec_vertex_at_origin():
    res = eec(PointOracle([[0.0, 0.0], [1.0, 1.0]]))
    assert np.allclose(res.points[0].slacks, 0.0)


def test_eec_uncovered_is_rejected_by_weights():
    res = eec(PointOracle([[1.0, 1.0], [2.0, 0.5]]))
    with pytest.raises(CoverageError):
        convex_weights([p.slacks for p in res.points])


@settings(max_examples=40)
@given(st.integers(1, 4), st.integers(0, 10_000))
def test_eec_random_polytopes(m, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(4 * m + 2, m))
    pts -= pts.mean(axis=0)  # centroid at 0, so 0 is covered
    res = eec(PointOracle(pts))
    P = np.array([p.slacks for p in res.points])
    assert len(P) <= 10 * m
    assert np.abs(P.T @ convex_weights(P)).max() <= 1e-9
    assert all(r <= math.exp(-1 / (2 * (m + 1))) + 1e-12 for r in res.volume_ratios)


# weights

def test_convex_weights_examples():
    assert convex_weights([[1.0], [-1.0]]) == pytest.approx([0.5, 0.5])
    assert convex_weights([[2.0], [-1.0]]) == pytest.approx([1 / 3, 2 / 3])
    assert convex_weights([[0.0, 0.0]]) == pytest.approx([1.0])
    with pytest.raises(CoverageError):
        convex_weights([[1.0, 1.0], [2.0, 0.5]])
    with pytest.raises(CoverageError):
        convex_weights(np.zeros((0, 2)))


# end to end

@settings(max_examples=40)
@given(pandora_instances(max_boxes=4, groups=True), st.sampled_from(["selection", "inspection"]))
def test_single_constraint_matches_rdip(inst, stage):
    xs = [b.id for b in inst.boxes if b.group == "X"]
    ys = [b.id for b in inst.boxes if b.group == "Y"]
    con = parity_selection(xs, ys) if stage == "selection" else parity_inspection(xs, ys)
    assume(check_feasibility(inst, con))
    rdip = solve_rdip(inst, con)
    multi, _ = solve_multi_affine(inst, [con])
    assert multi.utility()[0] == pytest.approx(rdip.utility()[0], abs=1e-8)
    assert multi.slack(con)[0] == pytest.approx(rdip.slack(con)[0], abs=1e-8)
    assert multi.slack(con)[0] == pytest.approx(0.0, abs=1e-8)


def test_example_fs_two_parities():
    inst = example_fs()
    cons = [parity_selection((1, 2), (3, 4)), parity_inspection((1, 2), (3, 4))]
    policy, res = solve_multi_affine(inst, cons)
    for c in cons:
        assert policy.slack(c)[0] == pytest.approx(0.0, abs=1e-9)
    assert policy.utility()[0] == pytest.approx(pandora_lp_optimum(inst, cons), abs=1e-8)
    assert len(res.points) <= 20


def test_leq_constraints_use_dummies():
    inst = example_fs()
    cons = [parity_selection((1, 2), (3, 4)), budget({1: .25, 2: .25, 3: .25, 4: .25}, 1.0)]
    policy, res = solve_multi_affine(inst, cons)
    assert res.lambda_star[1] == pytest.approx(0.0, abs=1e-9)
    assert policy.slack(cons[0])[0] == pytest.approx(0.0, abs=1e-9)
    assert policy.slack(cons[1])[0] >= -1e-9
    assert policy.utility()[0] == pytest.approx(6.5625, abs=1e-8)


def test_binding_quota_and_budget():
    inst = example_fs()
    cons = [quota((1, 2), (3, 4), 0.5), budget({1: .25, 2: .25, 3: .25, 4: .25}, 0.375)]
    policy, _ = solve_multi_affine(inst, cons)
    for c in cons:
        assert policy.slack(c)[0] >= -1e-9
    assert policy.utility()[0] == pytest.approx(pandora_lp_optimum(inst, cons), abs=1e-8)


@settings(max_examples=25)
@given(pandora_instances(max_boxes=3, groups=True), st.floats(0.1, 1.0))
def test_multi_matches_lp(inst, bound):
    xs = [b.id for b in inst.boxes if b.group == "X"]
    ys = [b.id for b in inst.boxes if b.group == "Y"]
    cons = [parity_selection(xs, ys), budget({b.id: 1 / inst.n for b in inst.boxes}, bound)]
    assume(check_feasibility(inst, cons[0]))
    policy, res = solve_multi_affine(inst, cons)
    assert policy.slack(cons[0])[0] == pytest.approx(0.0, abs=1e-8)
    assert policy.slack(cons[1])[0] >= -1e-8
    assert policy.utility()[0] == pytest.approx(pandora_lp_optimum(inst, cons), abs=1e-7)
    assert len(res.points) <= 20


def test_multi_dual_methods_agree():
    inst = example_fs()
    cons = [parity_selection((1, 2), (3, 4)), parity_inspection((1, 2), (3, 4))]
    a = minimize_dual_multi(inst, cons)
    b = minimize_dual_multi(inst, cons, method="subgradient", max_iter=400)
    assert b.G >= a.G - 1e-9
    assert b.G == pytest.approx(a.G, abs=1e-2)
    with pytest.raises(ValueError):
        minimize_dual_multi(inst, cons, method="newton")

