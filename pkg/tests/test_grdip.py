import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import jms_instances
from fairsearch.grdip import (JmsAffineConstraint, adjusted_reward, default_params, feasibility_report, grdip_solve,
                              params_for, quadratic_constraint, write_trace)
from fairsearch.jms import JmsInstance, MarkovChain, jms_brute_force_value, pandora_to_jms
from fairsearch.pandora import Box, PandoraInstance, ValueDistribution
from oracles import jms_lp_optimum, jms_quadratic_optimum


def two_chain_instance():
    # chain 0 can stall in a self-loop before it exits; chain 1 is a two-step line
    A0 = np.array([[.2, .4, .4, 0], [0, 0, .5, .5], [0, 0, 1, 0], [0, 0, 0, 1]])
    c0 = MarkovChain(4, frozenset({2, 3}), A0, np.array([-0.5, -0.25, 3.0, 1.0]), 0)
    A1 = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 1]])
    c1 = MarkovChain(3, frozenset({2}), A1, np.array([-1.0, 0.5, 2.0]), 0)
    return JmsInstance((c0, c1), 1)


def terminal_parity(inst):
    """theta . p = E[chain 0 selected] - E[chain 1 selected]."""
    th = np.zeros(inst.d)
    for i, c in enumerate(inst.chains):
        for t in c.terminal:
            th[inst.flat(i, t)] = 1.0 if i == 0 else -1.0
    return th


vec3 = arrays(float, 3, elements=st.floats(-3, 3))


def test_adjusted_reward_example():
    out = adjusted_reward([1, 2, 3], [0.5], [np.array([1, 0, -1])], [2.0], [np.array([0, 1, 0])])
    assert out.tolist() == [0.5, 0.0, 3.5]
    assert adjusted_reward([1, 2]).tolist() == [1.0, 2.0]


# quadratic constraint calculus

@given(vec3, vec3, st.floats(0.1, 5), st.floats(-1, 1))
def test_quadratic_gradient_finite_difference(p, c, alpha, offset):
    q = quadratic_constraint(c, alpha, offset)
    g = q.grad(p)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (q.F(p + e) - q.F(p - e)) / (2 * h)
        assert fd == pytest.approx(g[j], rel=1e-5, abs=1e-6)


@given(vec3, vec3, st.floats(0.1, 5), st.floats(-1, 1))
def test_conjugate_gradient_inverts_gradient(p, c, alpha, offset):
    q = quadratic_constraint(c, alpha, offset)
    assert np.allclose(q.conjugate_grad(q.grad(p)), p, atol=1e-8)


@given(vec3, vec3, st.floats(0.1, 5), st.floats(-1, 1))
def test_conjugate_is_supremum(mu, c, alpha, offset):
    q = quadratic_constraint(c, alpha, offset)
    star = q.conjugate_grad(mu)
    assert q.conjugate(mu) == pytest.approx(mu @ star - q.F(star), abs=1e-9)
    rng = np.random.default_rng(0)
    for p in star + rng.normal(size=(20, 3)):
        # Fenchel-Young
        assert mu @ p - q.F(p) <= q.conjugate(mu) + 1e-9


def test_biconjugate_numeric():
    q = quadratic_constraint([0.2, -0.4], 2.0, 0.3)
    grid = np.linspace(-8, 8, 161)
    mus = np.array([(a, b) for a in grid for b in grid])
    conj = np.array([q.conjugate(m) for m in mus])
    for p in ([0.0, 0.0], [0.5, 0.1], [-0.3, 0.7]):
        assert np.max(mus @ np.array(p) - conj) == pytest.approx(q.F(p), abs=1e-3)


def test_quadratic_rejects_bad_alpha():
    with pytest.raises(ValueError):
        quadratic_constraint([0.0], 0.0)


# parameters

def test_default_params_example():
    pr = default_params(0.1, 0.1, d=4, H_p=1.0, m_a=1)
    assert pr.H_lambda == pytest.approx(41.0)
    assert pr.K_I == 1
    assert pr.K_O == math.ceil((3 * 2 * 41 / 0.1) ** 2)
    assert pr.gamma_O_lambda == pytest.approx(41 / (2 * math.sqrt(pr.K_O)))


@given(st.floats(0.01, 0.5), st.floats(0.01, 0.5), st.integers(1, 30), st.integers(0, 3), st.integers(0, 2))
def test_default_params_meet_budget(eps, delta, d, m_a, m_c):
    q = quadratic_constraint(np.full(d, 0.3), 1.0)
    pr = default_params(eps, delta, d, 1.0, q.H_mu if m_c else 0.0, q.L_p if m_c else 0.0, m_a, m_c)
    assert sum(pr.epsilons()) <= eps * (1 + 1e-9)


def test_with_iterations_recomputes_steps():
    pr = default_params(0.1, 0.1, d=4, H_p=1.0, m_a=1).with_iterations(100, 1)
    assert pr.K_O == 100 and pr.gamma_O_lambda == pytest.approx(41 / 20)


def test_params_count_equalities_twice():
    inst = two_chain_instance()
    th = terminal_parity(inst)
    pr = params_for(inst, [JmsAffineConstraint(th, 0.0, "eq")], [], 0.1, 0.1)
    assert pr.m_a == 2 and pr.d == inst.d


# solver

def test_unconstrained_matches_brute_force():
    inst = two_chain_instance()
    sol = grdip_solve(inst, params=params_for(inst, [], [], 0.1, 0.1))
    assert sol.objective == pytest.approx(jms_brute_force_value(inst), abs=1e-9)
    assert sol.outer_iterations == 1


def test_affine_matches_lp():
    inst = two_chain_instance()
    th = terminal_parity(inst)
    aff = [JmsAffineConstraint(th, 0.0, "eq", "parity")]
    opt, _ = jms_lp_optimum(inst, [th], ["eq"], [0.0])
    unc = jms_brute_force_value(inst)
    assert opt < unc - 0.05  # the constraint binds
    sol = grdip_solve(inst, aff, epsilon=0.05, delta=0.05, keep_history=True)
    assert abs(sol.affine_violation[0]) <= 0.05
    assert sol.objective >= opt - 0.05
    assert sol.certificate.dual_bound >= opt - 1e-9
    for row in sol.history:
        for key in ("lambda_0", "lambda_1"):
            assert 0.0 <= row[key] <= params_for(inst, aff, [], 0.05, 0.05).H_lambda


def test_quadratic_matches_oracle():
    inst = two_chain_instance()
    _, p0 = jms_lp_optimum(inst)
    _, pe = jms_lp_optimum(inst, [terminal_parity(inst)], ["eq"], [0.0])
    q = quadratic_constraint(pe, 1.0, -0.5 * 0.2 ** 2, inst.visit_bound())
    assert q.F(p0) > 0.05
    opt, p_opt = jms_quadratic_optimum(inst, pe, 1.0, -0.02)
    assert q.F(p_opt) <= 1e-8
    pr = params_for(inst, [], [q], 0.05, 0.05)
    sol = grdip_solve(inst, [], [q], pr.with_iterations(300, 20), keep_history=True)
    assert sol.convex_value[0] <= 0.05
    assert sol.objective >= opt - 0.05
    assert sol.certificate.dual_bound >= opt - 1e-7
    for row in sol.history:
        assert 0.0 <= row["beta_0"] <= pr.H_beta


@settings(max_examples=25)
@given(jms_instances(max_chains=2, max_states=2), st.floats(-0.5, 0.5))
def test_dual_bound_is_upper_bound(inst, b):
    th = np.zeros(inst.d)
    th[0] = 1.0  # cap the first chain's start plays
    b = abs(b)
    opt, _ = jms_lp_optimum(inst, [th], ["leq"], [b])
    aff = [JmsAffineConstraint(th, b)]
    sol = grdip_solve(inst, aff, params=params_for(inst, aff, [], 0.1, 0.1).with_iterations(30), early_stop=False)
    assert sol.certificate.dual_bound >= opt - 1e-9
    assert np.all(sol.p_hat >= -1e-12) and np.all(sol.p_hat <= inst.visit_bound() + 1e-9)
    assert sum(a.weight for a in sol.atoms) == pytest.approx(1.0)
    assert np.all((sol.lambdas >= 0) & (sol.lambdas <= params_for(inst, aff, [], 0.1, 0.1).H_lambda))


def test_dimension_checked():
    with pytest.raises(ValueError, match="dimension"):
        grdip_solve(two_chain_instance(), [JmsAffineConstraint(np.ones(3))])


def test_feasibility_report_and_trace(tmp_path):
    inst = two_chain_instance()
    aff = [JmsAffineConstraint(terminal_parity(inst), 0.0, "eq")]
    sol = grdip_solve(inst, aff, params=params_for(inst, aff, [], 0.1, 0.1).with_iterations(5), early_stop=False,
                      keep_history=True)
    rep = feasibility_report(sol, aff, [])
    assert rep.affine == sol.affine_violation
    assert rep.max_violation() == pytest.approx(abs(sol.affine_violation[0]))
    path = tmp_path / "trace.csv"
    write_trace(sol, path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 5 and "mean_slack_0" in rows[0]
    with pytest.raises(ValueError):
        write_trace(grdip_solve(inst), tmp_path / "x.csv")


def test_mc_visits_run():
    inst = pandora_to_jms(PandoraInstance((Box(1, ValueDistribution((0.0, 4.0), (.5, .5)), 1.0),), 1))
    sol = grdip_solve(inst, visit_method="mc", trials=2000, seed=1)
    assert sol.visit_method == "mc"
    assert sol.objective == pytest.approx(1.0, abs=0.15)
