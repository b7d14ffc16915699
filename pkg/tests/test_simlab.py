import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairsearch.jms import jms_brute_force_value
from fairsearch.simlab import (CSV_COLUMNS, BiasScenario, ConstraintSpec, ExperimentConfig, JmsScenario, build_constraint,
                               csv_text, discretize, gen_jms_scenario, gen_pandora_scenario, jms_onsite_budget,
                               jms_selection_parity, normalized_expost_slack, run_experiment, write_csv)

SMALL = BiasScenario(n=8, capacity=2, grid_points=5)


def small_config(**kw):
    base = dict(rhos=(0.7, 1.0), capacities=(2,), trials=400, seed=3, scenario=SMALL)
    base.update(kw)
    return ExperimentConfig(**base)


# discretization

def test_discretize_point_mass():
    d = discretize(3.0, 0.0)
    assert d.support == (3.0,) and d.probs == (1.0,)


def test_discretize_two_points():
    d = discretize(1.0, 2.0, 2)
    half = 2.0 * math.sqrt(2 / math.pi)  # E[Z | Z > 0] = sqrt(2/pi)
    assert d.support == pytest.approx((1.0 - half, 1.0 + half))
    assert d.probs == pytest.approx((0.5, 0.5))


@given(st.floats(-50, 50), st.floats(0.1, 20), st.integers(2, 40))
def test_discretize_moments(mean, sd, g):
    d = discretize(mean, sd, g)
    assert len(d.support) == g
    assert sum(d.probs) == pytest.approx(1.0)
    assert list(d.support) == sorted(d.support)
    assert d.mean == pytest.approx(mean, abs=0.02 * max(1.0, abs(mean)))
    assert min(d.support) >= mean - 4 * sd - 1e-9 and max(d.support) <= mean + 4 * sd + 1e-9


def test_discretize_rejects_one_point():
    with pytest.raises(ValueError):
        discretize(0.0, 1.0, 1)


# Pandora scenarios

def test_scenario_validation():
    with pytest.raises(ValueError):
        BiasScenario(rho=0.0)
    with pytest.raises(ValueError):
        BiasScenario(n=7)


def test_gen_pandora_scenario_shape():
    sc = BiasScenario(n=10, capacity=3, rho=0.6, seed=4)
    scen = gen_pandora_scenario(sc)
    inst = scen.instance
    assert len(inst.boxes) == 10 and inst.capacity == 3
    assert [b.group for b in inst.boxes] == ["X"] * 5 + ["Y"] * 5
    for b in inst.boxes:
        assert 3.0 <= b.cost <= 6.0
        scale = 0.6 if b.group == "Y" else 1.0
        assert np.allclose(scen.true_values[b.id], np.asarray(b.dist.support) / scale)


def test_rho_only_touches_group_y():
    a = gen_pandora_scenario(BiasScenario(n=6, rho=1.0, capacity=2, seed=9)).instance
    b = gen_pandora_scenario(BiasScenario(n=6, rho=0.5, capacity=2, seed=9)).instance
    for ba, bb in zip(a.boxes, b.boxes):
        assert ba.cost == bb.cost
        if ba.group == "X":
            assert ba.dist == bb.dist
        else:
            assert np.allclose(np.asarray(bb.dist.support), 0.5 * np.asarray(ba.dist.support))


def test_rho_one_signals_are_true_values():
    scen = gen_pandora_scenario(BiasScenario(n=6, capacity=2, seed=1))
    for b in scen.instance.boxes:
        assert np.array_equal(scen.true_values[b.id], np.asarray(b.dist.support))


def test_generation_is_deterministic():
    a = gen_pandora_scenario(BiasScenario(n=6, rho=0.8, capacity=2, seed=5)).instance
    b = gen_pandora_scenario(BiasScenario(n=6, rho=0.8, capacity=2, seed=5)).instance
    assert a == b


def test_build_constraint_kinds():
    x, y = [1, 2], [3, 4]
    par = build_constraint("parity", "selection", x, y)
    assert par.theta_S == {1: 1.0, 2: 1.0, 3: -1.0, 4: -1.0} and par.b == 0.0 and par.sense == "eq"
    assert build_constraint("parity", "inspection", x, y).theta_I == par.theta_S
    q = build_constraint("quota", "selection", x, y, theta=0.5)
    assert q.theta_S == {1: 0.5, 2: 0.5, 3: -0.5, 4: -0.5} and q.sense == "leq"
    bud = build_constraint("budget", "inspection", x, y, bound=0.5)
    assert bud.theta_I == {3: 1.0, 4: 1.0} and bud.b == 0.5 and bud.sense == "leq"
    for bad in (("quota", "selection"), ("budget", "selection"), ("other", "selection"), ("parity", "x")):
        with pytest.raises(ValueError):
            build_constraint(*bad, x, y)


# JMS scenarios

def test_jms_scenario_chains_are_absorbing():
    inst, layout = gen_jms_scenario(JmsScenario(n=4, seed=2))
    assert len(inst.chains) == 4 and layout.groups == ("X", "X", "Y", "Y")
    for c in inst.chains:
        assert np.allclose(c.A.sum(axis=1), 1.0)
        for t in c.terminal:
            assert c.A[t, t] == 1.0
    assert np.max(np.abs(inst.R)) <= 1.0 + 1e-12
    th = jms_selection_parity(inst, layout)
    assert th[list(layout.hired[0])].tolist() == [1.0] * 4 and th[list(layout.hired[3])].tolist() == [-1.0] * 4
    assert jms_onsite_budget(inst, layout).sum() == 4


def test_jms_scenario_pass_prob_zero_is_worthless():
    inst, _ = gen_jms_scenario(JmsScenario(n=2, pass_prob=0.0, seed=1))
    assert jms_brute_force_value(inst) == 0.0


def test_jms_scenario_rejection_variants():
    a, _ = gen_jms_scenario(JmsScenario(n=2, seed=1))
    b, _ = gen_jms_scenario(JmsScenario(n=2, seed=1, rejection_uses_capacity=True))
    assert a.d == b.d + 2
    raw, lay = gen_jms_scenario(JmsScenario(n=2, seed=1, normalize=False))
    assert lay.scale == 1.0 and np.max(np.abs(raw.R)) > 1.0


# configuration

def test_config_from_dict_and_load(tmp_path):
    d = {"rhos": [0.5], "capacities": [3, 4], "trials": 10, "replicates": 2,
         "constraints": [{"kind": "quota", "theta": 0.3}, {"kind": "parity", "stage": "inspection"}],
         "scenario": {"n": 8, "cost_range": [1, 2]}}
    cfg = ExperimentConfig.from_dict(d)
    assert cfg.rhos == (0.5,) and cfg.scenario.cost_range == (1, 2) and cfg.scenario.n == 8
    assert [c.label for c in cfg.constraints] == ["quota-selection(0.3)", "parity-inspection"]
    assert len(cfg.cells()) == 2 * 1 * 2 * 2
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    assert ExperimentConfig.load(path) == cfg
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"bogus": 1})


def test_csv_columns_fixed():
    assert CSV_COLUMNS[:17] == ("scenario_id", "rho", "k", "theta", "constraint", "solver", "u_short_uc", "u_short_c",
                                "u_long_uc", "u_long_c", "pof_short", "pof_long", "slack_uc", "slack_c",
                                "unalloc_frac", "lambda_star", "trials")
    assert all(c.startswith("stderr_") for c in CSV_COLUMNS[17:])


# experiments

@pytest.fixture(scope="module")
def small_rows():
    cons = (ConstraintSpec(), ConstraintSpec("quota", "selection", theta=0.0))
    return run_experiment(small_config(constraints=cons, replicates=2))


def test_experiment_row_invariants(small_rows):
    assert len(small_rows) == 8
    for r in small_rows:
        assert r.pof_short <= 1 + 3 * max(r.stderr_u_short_c, 1e-12) / max(r.u_short_uc, 1e-12)
        if r.constraint.startswith("parity"):
            assert abs(r.slack_c) <= 4 * r.stderr_slack_c + 1e-12
        else:
            assert r.slack_c >= -4 * r.stderr_slack_c - 1e-12
        assert 0.0 <= r.unalloc_frac <= 1.0
        assert r.trials == 400
        if r.rho == 1.0:
            assert r.u_long_uc == r.u_short_uc and r.u_long_c == r.u_short_c


def test_quota_zero_costs_nothing(small_rows):
    for r in small_rows:
        if r.constraint.startswith("quota"):
            assert r.pof_short == pytest.approx(1.0) and r.lambda_star == 0.0


def test_csv_output_and_determinism(small_rows, tmp_path):
    cons = (ConstraintSpec(), ConstraintSpec("quota", "selection", theta=0.0))
    again = run_experiment(small_config(constraints=cons, replicates=2))
    assert csv_text(again) == csv_text(small_rows)
    path = tmp_path / "out.csv"
    write_csv(small_rows, path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 9


def test_workers_match_serial():
    cfg = small_config(rhos=(0.7,), trials=200)
    buf = io.StringIO()
    serial = run_experiment(cfg, buf)
    parallel = run_experiment(ExperimentConfig(**{**cfg.__dict__, "workers": 2}))
    assert csv_text(parallel) == buf.getvalue() == csv_text(serial)


def test_failed_cell_is_skipped():
    # a positive budget bound on nothing selected from Y is fine; a negative one cannot be met
    cfg = small_config(rhos=(1.0,), constraints=(ConstraintSpec("budget", "selection", bound=-1.0),), trials=50)
    assert run_experiment(cfg) == []


@settings(max_examples=50)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=20), st.lists(st.integers(0, 5), min_size=1, max_size=20))
def test_normalized_expost_slack_range(x, y):
    n = min(len(x), len(y))
    s = normalized_expost_slack(np.array(x[:n]), np.array(y[:n]))
    for a, b, v in zip(x, y, s):
        if a + b == 0:
            assert math.isnan(v)
        else:
            assert -1.0 <= v <= 1.0 and v == pytest.approx((a - b) / (a + b))
