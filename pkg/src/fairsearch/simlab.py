"""Instance generators and the Monte Carlo experiment runner.

Pandora scenarios follow the biased-signal hiring setup: candidate means
are lognormal, group Y's signals are scaled down by a bias factor rho, and
the true value behind a signal v is v / rho.  JMS scenarios add a phone
screen and an offer stage that the candidate may decline.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .constrained import (
    AffineConstraint,
    Evaluator,
    InfeasibleConstraintError,
    RandomizedIndexPolicy,
    budget,
    parity_inspection,
    parity_selection,
    quota,
    slack_value,
    solve_rdip,
)
from .jms import JmsInstance, MarkovChain
from .pandora import Box, PandoraInstance, TieBreakRule, ValueDistribution

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "scenario_id", "rho", "k", "theta", "constraint", "solver",
    "u_short_uc", "u_short_c", "u_long_uc", "u_long_c", "pof_short", "pof_long",
    "slack_uc", "slack_c", "unalloc_frac", "lambda_star", "trials",
    "stderr_u_short_uc", "stderr_u_short_c", "stderr_u_long_uc", "stderr_u_long_c",
    "stderr_slack_uc", "stderr_slack_c", "stderr_unalloc",
)


# ---------------------------------------------------------------------------
# discretization


def discretize(mean: float, sd: float, grid_points: int = 25, clip: float = 4.0) -> ValueDistribution:
    """Equal-mass bins of N(mean, sd), each represented by its conditional mean."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    if sd <= 0:
        return ValueDistribution.point(mean)
    z = norm.ppf(np.linspace(0.0, 1.0, grid_points + 1))
    pdf = norm.pdf(z)
    cond = (pdf[:-1] - pdf[1:]) * grid_points
    vals = mean + sd * np.clip(cond, -clip, clip)
    probs = np.full(grid_points, 1.0 / grid_points)
    probs[-1] = 1.0 - probs[:-1].sum()
    return ValueDistribution(tuple(vals), tuple(probs))


# ---------------------------------------------------------------------------
# Pandora scenarios


@dataclass(frozen=True)
class BiasScenario:
    n: int = 60
    cost_range: tuple[float, float] = (3.0, 6.0)
    mean_scale: float = 10.0
    mean_shift: float = 20.0
    noise_sd: float = 10.0
    rho: float = 1.0
    capacity: int = 20
    grid_points: int = 25
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.n % 2:
            raise ValueError("n must be even (two equal groups)")

    @property
    def x_ids(self) -> list[int]:
        return list(range(1, self.n // 2 + 1))

    @property
    def y_ids(self) -> list[int]:
        return list(range(self.n // 2 + 1, self.n + 1))


@dataclass(frozen=True, eq=False)
class PandoraScenario:
    instance: PandoraInstance
    true_values: dict[int, np.ndarray]  # box id -> v / rho per support atom
    scenario: BiasScenario


def gen_pandora_scenario(sc: BiasScenario) -> PandoraScenario:
    rng = np.random.default_rng(sc.seed)
    lo, hi = sc.cost_range
    costs = rng.uniform(lo, hi, sc.n)
    base = rng.lognormal(0.0, 1.0, sc.n) * sc.mean_scale + sc.mean_shift
    boxes, true = [], {}
    for j in range(sc.n):
        bid = j + 1
        in_y = bid in sc.y_ids
        rho = sc.rho if in_y else 1.0
        dist = discretize(base[j] * rho, sc.noise_sd * rho, sc.grid_points)
        boxes.append(Box(bid, dist, float(costs[j]), "Y" if in_y else "X"))
        true[bid] = np.asarray(dist.support) / rho
    return PandoraScenario(PandoraInstance(tuple(boxes), sc.capacity), true, sc)


def build_constraint(kind: str, stage: str, x_ids: Sequence[int], y_ids: Sequence[int], theta: float | None = None,
                     bound: float | None = None, weights: dict[int, float] | None = None) -> AffineConstraint:
    """parity (equality), quota(theta) and budget(bound) (both leq) on selection or inspection."""
    if stage not in ("selection", "inspection"):
        raise ValueError(f"unknown stage {stage!r}")
    if kind == "parity":
        return (parity_selection if stage == "selection" else parity_inspection)(x_ids, y_ids)
    if kind == "quota":
        if theta is None:
            raise ValueError("quota needs theta")
        return quota(x_ids, y_ids, theta, stage)
    if kind == "budget":
        if bound is None:
            raise ValueError("budget needs a bound")
        w = weights if weights is not None else {i: 1.0 for i in y_ids}
        return budget(w, bound, stage)
    raise ValueError(f"unknown constraint kind {kind!r}")


# ---------------------------------------------------------------------------
# JMS scenarios


@dataclass(frozen=True)
class JmsScenario:
    n: int = 10
    pass_prob: float = 0.8
    accept_prob: float = 0.9
    phone_cost: tuple[float, float] = (1.0, 2.0)
    onsite_cost: tuple[float, float] = (2.0, 4.0)
    offer_cost: float = 3.0
    grid_points: int = 4
    mean_scale: float = 10.0
    mean_shift: float = 20.0
    noise_sd: float = 10.0
    rho: float = 1.0
    capacity: int = 1
    seed: int = 0
    rejection_uses_capacity: bool = False
    normalize: bool = True


@dataclass(frozen=True, eq=False)
class JmsLayout:
    """Flat state indices per chain, for building constraints."""

    phone: tuple[int, ...]
    onsite: tuple[int, ...]
    offer: tuple[tuple[int, ...], ...]
    hired: tuple[tuple[int, ...], ...]
    groups: tuple[str, ...]
    scale: float


def _hiring_chain(phone_c, onsite_c, offer_c, dist: ValueDistribution, pass_p, accept_p, uses_capacity,
                  dead_penalty):
    G = len(dist.support)
    # 0 phone, 1 onsite, 2..2+G offers, 2+G..2+2G hires, then rejection states
    n_core = 2 + 2 * G
    if uses_capacity:
        ell = n_core + 1
        rej = n_core
        terminal = set(range(2 + G, n_core)) | {rej}
    else:
        ell = n_core + 2
        rej = n_core  # dead end: never worth playing
        sink = n_core + 1
        terminal = set(range(2 + G, n_core)) | {sink}
    A = np.zeros((ell, ell))
    R = np.zeros(ell)
    R[0] = -phone_c
    A[0, 1] = pass_p
    A[0, rej] += 1.0 - pass_p
    R[1] = -onsite_c
    for a, (v, p) in enumerate(zip(dist.support, dist.probs)):
        A[1, 2 + a] = p
        R[2 + a] = -offer_c
        A[2 + a, 2 + G + a] = accept_p
        A[2 + a, rej] += 1.0 - accept_p
        R[2 + G + a] = v
        A[2 + G + a, 2 + G + a] = 1.0
    if uses_capacity:
        A[rej, rej] = 1.0
    else:
        A[rej, sink] = 1.0
        A[sink, sink] = 1.0
        R[sink] = -dead_penalty
    return MarkovChain(ell, frozenset(terminal), A, R, 0)


def gen_jms_scenario(sc: JmsScenario) -> tuple[JmsInstance, JmsLayout]:
    rng = np.random.default_rng(sc.seed)
    phone = rng.uniform(*sc.phone_cost, sc.n)
    onsite = rng.uniform(*sc.onsite_cost, sc.n)
    base = rng.lognormal(0.0, 1.0, sc.n) * sc.mean_scale + sc.mean_shift
    half = sc.n // 2
    groups = tuple("X" if j < sc.n - half else "Y" for j in range(sc.n))
    dists = []
    for j in range(sc.n):
        rho = sc.rho if groups[j] == "Y" else 1.0
        dists.append(discretize(base[j] * rho, sc.noise_sd * rho, sc.grid_points))
    raw_max = max([sc.offer_cost] + list(phone) + list(onsite) + [abs(v) for d in dists for v in d.support])
    scale = raw_max if sc.normalize else 1.0
    chains = [
        _hiring_chain(phone[j] / scale, onsite[j] / scale, sc.offer_cost / scale,
                      ValueDistribution(tuple(v / scale for v in d.support), d.probs), sc.pass_prob, sc.accept_prob,
                      sc.rejection_uses_capacity, 1.0)
        for j, d in enumerate(dists)
    ]
    inst = JmsInstance(tuple(chains), sc.capacity)
    off = inst.offsets
    layout = JmsLayout(
        phone=tuple(int(off[j]) for j in range(sc.n)),
        onsite=tuple(int(off[j] + 1) for j in range(sc.n)),
        offer=tuple(tuple(int(off[j] + 2 + a) for a in range(len(d.support))) for j, d in enumerate(dists)),
        hired=tuple(tuple(int(off[j] + 2 + len(d.support) + a) for a in range(len(d.support)))
                    for j, d in enumerate(dists)),
        groups=groups,
        scale=float(scale),
    )
    return inst, layout


def jms_selection_parity(inst: JmsInstance, layout: JmsLayout) -> np.ndarray:
    """theta with +1 on group X hire states and -1 on group Y hire states."""
    th = np.zeros(inst.d)
    for j, states in enumerate(layout.hired):
        th[list(states)] = 1.0 if layout.groups[j] == "X" else -1.0
    return th


def jms_onsite_budget(inst: JmsInstance, layout: JmsLayout) -> np.ndarray:
    th = np.zeros(inst.d)
    th[list(layout.onsite)] = 1.0
    return th


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ConstraintSpec:
    kind: str = "parity"
    stage: str = "selection"
    theta: float | None = None
    bound: float | None = None

    @property
    def label(self) -> str:
        s = f"{self.kind}-{self.stage}"
        if self.theta is not None:
            s += f"({self.theta:g})"
        if self.bound is not None:
            s += f"(B={self.bound:g})"
        return s


@dataclass(frozen=True)
class ExperimentConfig:
    rhos: tuple[float, ...] = (0.7, 1.0)
    capacities: tuple[int, ...] = (20,)
    constraints: tuple[ConstraintSpec, ...] = (ConstraintSpec(),)
    replicates: int = 1
    trials: int = 2000
    seed: int = 0
    solver: str = "rdip"
    scenario: BiasScenario = field(default_factory=BiasScenario)
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        sc = d.pop("scenario", {}) or {}
        if "cost_range" in sc:
            sc["cost_range"] = tuple(sc["cost_range"])
        cons = tuple(ConstraintSpec(**c) for c in d.pop("constraints", [asdict(ConstraintSpec())]))
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        for key in ("rhos", "capacities"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(scenario=BiasScenario(**sc), constraints=cons, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def cells(self) -> list[dict]:
        out = []
        for rep in range(self.replicates):
            for rho in self.rhos:
                for k in self.capacities:
                    for c in self.constraints:
                        out.append(dict(rep=rep, rho=rho, k=k, constraint=c))
        return out


@dataclass(frozen=True)
class ExperimentRow:
    scenario_id: str
    rho: float
    k: int
    theta: float | None
    constraint: str
    solver: str
    u_short_uc: float
    u_short_c: float
    u_long_uc: float
    u_long_c: float
    pof_short: float
    pof_long: float
    slack_uc: float
    slack_c: float
    unalloc_frac: float
    lambda_star: float
    trials: int
    stderr_u_short_uc: float
    stderr_u_short_c: float
    stderr_u_long_uc: float
    stderr_u_long_c: float
    stderr_slack_uc: float
    stderr_slack_c: float
    stderr_unalloc: float

    def as_list(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def _cell_seed(seed: int, idx: int) -> int:
    return int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])


def _ratio(a: float, b: float) -> float:
    return a / b if b > 0 else math.nan


def _mixture_stat(policy: RandomizedIndexPolicy, evaluator: Evaluator, stat) -> tuple[float, float]:
    parts = [stat(m, ev) for m, ev in policy.evaluations(evaluator)]
    mean = math.fsum(a.weight * s for a, (s, _) in zip(policy.atoms, parts))
    se = math.sqrt(math.fsum((a.weight * e) ** 2 for a, (_, e) in zip(policy.atoms, parts)))
    return mean, se


def run_cell(config: ExperimentConfig, idx: int, cell: dict) -> ExperimentRow:
    rep, rho, k, cspec = cell["rep"], cell["rho"], cell["k"], cell["constraint"]
    base = config.scenario
    # the instance depends on (seed, replicate) only, so every rho/k/constraint sees the same candidates
    sc = BiasScenario(**{**asdict(base), "rho": rho, "capacity": k,
                         "seed": _cell_seed(config.seed + base.seed, rep)})
    scen = gen_pandora_scenario(sc)
    inst = scen.instance
    con = build_constraint(cspec.kind, cspec.stage, sc.x_ids, sc.y_ids, cspec.theta, cspec.bound)
    ev = Evaluator(config.trials, _cell_seed(config.seed, idx))
    costs = np.array([b.cost for b in inst.boxes])
    true = [scen.true_values[b.id] for b in inst.boxes]

    def long_term(m, e):
        return e.linear(true, -costs)

    def selected(m, e):
        return e.selected_count()

    model = inst.model()
    e0 = ev(model, TieBreakRule.lexicographic())
    u_s_uc = e0.utility(model)
    u_l_uc = long_term(model, e0)
    sl_uc = slack_value(e0, model, con)
    if config.solver != "rdip":
        raise ValueError(f"unknown solver {config.solver!r}")
    policy = solve_rdip(inst, con, evaluator=ev)
    u_s_c = policy.utility(ev)
    u_l_c = _mixture_stat(policy, ev, long_term)
    sl_c = policy.slack(con, ev)
    sel = _mixture_stat(policy, ev, selected)
    return ExperimentRow(
        scenario_id=f"r{rep}-rho{rho:g}-k{k}-{cspec.label}",
        rho=rho, k=k, theta=cspec.theta if cspec.theta is not None else cspec.bound,
        constraint=cspec.label, solver=config.solver,
        u_short_uc=u_s_uc[0], u_short_c=u_s_c[0], u_long_uc=u_l_uc[0], u_long_c=u_l_c[0],
        pof_short=_ratio(u_s_c[0], u_s_uc[0]), pof_long=_ratio(u_l_c[0], u_l_uc[0]),
        slack_uc=sl_uc[0] / k, slack_c=sl_c[0] / k,
        unalloc_frac=1.0 - sel[0] / k, lambda_star=float(policy.lambda_star[0]), trials=config.trials,
        stderr_u_short_uc=u_s_uc[1], stderr_u_short_c=u_s_c[1], stderr_u_long_uc=u_l_uc[1],
        stderr_u_long_c=u_l_c[1], stderr_slack_uc=sl_uc[1] / k, stderr_slack_c=sl_c[1] / k,
        stderr_unalloc=sel[1] / k,
    )


def _safe_cell(args):
    config, idx, cell = args
    try:
        return run_cell(config, idx, cell)
    except (InfeasibleConstraintError, RuntimeError, ValueError) as exc:
        log.warning("cell %d (%s) failed: %s", idx, cell, exc)
        return None


def run_experiment(config: ExperimentConfig, out=None) -> list[ExperimentRow]:
    """Run every grid cell; failed cells are logged and skipped.  out: path or text stream for CSV."""
    jobs = [(config, i, c) for i, c in enumerate(config.cells())]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_safe_cell, jobs))
    else:
        results = [_safe_cell(j) for j in jobs]
    rows = [r for r in results if r is not None]
    if out is not None:
        write_csv(rows, out)
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(rows: Iterable[ExperimentRow], out) -> None:
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", newline="") as fh:
            write_csv(rows, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(x) for x in r.as_list()])


def csv_text(rows: Iterable[ExperimentRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def normalized_expost_slack(selected_x: np.ndarray, selected_y: np.ndarray) -> np.ndarray:
    """(A_X - A_Y) / (A_X + A_Y) per sample path; nan when nothing is selected."""
    x = np.asarray(selected_x, dtype=float)
    y = np.asarray(selected_y, dtype=float)
    tot = x + y
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, (x - y) / tot, np.nan)
