"""Pandora's box search with multiple selections.

The engine works on atom indices: every box keeps its original support
order, and adjusted values (after a dual shift) live in a parallel array.
This lets value-specific adjustments reorder or merge values without
touching probabilities.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

TIE_TOL = 1e-9
DEFAULT_ENUM_CAP = 10**7
OUTSIDE = "outside"
INF = math.inf


class CapExceededError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# instance types


@dataclass(frozen=True)
class ValueDistribution:
    support: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        support = tuple(float(v) for v in self.support)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if not support:
            raise ValueError("support must be nonempty")
        if len(support) != len(probs):
            raise ValueError("support and probs differ in length")
        if any(p < 0 for p in probs):
            raise ValueError("probabilities must be nonnegative")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        if any(b <= a for a, b in zip(support, support[1:])):
            raise ValueError("support must be strictly increasing")

    @classmethod
    def point(cls, value: float) -> "ValueDistribution":
        return cls((value,), (1.0,))

    @property
    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.support, self.probs))

    def index_of(self, value: float) -> int:
        for a, v in enumerate(self.support):
            if v == value or abs(v - value) <= 1e-12 * max(1.0, abs(v)):
                return a
        raise ValueError(f"value {value!r} not in support {self.support}")


@dataclass(frozen=True)
class Box:
    id: int
    dist: ValueDistribution
    cost: float
    group: str | None = None


@dataclass(frozen=True)
class PandoraInstance:
    boxes: tuple[Box, ...]
    capacity: int = 1

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        ids = [b.id for b in self.boxes]
        if len(set(ids)) != len(ids):
            raise ValueError("box ids must be unique")
        if not 1 <= self.capacity <= len(self.boxes):
            raise ValueError(f"capacity {self.capacity} outside [1, {len(self.boxes)}]")

    @property
    def n(self) -> int:
        return len(self.boxes)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.boxes)

    def box(self, box_id: int) -> Box:
        for b in self.boxes:
            if b.id == box_id:
                return b
        raise KeyError(box_id)

    def group_ids(self, group: str) -> tuple[int, ...]:
        return tuple(b.id for b in self.boxes if b.group == group)

    def model(self, tol: float = TIE_TOL) -> "SearchModel":
        base_v = tuple(np.array(b.dist.support) for b in self.boxes)
        costs = np.array([b.cost for b in self.boxes], dtype=float)
        return SearchModel(
            ids=self.ids,
            values=base_v,
            probs=tuple(np.array(b.dist.probs) for b in self.boxes),
            costs=costs,
            base_values=base_v,
            base_costs=costs,
            capacity=self.capacity,
            tol=tol,
        )


@dataclass(frozen=True)
class Realization:
    values: Mapping[int, float]


@dataclass(frozen=True)
class SearchOutcome:
    inspected: frozenset[int]
    selected: frozenset[int]
    net_utility: float
    order: tuple[int, ...] = ()


# ---------------------------------------------------------------------------
# reservation index


def _index_from_atoms(values: np.ndarray, probs: np.ndarray, cost: float) -> float:
    """Solve E[(v - s)^+] = cost for atoms in any order."""
    keep = probs > 0
    v = np.asarray(values, dtype=float)[keep]
    p = np.asarray(probs, dtype=float)[keep]
    if cost < 0:
        return INF
    if cost == 0:
        return float(v.max())
    order = np.argsort(-v, kind="stable")
    v, p = v[order], p[order]
    mass = 0.0
    weighted = 0.0
    for j in range(len(v)):
        mass += p[j]
        weighted += p[j] * v[j]
        # on [v_{j+1}, v_j] the excess is weighted - mass * s
        lower = v[j + 1] if j + 1 < len(v) else -INF
        if lower == -INF or weighted - mass * lower >= cost:
            return float((weighted - cost) / mass)
    raise AssertionError("unreachable")


def reservation_index(dist: ValueDistribution, cost: float) -> float:
    """Reservation value of a box, +inf for negative cost."""
    return _index_from_atoms(np.array(dist.support), np.array(dist.probs), float(cost))


# ---------------------------------------------------------------------------
# search model


@dataclass(frozen=True, eq=False)
class SearchModel:
    """Boxes in instance order with (possibly adjusted) atom values and costs."""

    ids: tuple[int, ...]
    values: tuple[np.ndarray, ...]
    probs: tuple[np.ndarray, ...]
    costs: np.ndarray
    base_values: tuple[np.ndarray, ...]
    base_costs: np.ndarray
    capacity: int
    tol: float = TIE_TOL

    def __post_init__(self):
        costs = np.array(self.costs, dtype=float)
        # adjustments that cancel analytically may leave float dust
        costs[np.abs(costs) <= self.tol] = 0.0
        object.__setattr__(self, "costs", costs)

    @property
    def n(self) -> int:
        return len(self.ids)

    @cached_property
    def sigma(self) -> np.ndarray:
        return np.array(
            [_index_from_atoms(v, p, c) for v, p, c in zip(self.values, self.probs, self.costs)]
        )

    @cached_property
    def priority(self) -> np.ndarray:
        """Lexicographic priority: the lowest id gets the highest number."""
        order = sorted(range(self.n), key=lambda i: self.ids[i])
        pr = np.empty(self.n, dtype=np.int64)
        for rank, i in enumerate(order):
            pr[i] = self.n - rank
        return pr

    def position(self, box_id: int) -> int:
        return self.ids.index(box_id)

    def atom_of(self, i: int, value: float) -> int:
        base = self.base_values[i]
        hits = np.flatnonzero(np.abs(base - value) <= 1e-12 * np.maximum(1.0, np.abs(base)))
        if len(hits) == 0:
            raise ValueError(f"value {value!r} not in support of box {self.ids[i]}")
        return int(hits[0])


# ---------------------------------------------------------------------------
# tie-breaking


@dataclass(frozen=True)
class TieBreakRule:
    """How ties between equal indices are broken.

    kind is one of lexicographic, negative_extreme, positive_extreme,
    explicit_scores, perturbation.  Extreme kinds carry one constraint,
    perturbation carries a constraint list plus a tuple of direction vectors
    refined lexicographically.  explicit_scores maps box id (and optionally
    OUTSIDE) to a score; a pair (unopened, opened) gives separate scores.
    """

    kind: str = "lexicographic"
    constraints: tuple = ()
    omegas: tuple[tuple[float, ...], ...] = ()
    scores: Mapping = field(default_factory=dict)
    label: str = ""

    KINDS = ("lexicographic", "negative_extreme", "positive_extreme", "explicit_scores", "perturbation")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown tie-break kind {self.kind!r}")
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "omegas", tuple(tuple(float(x) for x in w) for w in self.omegas))

    def __hash__(self):
        return hash((self.kind, self.label, len(self.constraints), self.omegas))

    @classmethod
    def lexicographic(cls) -> "TieBreakRule":
        return cls("lexicographic")

    @classmethod
    def negative(cls, constraint) -> "TieBreakRule":
        return cls("negative_extreme", constraints=(constraint,))

    @classmethod
    def positive(cls, constraint) -> "TieBreakRule":
        return cls("positive_extreme", constraints=(constraint,))

    @classmethod
    def explicit(cls, scores: Mapping) -> "TieBreakRule":
        return cls("explicit_scores", scores=dict(scores))

    @classmethod
    def perturbation(cls, constraints: Sequence, omegas: Sequence[Sequence[float]]) -> "TieBreakRule":
        return cls("perturbation", constraints=tuple(constraints), omegas=tuple(omegas))

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "perturbation":
            return "perturbation" + repr(self.omegas)
        return self.kind


@dataclass(frozen=True)
class Candidate:
    index: int | None  # None is the outside option
    opened: bool = False
    atom: int | None = None


@dataclass(frozen=True, eq=False)
class TieContext:
    model: SearchModel
    o_max: float
    candidates: tuple[Candidate, ...]


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Static ranks: every supported rule depends only on the candidate kind."""

    unopened: np.ndarray
    unopened_below: np.ndarray
    opened: tuple[np.ndarray, ...]
    outside: int


def _score_cmp(a: tuple, b: tuple, tol: float) -> int:
    for x, y in zip(a, b):
        if x == y:
            continue
        if math.isinf(x) or math.isinf(y):
            return -1 if x < y else 1
        if abs(x - y) <= tol:
            continue
        return -1 if x < y else 1
    return 0


def _rank(keys: list[tuple], tol: float) -> list[int]:
    order = sorted(range(len(keys)), key=functools.cmp_to_key(lambda i, j: _score_cmp(keys[i], keys[j], tol)))
    ranks = [0] * len(keys)
    r = 0
    for pos, i in enumerate(order):
        if pos and _score_cmp(keys[order[pos - 1]], keys[i], tol) < 0:
            r += 1
        ranks[i] = r
    return ranks


def _explicit_keys(model: SearchModel, scores: Mapping) -> tuple[list, list, list, tuple]:
    unopened, opened = [], []
    for i, bid in enumerate(model.ids):
        if bid not in scores:
            raise ValueError(f"explicit_scores missing box {bid}")
        s = scores[bid]
        su, so = (s if isinstance(s, tuple) else (s, s))
        unopened.append((float(su),))
        opened.append([(float(so),)] * len(model.values[i]))
    outside = (float(scores.get(OUTSIDE, 0.0)),)
    return unopened, list(unopened), opened, outside


def score_table(model: SearchModel, rule: TieBreakRule) -> ScoreTable:
    n = model.n
    if rule.kind == "lexicographic":
        return ScoreTable(
            np.zeros(n, dtype=np.int64),
            np.zeros(n, dtype=np.int64),
            tuple(np.zeros(len(v), dtype=np.int64) for v in model.values),
            0,
        )
    if rule.kind == "explicit_scores":
        unopened, below, opened, outside = _explicit_keys(model, rule.scores)
    else:
        from .constrained import rule_score_keys

        unopened, below, opened, outside = rule_score_keys(model, rule)
    flat = list(unopened) + list(below) + [k for row in opened for k in row] + [outside]
    ranks = _rank([tuple(k) for k in flat], model.tol)
    pos = 0
    u = np.array(ranks[pos:pos + n], dtype=np.int64)
    pos += n
    b = np.array(ranks[pos:pos + n], dtype=np.int64)
    pos += n
    o = []
    for row in opened:
        o.append(np.array(ranks[pos:pos + len(row)], dtype=np.int64))
        pos += len(row)
    return ScoreTable(u, b, tuple(o), ranks[pos])


# ---------------------------------------------------------------------------
# the index policy


def _decide(model: SearchModel, table: ScoreTable, atoms: np.ndarray, selected: np.ndarray):
    """One step of the refined index policy.

    Returns (None, None) for the outside option, else (i, "inspect" | "select").
    """
    tol = model.tol
    o_max = 0.0
    opt = [0.0] * model.n
    for i in range(model.n):
        if selected[i]:
            continue
        a = atoms[i]
        opt[i] = model.values[i][a] if a >= 0 else model.sigma[i]
        if opt[i] > o_max:
            o_max = opt[i]
    best = None
    best_key = None
    for i in range(model.n):
        if selected[i]:
            continue
        a = atoms[i]
        tied = opt[i] >= o_max - tol
        if a >= 0:
            if not tied:
                continue
            r = table.opened[i][a]
        elif tied:
            r = table.unopened[i]
        elif model.costs[i] == 0:
            r = table.unopened_below[i]
        else:
            continue
        key = (r, model.priority[i])
        if best_key is None or key > best_key:
            best, best_key = i, key
    if 0.0 >= o_max - tol:
        key = (table.outside, 0)
        if best_key is None or key > best_key:
            return None, None
    if best is None:
        return None, None
    return best, ("select" if atoms[best] >= 0 else "inspect")


def run_model(model: SearchModel, table: ScoreTable, atoms_real: Sequence[int]) -> tuple[list, list]:
    """Run the index policy on realized atoms; returns (inspection order, selected indices)."""
    atoms = np.full(model.n, -1, dtype=np.int64)
    selected = np.zeros(model.n, dtype=bool)
    order, chosen = [], []
    while len(chosen) < model.capacity:
        i, action = _decide(model, table, atoms, selected)
        if i is None:
            break
        if action == "inspect":
            atoms[i] = atoms_real[i]
            order.append(i)
        else:
            selected[i] = True
            chosen.append(i)
    return order, chosen


def _model_of(instance, tol: float) -> SearchModel:
    if isinstance(instance, SearchModel):
        return instance
    return instance.model(tol)


def run_refined_policy(instance, tie: TieBreakRule, real: Realization, tol: float = TIE_TOL) -> SearchOutcome:
    model = _model_of(instance, tol)
    missing = [bid for bid in model.ids if bid not in real.values]
    if missing:
        raise ValueError(f"realization misses boxes {missing}")
    atoms = [model.atom_of(i, real.values[bid]) for i, bid in enumerate(model.ids)]
    order, chosen = run_model(model, score_table(model, tie), atoms)
    util = math.fsum(model.base_values[i][atoms[i]] for i in chosen) - math.fsum(
        model.base_costs[i] for i in order
    )
    return SearchOutcome(
        inspected=frozenset(model.ids[i] for i in order),
        selected=frozenset(model.ids[i] for i in chosen),
        net_utility=float(util),
        order=tuple(model.ids[i] for i in order),
    )


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True, eq=False)
class PolicyEvaluation:
    """Selection and inspection statistics of one deterministic policy.

    sel_atom[i][a] is P(box i selected with atom a), insp[i] is P(box i
    inspected).  Monte Carlo runs also keep per-trial arrays so that any
    linear statistic gets a standard error.
    """

    sel_atom: tuple[np.ndarray, ...]
    insp: np.ndarray
    trials: int | None = None
    trial_atoms: np.ndarray | None = None
    trial_selected: np.ndarray | None = None
    trial_inspected: np.ndarray | None = None

    @property
    def exact(self) -> bool:
        return self.trials is None

    @property
    def selection(self) -> np.ndarray:
        return np.array([s.sum() for s in self.sel_atom])

    def linear(self, sel_coef: Sequence[np.ndarray], insp_coef: np.ndarray) -> tuple[float, float]:
        """Mean and standard error of sum sel*coef + insp*coef."""
        insp_coef = np.asarray(insp_coef, dtype=float)
        if self.exact:
            total = math.fsum(float(np.dot(s, c)) for s, c in zip(self.sel_atom, sel_coef))
            total += float(np.dot(self.insp, insp_coef))
            return total, 0.0
        per = self.per_trial(sel_coef, insp_coef)
        se = float(per.std(ddof=1) / math.sqrt(len(per))) if len(per) > 1 else 0.0
        return float(per.mean()), se

    def per_trial(self, sel_coef: Sequence[np.ndarray], insp_coef: np.ndarray) -> np.ndarray:
        n = len(self.sel_atom)
        vals = np.zeros(self.trial_atoms.shape, dtype=float)
        for i in range(n):
            vals[:, i] = np.asarray(sel_coef[i], dtype=float)[self.trial_atoms[:, i]]
        return (vals * self.trial_selected).sum(axis=1) + self.trial_inspected @ np.asarray(insp_coef, dtype=float)

    def utility(self, model: SearchModel) -> tuple[float, float]:
        return self.linear(model.base_values, -model.base_costs)

    def selected_count(self) -> tuple[float, float]:
        return self.linear([np.ones(len(s)) for s in self.sel_atom], np.zeros(len(self.sel_atom)))


@dataclass(frozen=True)
class OutcomeSummary:
    selection: dict[int, float]
    inspection: dict[int, float]
    utility: float
    stderr: float = 0.0
    selection_stderr: dict[int, float] | None = None
    inspection_stderr: dict[int, float] | None = None


def support_product(model: SearchModel) -> int:
    return math.prod(len(v) for v in model.values)


def evaluate_exact(model: SearchModel, rule: TieBreakRule, cap: int = DEFAULT_ENUM_CAP) -> PolicyEvaluation:
    """Exact expectations over all realizations.

    Depth-first over the decision tree, branching only on boxes the policy
    actually opens; every realization of the product distribution is
    covered, so this equals full enumeration.
    """
    size = support_product(model)
    if size > cap:
        raise CapExceededError(f"support product {size} exceeds enumeration cap {cap}")
    table = score_table(model, rule)
    sel = [np.zeros(len(v)) for v in model.values]
    insp = np.zeros(model.n)
    atoms = np.full(model.n, -1, dtype=np.int64)
    selected = np.zeros(model.n, dtype=bool)

    def walk(prob: float, count: int):
        if count >= model.capacity:
            return
        i, action = _decide(model, table, atoms, selected)
        if i is None:
            return
        if action == "select":
            selected[i] = True
            sel[i][atoms[i]] += prob
            walk(prob, count + 1)
            selected[i] = False
            return
        insp[i] += prob
        for a, p in enumerate(model.probs[i]):
            if p <= 0:
                continue
            atoms[i] = a
            walk(prob * p, count)
        atoms[i] = -1

    walk(1.0, 0)
    return PolicyEvaluation(tuple(sel), insp)


def sample_atoms(model: SearchModel, trials: int, seed: int) -> np.ndarray:
    """Realized atom index per (trial, box); column i depends only on (seed, trial, i)."""
    rng = np.random.default_rng(seed)
    u = rng.random((trials, model.n))
    atoms = np.empty((trials, model.n), dtype=np.int64)
    for i, p in enumerate(model.probs):
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        atoms[:, i] = np.minimum(np.searchsorted(cdf, u[:, i], side="right"), len(p) - 1)
    return atoms


def evaluate_mc(model: SearchModel, rule: TieBreakRule, trials: int, seed: int,
                atoms: np.ndarray | None = None) -> PolicyEvaluation:
    """Vectorized Monte Carlo run of the index policy across trials."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    table = score_table(model, rule)
    if atoms is None:
        atoms = sample_atoms(model, trials, seed)
    T, n = atoms.shape
    tol = model.tol
    sigma = model.sigma
    width = max(len(v) for v in model.values)
    adj = np.full((n, width), -INF)
    opened_rank = np.zeros((n, width), dtype=np.int64)
    for i in range(n):
        adj[i, :len(model.values[i])] = model.values[i]
        opened_rank[i, :len(model.values[i])] = table.opened[i]
    real_vals = adj[np.arange(n)[None, :], atoms]
    real_rank = opened_rank[np.arange(n)[None, :], atoms]
    zero_cost = model.costs == 0
    base = n + 2
    prio = model.priority.astype(np.int64)

    opened = np.zeros((T, n), dtype=bool)
    selected = np.zeros((T, n), dtype=bool)
    count = np.zeros(T, dtype=np.int64)
    active = np.ones(T, dtype=bool)
    rows = np.arange(T)
    for _ in range(2 * n + 1):
        if not active.any():
            break
        opt = np.where(opened, real_vals, sigma[None, :])
        opt = np.where(selected, -INF, opt)
        o_max = np.maximum(opt.max(axis=1), 0.0)
        thresh = o_max - tol
        tied = (opt >= thresh[:, None]) & ~selected
        below = ~opened & ~selected & ~tied & zero_cost[None, :]
        rank = np.where(opened, real_rank, np.where(tied, table.unopened[None, :], table.unopened_below[None, :]))
        key = np.where(tied | below, rank * base + prio[None, :], -1)
        out_ok = 0.0 >= thresh
        best = key.argmax(axis=1)
        best_key = key[rows, best]
        out_key = np.where(out_ok, table.outside * base + 0, -1)
        stop = (best_key < 0) | (out_key > best_key)
        act = active & ~stop
        active &= ~stop
        idx = rows[act]
        j = best[act]
        was_open = opened[idx, j]
        sel_rows, sel_cols = idx[was_open], j[was_open]
        selected[sel_rows, sel_cols] = True
        count[sel_rows] += 1
        opened[idx[~was_open], j[~was_open]] = True
        active &= count < model.capacity
    sel_atom = []
    for i in range(n):
        m = len(model.values[i])
        sel_atom.append(np.bincount(atoms[selected[:, i], i], minlength=m)[:m] / T)
    return PolicyEvaluation(
        tuple(sel_atom),
        opened.mean(axis=0),
        trials=T,
        trial_atoms=atoms,
        trial_selected=selected,
        trial_inspected=opened.astype(float),
    )


def _summary(model: SearchModel, ev: PolicyEvaluation) -> OutcomeSummary:
    u, se = ev.utility(model)
    sel = {bid: float(ev.selection[i]) for i, bid in enumerate(model.ids)}
    insp = {bid: float(ev.insp[i]) for i, bid in enumerate(model.ids)}
    if ev.exact:
        return OutcomeSummary(sel, insp, u)
    T = ev.trials
    s_se = {bid: float(np.sqrt(max(p * (1 - p), 0.0) / max(T - 1, 1))) for bid, p in sel.items()}
    i_se = {bid: float(np.sqrt(max(p * (1 - p), 0.0) / max(T - 1, 1))) for bid, p in insp.items()}
    return OutcomeSummary(sel, insp, u, se, s_se, i_se)


def expected_outcome_exact(instance, tie: TieBreakRule | None = None, cap: int = DEFAULT_ENUM_CAP,
                           tol: float = TIE_TOL) -> OutcomeSummary:
    model = _model_of(instance, tol)
    return _summary(model, evaluate_exact(model, tie or TieBreakRule(), cap))


def expected_outcome_mc(instance, tie: TieBreakRule | None, trials: int, seed: int,
                        tol: float = TIE_TOL) -> OutcomeSummary:
    model = _model_of(instance, tol)
    return _summary(model, evaluate_mc(model, tie or TieBreakRule(), trials, seed))


def realization_from_atoms(model: SearchModel, atoms: Sequence[int]) -> Realization:
    return Realization({bid: float(model.base_values[i][atoms[i]]) for i, bid in enumerate(model.ids)})


# ---------------------------------------------------------------------------
# brute force


def brute_force_optimal_value(instance: PandoraInstance, cap: int = 2_000_000) -> float:
    """Optimal expected utility over all adaptive policies by backward induction.

    State per box: -1 unopened, -2 selected (or discarded), a >= 0 opened at atom a.
    """
    n = instance.n
    k = instance.capacity
    vals = [b.dist.support for b in instance.boxes]
    probs = [b.dist.probs for b in instance.boxes]
    costs = [b.cost for b in instance.boxes]
    size = math.prod(len(v) + 2 for v in vals)
    if size > cap:
        raise CapExceededError(f"state space {size} exceeds cap {cap}")

    @functools.lru_cache(maxsize=None)
    def value(state: tuple[int, ...], count: int) -> float:
        if count >= k:
            return 0.0
        best = 0.0
        for i, s in enumerate(state):
            if s == -2:
                continue
            if s >= 0:
                nxt = state[:i] + (-2,) + state[i + 1:]
                best = max(best, vals[i][s] + value(nxt, count + 1))
            else:
                total = -costs[i]
                for a, p in enumerate(probs[i]):
                    if p > 0:
                        total += p * value(state[:i] + (a,) + state[i + 1:], count)
                best = max(best, total)
        return best

    out = value(tuple([-1] * n), 0)
    value.cache_clear()
    return out
