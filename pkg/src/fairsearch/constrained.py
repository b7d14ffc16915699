"""Pandora's box under ex-ante affine constraints.

A constraint reads  E[sum_i theta^S_i(v_i) A_i + theta^I_i I_i] (= or <=) b,
its slack is  b - E[...].  Shifting values by -lambda*theta^S and costs by
+lambda*E[theta^I] turns the Lagrangian into an ordinary Pandora instance;
the extreme tie-breaking rules pick the adjusted-optimal policies with
minimum and maximum slack, and RDIP mixes them to hit zero slack.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .pandora import (
    DEFAULT_ENUM_CAP,
    INF,
    TIE_TOL,
    Candidate,
    PandoraInstance,
    PolicyEvaluation,
    SearchModel,
    TieBreakRule,
    TieContext,
    evaluate_exact,
    evaluate_mc,
    sample_atoms,
)

SLACK_TOL = 1e-11


class InfeasibleConstraintError(RuntimeError):
    pass


Coef = float | Mapping[float, float]


def _lookup(coef: Coef, value: float) -> float:
    if not isinstance(coef, Mapping):
        return float(coef)
    if value in coef:
        return float(coef[value])
    for key, c in coef.items():
        if abs(float(key) - value) <= 1e-12 * max(1.0, abs(value)):
            return float(c)
    raise KeyError(f"coefficient map has no entry for value {value!r}")


@dataclass(frozen=True)
class AffineConstraint:
    """theta_S / theta_I map box id to a scalar or to a value -> coefficient map.

    Missing ids have coefficient 0.  sense "leq" means E[lhs] <= b, i.e.
    slack >= 0.
    """

    theta_S: Mapping[int, Coef] = field(default_factory=dict)
    theta_I: Mapping[int, Coef] = field(default_factory=dict)
    b: float = 0.0
    sense: str = "eq"
    name: str = ""

    def __post_init__(self):
        if self.sense not in ("eq", "leq"):
            raise ValueError(f"sense must be 'eq' or 'leq', got {self.sense!r}")
        object.__setattr__(self, "_cache", {})
        if abs(self.b) > 1:
            warnings.warn(f"constraint {self.name or ''} has |b| = {abs(self.b)} > 1 (not normalized)",
                          stacklevel=2)

    __hash__ = object.__hash__

    @property
    def value_specific(self) -> bool:
        return any(isinstance(c, Mapping) for c in self.theta_S.values())

    def with_sense(self, sense: str) -> "AffineConstraint":
        return AffineConstraint(dict(self.theta_S), dict(self.theta_I), self.b, sense, self.name)

    def validate(self, instance: PandoraInstance) -> None:
        for coefs in (self.theta_S, self.theta_I):
            for bid, c in coefs.items():
                box = instance.box(bid)
                if isinstance(c, Mapping):
                    for v in box.dist.support:
                        _lookup(c, v)

    def _coefficients(self, model: SearchModel) -> tuple[list[np.ndarray], np.ndarray]:
        # keyed on the base support tuple, which every adjusted model shares
        key = id(model.base_values)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is model.base_values and hit[1] == model.ids:
            return hit[2], hit[3]
        sel = []
        insp = np.zeros(model.n)
        for i, bid in enumerate(model.ids):
            c = self.theta_S.get(bid, 0.0)
            if isinstance(c, Mapping):
                sel.append(np.array([_lookup(c, v) for v in model.base_values[i]]))
            else:
                sel.append(np.full(len(model.base_values[i]), float(c)))
            c = self.theta_I.get(bid, 0.0)
            if isinstance(c, Mapping):
                insp[i] = math.fsum(p * _lookup(c, v) for v, p in zip(model.base_values[i], model.probs[i]))
            else:
                insp[i] = float(c)
        self._cache[key] = (model.base_values, model.ids, sel, insp)
        return sel, insp

    def selection_coefficients(self, model: SearchModel) -> list[np.ndarray]:
        return self._coefficients(model)[0]

    def inspection_coefficients(self, model: SearchModel) -> np.ndarray:
        """E[theta^I_i] per box."""
        return self._coefficients(model)[1]

    def scale(self, instance: PandoraInstance) -> float:
        """Smallest nonzero coefficient magnitude, or 0 for a vacuous constraint."""
        model = instance.model()
        mags = [abs(x) for row in self.selection_coefficients(model) for x in row if x != 0]
        mags += [abs(x) for x in self.inspection_coefficients(model) if x != 0]
        return min(mags) if mags else 0.0


def parity_selection(x_ids: Sequence[int], y_ids: Sequence[int], name: str = "parity-selection") -> AffineConstraint:
    """E[A_X] - E[A_Y] = 0."""
    th = {i: 1.0 for i in x_ids} | {i: -1.0 for i in y_ids}
    return AffineConstraint(theta_S=th, b=0.0, sense="eq", name=name)


def parity_inspection(x_ids: Sequence[int], y_ids: Sequence[int], name: str = "parity-inspection") -> AffineConstraint:
    th = {i: 1.0 for i in x_ids} | {i: -1.0 for i in y_ids}
    return AffineConstraint(theta_I=th, b=0.0, sense="eq", name=name)


def quota(x_ids: Sequence[int], y_ids: Sequence[int], theta: float, stage: str = "selection",
          name: str = "") -> AffineConstraint:
    """Group Y holds at least a theta share: theta*E[N_X] + (theta-1)*E[N_Y] <= 0."""
    th = {i: float(theta) for i in x_ids} | {i: float(theta) - 1.0 for i in y_ids}
    kw = {"theta_S": th} if stage == "selection" else {"theta_I": th}
    return AffineConstraint(**kw, b=0.0, sense="leq", name=name or f"quota-{stage}")


def budget(weights: Mapping[int, float], bound: float, stage: str = "inspection",
           name: str = "") -> AffineConstraint:
    th = {i: float(w) for i, w in weights.items()}
    kw = {"theta_S": th} if stage == "selection" else {"theta_I": th}
    return AffineConstraint(**kw, b=float(bound), sense="leq", name=name or f"budget-{stage}")


# ---------------------------------------------------------------------------
# dual adjustment


@dataclass(frozen=True, eq=False)
class DualAdjustedInstance:
    base: PandoraInstance
    constraints: tuple[AffineConstraint, ...]
    lambdas: tuple[float, ...]

    @property
    def lam(self) -> float:
        return self.lambdas[0]

    def model(self, tol: float = TIE_TOL) -> SearchModel:
        base = self.base.model(tol)
        values = [v.copy() for v in base.values]
        costs = base.costs.copy()
        for lam, con in zip(self.lambdas, self.constraints):
            if lam == 0:
                continue
            for i, th in enumerate(con.selection_coefficients(base)):
                values[i] = values[i] - lam * th
            costs = costs + lam * con.inspection_coefficients(base)
        return SearchModel(
            ids=base.ids,
            values=tuple(values),
            probs=base.probs,
            costs=costs,
            base_values=base.values,
            base_costs=base.costs,
            capacity=base.capacity,
            tol=tol,
        )

    def adjusted_supports(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per box: adjusted values and probabilities re-sorted ascending."""
        m = self.model()
        out = []
        for v, p in zip(m.values, m.probs):
            order = np.argsort(v, kind="stable")
            out.append((v[order], p[order]))
        return out


def adjust_instance(instance: PandoraInstance, constraint: AffineConstraint | Sequence[AffineConstraint],
                    lam: float | Sequence[float]) -> DualAdjustedInstance:
    if isinstance(constraint, AffineConstraint):
        return DualAdjustedInstance(instance, (constraint,), (float(lam),))
    return DualAdjustedInstance(instance, tuple(constraint), tuple(float(x) for x in lam))


# ---------------------------------------------------------------------------
# tie-breaking scores


def _prob_above(model: SearchModel, i: int, o_max: float) -> tuple[float, float]:
    v, p = model.values[i], model.probs[i]
    tol = model.tol
    gt = float(p[v > o_max + tol].sum())
    ge = float(p[v >= o_max - tol].sum())
    return gt, ge


def extreme_scores(context: TieContext, constraint: AffineConstraint, sign: int) -> list[float]:
    """Scores of the negative (sign=-1) or positive (sign=+1) extreme rule.

    Needs scalar theta^S per box; value-specific constraints go through
    refined_extreme_scores.
    """
    model = context.model
    th_s = constraint.selection_coefficients(model)
    th_i = constraint.inspection_coefficients(model)
    out = []
    for cand in context.candidates:
        if cand.index is None:
            out.append(0.0)
            continue
        i = cand.index
        row = th_s[i]
        if np.ptp(row) > 0:
            raise ValueError("extreme_scores needs scalar selection coefficients")
        a, b = float(row[0]), float(th_i[i])
        if sign > 0:
            a, b = -a, -b
        if cand.opened:
            out.append(a)
            continue
        if model.costs[i] < 0:
            out.append(INF)
            continue
        gt, ge = _prob_above(model, i, context.o_max)
        # in max orientation both rules split on the sign of b; with b = 0 the
        # score is a whenever some mass reaches the threshold
        if b > 0:
            out.append(a + b / gt if gt > 0 else INF)
        elif b == 0:
            out.append(a if ge > 0 else -INF)
        else:
            out.append(a + b / ge if ge > 0 else -INF)
    return out


def _lex_unopened(values: np.ndarray, probs: np.ndarray, o_max: float,
                  levels: Sequence[tuple[np.ndarray, float]], tol: float) -> tuple[float, ...]:
    """Lexicographic refined score of an unopened nonnegative-cost box.

    Level k maximizes over nested events E_l (values above the threshold plus
    the top-l tied values by a_k) the quantity E[a_k | E_l] + b_k / P(E_l);
    tied values strictly above the level score join the "above" set for the
    next level and those strictly below drop out.
    """
    above = (values > o_max + tol) & (probs > 0)
    tied = (np.abs(values - o_max) <= tol) & (probs > 0)
    scores = []
    saturated = False
    for a, b in levels:
        if saturated:
            scores.append(INF)
            continue
        p0 = float(probs[above].sum())
        if p0 <= 0 and b > 0:
            scores.append(INF)
            saturated = True
            continue
        tied_idx = np.flatnonzero(tied)
        tied_idx = tied_idx[np.argsort(-a[tied_idx], kind="stable")]
        mass = p0
        weighted = float((probs[above] * a[above]).sum())
        best = -INF
        if mass > 0:
            best = weighted / mass + b / mass
        for j in tied_idx:
            mass += probs[j]
            weighted += probs[j] * a[j]
            best = max(best, weighted / mass + b / mass)
        if best == -INF:
            scores.extend([-INF] * (len(levels) - len(scores)))
            break
        scores.append(best)
        up = tied & (a > best + tol)
        still = tied & (np.abs(a - best) <= tol)
        above = above | up
        tied = still
    return tuple(scores)


def _levels_for(model: SearchModel, constraint: AffineConstraint, sign: int) -> tuple[list[np.ndarray], np.ndarray]:
    th_s = constraint.selection_coefficients(model)
    th_i = constraint.inspection_coefficients(model)
    if sign > 0:
        return [-x for x in th_s], -th_i
    return th_s, th_i


def refined_extreme_scores(context: TieContext, constraint: AffineConstraint, sign: int) -> list[float]:
    model = context.model
    a_rows, b_vec = _levels_for(model, constraint, sign)
    out = []
    for cand in context.candidates:
        if cand.index is None:
            out.append(0.0)
        elif cand.opened:
            out.append(float(a_rows[cand.index][cand.atom]))
        elif model.costs[cand.index] < 0:
            out.append(INF)
        else:
            i = cand.index
            out.append(_lex_unopened(model.values[i], model.probs[i], context.o_max,
                                     [(a_rows[i], float(b_vec[i]))], model.tol)[0])
    return out


def lex_scores(context: TieContext, levels: Sequence[tuple[Sequence[np.ndarray], np.ndarray]]) -> list[tuple]:
    """Multi-level scores; each level is (per-box atom coefficients, per-box constant) in max orientation."""
    model = context.model
    out = []
    for cand in context.candidates:
        if cand.index is None:
            out.append(tuple(0.0 for _ in levels))
        elif cand.opened:
            out.append(tuple(float(a[cand.index][cand.atom]) for a, _ in levels))
        elif model.costs[cand.index] < 0:
            out.append(tuple(INF for _ in levels))
        else:
            i = cand.index
            out.append(_lex_unopened(model.values[i], model.probs[i], context.o_max,
                                     [(a[i], float(b[i])) for a, b in levels], model.tol))
    return out


def combined_levels(model: SearchModel, constraints: Sequence[AffineConstraint],
                    omegas: Sequence[Sequence[float]]) -> list[tuple[list[np.ndarray], np.ndarray]]:
    """Levels of the positive-extreme rule for theta_w = sum_j w_j theta_j, one per direction."""
    s_rows = [c.selection_coefficients(model) for c in constraints]
    i_rows = [c.inspection_coefficients(model) for c in constraints]
    levels = []
    for w in omegas:
        a = [-sum(w[j] * s_rows[j][i] for j in range(len(constraints))) for i in range(model.n)]
        b = -sum(w[j] * i_rows[j] for j in range(len(constraints)))
        levels.append(([np.asarray(x, dtype=float) for x in a], np.asarray(b, dtype=float)))
    return levels


def _contexts(model: SearchModel):
    """Synthetic contexts that cover every score a rule can be asked for."""
    sig = model.sigma
    tied = [TieContext(model, float(sig[i]), (Candidate(i),)) for i in range(model.n)]
    below = [TieContext(model, INF, (Candidate(i),)) for i in range(model.n)]
    opened = [
        TieContext(model, 0.0, tuple(Candidate(i, True, a) for a in range(len(model.values[i]))))
        for i in range(model.n)
    ]
    return tied, below, opened


def rule_score_keys(model: SearchModel, rule: TieBreakRule):
    """Tuple-valued score keys for every candidate kind (see pandora.score_table)."""
    tied, below, opened = _contexts(model)
    if rule.kind in ("negative_extreme", "positive_extreme"):
        (con,) = rule.constraints
        sign = -1 if rule.kind == "negative_extreme" else 1
        fn = refined_extreme_scores if con.value_specific else extreme_scores

        def keys(ctx):
            return [(s,) for s in fn(ctx, con, sign)]

        n_levels = 1
    elif rule.kind == "perturbation":
        levels = combined_levels(model, rule.constraints, rule.omegas)

        def keys(ctx):
            return lex_scores(ctx, levels)

        n_levels = len(levels)
    else:
        raise ValueError(f"no score keys for rule kind {rule.kind!r}")
    unopened = [keys(c)[0] for c in tied]
    unopened_below = [keys(c)[0] for c in below]
    opened_keys = [keys(c) for c in opened]
    return unopened, unopened_below, opened_keys, tuple(0.0 for _ in range(n_levels))


# ---------------------------------------------------------------------------
# evaluation


class Evaluator:
    """Evaluates a deterministic adjusted policy: exact enumeration or seeded MC."""

    def __init__(self, trials: int | None = None, seed: int = 0, cap: int = DEFAULT_ENUM_CAP,
                 tol: float = TIE_TOL):
        self.trials = trials
        self.seed = seed
        self.cap = cap
        self.tol = tol
        self._atoms = None

    @property
    def exact(self) -> bool:
        return self.trials is None

    @property
    def method(self) -> str:
        return "exact" if self.exact else f"mc({self.trials})"

    def reseeded(self, seed: int) -> "Evaluator":
        return Evaluator(self.trials, seed, self.cap, self.tol)

    def __call__(self, model: SearchModel, rule: TieBreakRule) -> PolicyEvaluation:
        if self.exact:
            return evaluate_exact(model, rule, self.cap)
        # common random numbers across every call of this evaluator
        if self._atoms is None or self._atoms.shape[1] != model.n:
            self._atoms = sample_atoms(model, self.trials, self.seed)
        return evaluate_mc(model, rule, self.trials, self.seed, atoms=self._atoms)


EXACT = Evaluator()


def slack_value(ev: PolicyEvaluation, model: SearchModel, constraint: AffineConstraint) -> tuple[float, float]:
    lhs, se = ev.linear(constraint.selection_coefficients(model), constraint.inspection_coefficients(model))
    return constraint.b - lhs, se


@dataclass(frozen=True)
class DualPoint:
    lam: float
    G: float
    u_minus: float
    d_minus: float
    u_plus: float
    d_plus: float
    se_minus: float = 0.0
    se_plus: float = 0.0


def dual_value_and_slacks(instance: PandoraInstance, constraint: AffineConstraint, lam: float,
                          evaluator: Evaluator = EXACT) -> DualPoint:
    adj = adjust_instance(instance, constraint, lam)
    model = adj.model(evaluator.tol)
    ev_m = evaluator(model, TieBreakRule.negative(constraint))
    ev_p = evaluator(model, TieBreakRule.positive(constraint))
    u_m, _ = ev_m.utility(model)
    u_p, _ = ev_p.utility(model)
    d_m, se_m = slack_value(ev_m, model, constraint)
    d_p, se_p = slack_value(ev_p, model, constraint)
    return DualPoint(float(lam), u_m + lam * d_m, u_m, d_m, u_p, d_p, se_m, se_p)


def dual_value(instance: PandoraInstance, constraint: AffineConstraint, lam: float,
               evaluator: Evaluator = EXACT) -> float:
    return dual_value_and_slacks(instance, constraint, lam, evaluator).G


# ---------------------------------------------------------------------------
# feasibility and binding


def check_feasibility(instance: PandoraInstance, constraint: AffineConstraint) -> bool:
    """Non-emptiness of the relaxed selection/inspection polytope.

    Variables x_{ia} (select box i with atom a) and y_i (inspect i) with
    x_{ia} <= p_{ia} y_i, sum x <= k, y in [0,1].
    """
    model = instance.model()
    sizes = [len(v) for v in model.values]
    nx = sum(sizes)
    nv = nx + model.n
    th_s = constraint.selection_coefficients(model)
    th_i = constraint.inspection_coefficients(model)
    row = np.concatenate([np.concatenate(th_s), th_i])
    a_ub, b_ub = [], []
    pos = 0
    for i, m in enumerate(sizes):
        for a in range(m):
            r = np.zeros(nv)
            r[pos + a] = 1.0
            r[nx + i] = -model.probs[i][a]
            a_ub.append(r)
            b_ub.append(0.0)
        pos += m
    cap_row = np.zeros(nv)
    cap_row[:nx] = 1.0
    a_ub.append(cap_row)
    b_ub.append(float(model.capacity))
    kw = {}
    if constraint.sense == "eq":
        kw = {"A_eq": row[None, :], "b_eq": [constraint.b]}
    else:
        a_ub.append(row)
        b_ub.append(constraint.b)
    res = linprog(np.zeros(nv), A_ub=np.array(a_ub), b_ub=b_ub, bounds=[(0, 1)] * nv, method="highs", **kw)
    return res.status == 0


def check_binding(instance: PandoraInstance, constraint: AffineConstraint,
                  evaluator: Evaluator = EXACT) -> str:
    """'drop_constraint' if some unconstrained-optimal policy already satisfies it, else 'make_equality'."""
    if constraint.sense != "leq":
        raise ValueError("check_binding expects a leq constraint")
    point = dual_value_and_slacks(instance, constraint, 0.0, evaluator)
    return "drop_constraint" if point.d_plus >= -SLACK_TOL else "make_equality"


# ---------------------------------------------------------------------------
# dual minimization


def lambda_bound(instance: PandoraInstance, constraint: AffineConstraint) -> float:
    vals = [v for b in instance.boxes for v in b.dist.support]
    # the outside option sits at 0, so it belongs to the value range
    spread = max(vals + [0.0]) - min(vals + [0.0]) + max(abs(b.cost) for b in instance.boxes) + 1.0
    scale = constraint.scale(instance)
    return spread / scale if scale > 0 else 0.0


@dataclass(frozen=True)
class DualResult:
    lambda_star: float
    lo: DualPoint
    hi: DualPoint
    probes: int

    @property
    def exact_kink(self) -> bool:
        return self.lo is self.hi


def _brackets(p: DualPoint, tol: float) -> bool:
    return p.d_minus <= tol and p.d_plus >= -tol


def minimize_dual_full(instance: PandoraInstance, constraint: AffineConstraint, tol: float = 1e-9,
                       evaluator: Evaluator = EXACT, max_probes: int = 400) -> DualResult:
    if constraint.sense != "eq":
        raise ValueError("minimize_dual needs an equality constraint (run check_binding first)")
    stol = SLACK_TOL if evaluator.exact else 0.0
    probes = 0

    def probe(lam):
        nonlocal probes
        probes += 1
        return dual_value_and_slacks(instance, constraint, lam, evaluator)

    p0 = probe(0.0)
    if _brackets(p0, stol):
        return DualResult(0.0, p0, p0, probes)
    if evaluator.exact and not check_feasibility(instance, constraint):
        raise InfeasibleConstraintError(f"constraint {constraint.name!r} has an empty feasible polytope")
    big = lambda_bound(instance, constraint)
    if big == 0.0:
        raise InfeasibleConstraintError(f"constraint {constraint.name!r} is vacuous but violated")
    direction = 1.0 if p0.d_plus < 0 else -1.0
    near = p0
    far = None
    for _ in range(60):
        q = probe(direction * big)
        if _brackets(q, stol):
            return DualResult(q.lam, q, q, probes)
        if (direction > 0 and q.d_minus > 0) or (direction < 0 and q.d_plus < 0):
            far = q
            break
        near = q
        big *= 2.0
    if far is None:
        raise InfeasibleConstraintError(f"no sign change of the dual subgradient for {constraint.name!r}")
    lo, hi = (near, far) if direction > 0 else (far, near)
    bisect_next = False
    while hi.lam - lo.lam > tol and probes < max_probes:
        width = hi.lam - lo.lam
        x = None
        if not bisect_next:
            denom = lo.d_plus - hi.d_minus
            if denom < 0:
                x = (hi.u_minus - lo.u_plus) / denom
        if x is None or not lo.lam < x < hi.lam:
            x = 0.5 * (lo.lam + hi.lam)
        q = probe(x)
        if _brackets(q, stol):
            return DualResult(q.lam, q, q, probes)
        if q.d_plus < 0:
            lo = q
        else:
            hi = q
        bisect_next = (hi.lam - lo.lam) > 0.5 * width
    return DualResult(0.5 * (lo.lam + hi.lam), lo, hi, probes)


def minimize_dual(instance: PandoraInstance, constraint: AffineConstraint, tol: float = 1e-9,
                  evaluator: Evaluator = EXACT) -> float:
    return minimize_dual_full(instance, constraint, tol, evaluator).lambda_star


# ---------------------------------------------------------------------------
# randomized policies


@dataclass(frozen=True, eq=False)
class PolicyAtom:
    adjusted: DualAdjustedInstance
    rule: TieBreakRule
    weight: float


@dataclass(frozen=True, eq=False)
class RandomizedIndexPolicy:
    atoms: tuple[PolicyAtom, ...]
    lambda_star: tuple[float, ...] = ()

    def __post_init__(self):
        w = math.fsum(a.weight for a in self.atoms)
        if abs(w - 1.0) > 1e-12 or any(a.weight < 0 for a in self.atoms):
            raise ValueError(f"mixture weights must be nonnegative and sum to 1, got {w!r}")

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(a.weight for a in self.atoms)

    def evaluations(self, evaluator: Evaluator = EXACT) -> list[tuple[SearchModel, PolicyEvaluation]]:
        out = []
        for j, atom in enumerate(self.atoms):
            model = atom.adjusted.model(evaluator.tol)
            ev = evaluator if evaluator.exact else evaluator.reseeded(evaluator.seed + j)
            out.append((model, ev(model, atom.rule)))
        return out

    def _mix(self, stats: list[tuple[float, float]]) -> tuple[float, float]:
        mean = math.fsum(a.weight * s for a, (s, _) in zip(self.atoms, stats))
        se = math.sqrt(math.fsum((a.weight * e) ** 2 for a, (_, e) in zip(self.atoms, stats)))
        return mean, se

    def utility(self, evaluator: Evaluator = EXACT) -> tuple[float, float]:
        return self._mix([ev.utility(m) for m, ev in self.evaluations(evaluator)])

    def slack(self, constraint: AffineConstraint, evaluator: Evaluator = EXACT) -> tuple[float, float]:
        return self._mix([slack_value(ev, m, constraint) for m, ev in self.evaluations(evaluator)])

    def selection(self, evaluator: Evaluator = EXACT) -> np.ndarray:
        return sum(a.weight * ev.selection for a, (_, ev) in zip(self.atoms, self.evaluations(evaluator)))


@dataclass(frozen=True)
class SlackReport:
    slack: float
    method: str
    stderr: float = 0.0
    trials: int | None = None


def slack_of(policy: RandomizedIndexPolicy, instance: PandoraInstance, constraint: AffineConstraint,
             evaluator: Evaluator = EXACT) -> SlackReport:
    s, se = policy.slack(constraint, evaluator)
    return SlackReport(s, evaluator.method, se, evaluator.trials)


def mixing_weights(d_minus: float, d_plus: float) -> tuple[float, float]:
    """Weights (w_minus, w_plus) that zero the slack; a lone minus atom when both vanish."""
    gap = d_plus - d_minus
    if gap <= 0:
        return 1.0, 0.0
    w_minus = d_plus / gap
    return w_minus, 1.0 - w_minus


def solve_rdip(instance: PandoraInstance, constraint: AffineConstraint, tol: float = 1e-9,
               evaluator: Evaluator = EXACT) -> RandomizedIndexPolicy:
    constraint.validate(instance)
    if constraint.sense == "leq":
        if check_binding(instance, constraint, evaluator) == "drop_constraint":
            atom = PolicyAtom(adjust_instance(instance, constraint, 0.0), TieBreakRule.positive(constraint), 1.0)
            return RandomizedIndexPolicy((atom,), (0.0,))
        constraint = constraint.with_sense("eq")
    elif evaluator.exact and not check_feasibility(instance, constraint):
        raise InfeasibleConstraintError(f"constraint {constraint.name!r} has an empty feasible polytope")
    res = minimize_dual_full(instance, constraint, tol, evaluator)
    if res.exact_kink:
        p = res.lo
        w_m, w_p = mixing_weights(p.d_minus, p.d_plus)
        adj = adjust_instance(instance, constraint, p.lam)
        atoms = [PolicyAtom(adj, TieBreakRule.negative(constraint), w_m)]
        if w_p > 0:
            atoms.append(PolicyAtom(adj, TieBreakRule.positive(constraint), w_p))
        return RandomizedIndexPolicy(tuple(atoms), (p.lam,))
    # interval termination: mix the right policy below and the left policy above the kink
    lo, hi = res.lo, res.hi
    gap = hi.d_minus - lo.d_plus
    w_hi = -lo.d_plus / gap
    atoms = (
        PolicyAtom(adjust_instance(instance, constraint, lo.lam), TieBreakRule.positive(constraint), 1.0 - w_hi),
        PolicyAtom(adjust_instance(instance, constraint, hi.lam), TieBreakRule.negative(constraint), w_hi),
    )
    return RandomizedIndexPolicy(atoms, (res.lambda_star,))
