"""Primal-dual learning for JMS under affine and convex ex-ante constraints.

Affine rows read theta . p <= b and convex rows F(p) <= 0, where p is the
vector of expected state visits.  The dual player runs projected gradient
steps on (lambda, beta) in an outer loop and on the Fenchel duals mu in an
inner loop; the primal player best-responds with the index policy of the
adjusted reward R - sum lambda theta - sum beta mu.  The returned policy is
the uniform mixture of every best response.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .jms import (
    CapExceededError,
    DEFAULT_JOINT_CAP,
    JmsInstance,
    INDEX_TOL,
    PLAY_TOL,
    IndexTable,
    index_table,
    visit_vector_exact,
    visit_vector_mc,
)

Vec = np.ndarray


# ---------------------------------------------------------------------------
# constraints


@dataclass(frozen=True, eq=False)
class JmsAffineConstraint:
    """theta . p <= b (sense "leq") or theta . p = b (sense "eq")."""

    theta: np.ndarray
    b: float = 0.0
    sense: str = "leq"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.sense not in ("eq", "leq"):
            raise ValueError(f"sense must be 'eq' or 'leq', got {self.sense!r}")

    def violation(self, p: Vec) -> float:
        return float(self.theta @ p - self.b)

    def rows(self) -> list["JmsAffineConstraint"]:
        if self.sense == "leq":
            return [self]
        return [JmsAffineConstraint(self.theta, self.b, "leq", self.name + "[<=]"),
                JmsAffineConstraint(-self.theta, -self.b, "leq", self.name + "[>=]")]


@dataclass(frozen=True, eq=False)
class ConvexConstraintSpec:
    """F(p) <= 0 with closed-form gradient and Fenchel conjugate.

    H_mu bounds |grad F| on [0, H_p]^d; L_p bounds |grad F*| on [-H_mu, H_mu]^d.
    """

    F: Callable[[Vec], float]
    grad: Callable[[Vec], Vec]
    conjugate: Callable[[Vec], float]
    conjugate_grad: Callable[[Vec], Vec]
    H_mu: float
    L_p: float
    name: str = ""


def quadratic_constraint(center: Sequence[float], alpha: float = 1.0, offset: float = 0.0, H_p: float = 1.0,
                         name: str = "quadratic") -> ConvexConstraintSpec:
    """F(p) = alpha/2 |p - c|^2 + offset."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    c = np.asarray(center, dtype=float)
    H_mu = float(alpha * np.max(np.maximum(np.abs(c), np.abs(H_p - c)))) if len(c) else 0.0
    L_p = float(np.max(np.abs(c))) + H_mu / alpha if len(c) else 0.0

    def F(p):
        p = np.asarray(p, dtype=float)
        return float(0.5 * alpha * np.dot(p - c, p - c) + offset)

    def grad(p):
        return alpha * (np.asarray(p, dtype=float) - c)

    def conj(mu):
        mu = np.asarray(mu, dtype=float)
        return float(mu @ c + mu @ mu / (2 * alpha) - offset)

    def conj_grad(mu):
        return c + np.asarray(mu, dtype=float) / alpha

    return ConvexConstraintSpec(F, grad, conj, conj_grad, H_mu, L_p, name)


def adjusted_reward(R: Sequence[float], lambdas: Sequence[float] = (), thetas: Sequence[Vec] = (),
                    betas: Sequence[float] = (), mus: Sequence[Vec] = ()) -> np.ndarray:
    out = np.array(R, dtype=float)
    for lam, th in zip(lambdas, thetas):
        out = out - lam * np.asarray(th, dtype=float)
    for beta, mu in zip(betas, mus):
        out = out - beta * np.asarray(mu, dtype=float)
    return out


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class GrdipParams:
    K_I: int
    K_O: int
    gamma_I: float
    gamma_O_lambda: float
    gamma_O_beta: float
    H_lambda: float
    H_beta: float
    H_mu: float = 0.0
    H_p: float = 1.0
    L_p: float = 0.0
    d: int = 1
    m_a: int = 0
    m_c: int = 0
    epsilon: float = 0.1
    delta: float = 0.1

    def __post_init__(self):
        for name in ("K_I", "K_O", "gamma_I", "gamma_O_lambda", "gamma_O_beta", "H_lambda", "H_beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def with_iterations(self, K_O: int | None = None, K_I: int | None = None) -> "GrdipParams":
        """Override iteration counts; step sizes follow the same formulas."""
        K_O = self.K_O if K_O is None else int(K_O)
        K_I = self.K_I if K_I is None else int(K_I)
        return replace(self, K_O=K_O, K_I=K_I, **_steps(self.H_lambda, self.H_beta, self.H_mu, self.H_p,
                                                          self.L_p, K_I, K_O))

    def epsilons(self) -> tuple[float, float, float]:
        e1 = 2 * self.d * self.H_mu * (self.H_p + self.L_p) * self.H_beta * self.m_c / math.sqrt(self.K_I)
        e2 = self.H_beta * self.m_c / math.sqrt(self.K_O)
        e3 = 2 * self.H_lambda * self.m_a / math.sqrt(self.K_O)
        return e1, e2, e3


def _steps(H_lambda, H_beta, H_mu, H_p, L_p, K_I, K_O) -> dict:
    if H_mu > 0:
        gamma_I = 2 * H_mu / ((H_p + L_p) * H_beta) / math.sqrt(K_I)
    else:
        gamma_I = 1.0  # no convex rows: mu never moves
    return dict(gamma_I=gamma_I, gamma_O_lambda=H_lambda / (2 * math.sqrt(K_O)),
                gamma_O_beta=H_beta / math.sqrt(K_O))


def default_params(epsilon: float, delta: float, d: int, H_p: float, H_mu: float = 0.0, L_p: float = 0.0,
                   m_a: int = 0, m_c: int = 0) -> GrdipParams:
    if epsilon <= 0 or delta <= 0:
        raise ValueError("epsilon and delta must be positive")
    H = (d * H_p + epsilon) / delta
    if m_c == 0:
        K_I = 1
    else:
        K_I = math.ceil((6 * d * H_mu * (H_p + L_p) * H * m_c / epsilon) ** 2)
    K_O = max(1, math.ceil((3 * max(2 * H * m_a, H * m_c) / epsilon) ** 2))
    return GrdipParams(K_I=K_I, K_O=K_O, H_lambda=H, H_beta=H, H_mu=H_mu, H_p=H_p, L_p=L_p, d=d, m_a=m_a,
                       m_c=m_c, epsilon=epsilon, delta=delta, **_steps(H, H, H_mu, H_p, L_p, K_I, K_O))


def params_for(instance: JmsInstance, affine: Sequence[JmsAffineConstraint], convex: Sequence[ConvexConstraintSpec],
               epsilon: float, delta: float) -> GrdipParams:
    rows = [r for a in affine for r in a.rows()]
    H_mu = max([c.H_mu for c in convex] + [0.0])
    L_p = max([c.L_p for c in convex] + [0.0])
    return default_params(epsilon, delta, instance.d, instance.visit_bound(), H_mu, L_p, len(rows), len(convex))


# ---------------------------------------------------------------------------
# solver


@dataclass(frozen=True, eq=False)
class GrdipAtom:
    adjusted_reward: np.ndarray
    p: np.ndarray
    weight: float

    def policy(self, instance: JmsInstance) -> IndexTable:
        return index_table(instance.with_rewards(self.adjusted_reward))


@dataclass(frozen=True)
class Certificate:
    epsilon_1: float
    epsilon_2: float
    epsilon_3: float
    inner_gap: float  # mean over outer rounds of the inner approximate-equilibrium gap
    dual_bound: float  # smallest relaxed dual value seen; upper-bounds the constrained optimum
    duality_gap: float  # dual_bound - objective

    @property
    def budget(self) -> float:
        return self.epsilon_1 + self.epsilon_2 + self.epsilon_3


@dataclass(frozen=True, eq=False)
class GrdipSolution:
    atoms: tuple[GrdipAtom, ...]
    p_hat: np.ndarray
    objective: float
    affine_violation: tuple[float, ...]
    convex_value: tuple[float, ...]
    certificate: Certificate
    outer_iterations: int
    stopped_early: bool
    lambdas: np.ndarray
    betas: np.ndarray
    history: tuple[dict, ...] = field(repr=False, default=())
    visit_method: str = "exact"


@dataclass(frozen=True)
class FeasibilityReport:
    affine: tuple[float, ...]  # theta . p_hat - b
    convex: tuple[float, ...]  # F(p_hat)

    def max_violation(self) -> float:
        return max([0.0] + [abs(x) for x in self.affine] + list(self.convex))


def feasibility_report(solution: GrdipSolution, affine: Sequence[JmsAffineConstraint],
                       convex: Sequence[ConvexConstraintSpec]) -> FeasibilityReport:
    p = solution.p_hat
    return FeasibilityReport(tuple(a.violation(p) for a in affine), tuple(c.F(p) for c in convex))


class _BestResponse:
    def __init__(self, instance: JmsInstance, method: str, trials: int, seed: int, cap: int):
        self.instance = instance
        self.method = method
        self.trials = trials
        self.seed = seed
        self.cap = cap
        self.calls = 0
        self.used = "exact" if method in ("exact", "auto") else "mc"
        self._cache: dict[tuple, Vec] = {}

    def __call__(self, R_adj: Vec) -> Vec:
        inst = self.instance.with_rewards(R_adj)
        table = index_table(inst)
        self.calls += 1
        if self.used == "exact":
            # exact visits depend on the indices only through their order and sign
            key = _policy_key(table)
            hit = self._cache.get(key)
            if hit is not None:
                return hit
            try:
                p = visit_vector_exact(inst, table, cap=self.cap).p
                self._cache[key] = p
                return p
            except CapExceededError:
                if self.method == "exact":
                    raise
                self.used = "mc"
        return visit_vector_mc(inst, table, self.trials, self.seed + self.calls).p


def _policy_key(table: IndexTable) -> tuple:
    vals = np.concatenate(table.sigma)
    live = ~np.isnan(vals)
    v = vals[live]
    order = np.argsort(v, kind="stable")
    sv = v[order]
    step = np.ones(len(sv), dtype=np.int64)
    if len(sv) > 1:
        with np.errstate(invalid="ignore"):
            close = (sv[1:] == sv[:-1]) | (np.abs(sv[1:] - sv[:-1]) <= INDEX_TOL * np.maximum(1.0, np.abs(sv[1:])))
        step[1:] = ~close
    ranks = np.empty(len(v), dtype=np.int64)
    ranks[order] = np.cumsum(step)
    return tuple(ranks.tolist()), tuple((v > PLAY_TOL).tolist())


def _mc_trials(H_p: float, delta: float) -> int:
    # per-coordinate stderr <= delta/10 when visit counts have sd <= H_p
    return max(1000, math.ceil((10 * H_p / delta) ** 2))


def grdip_solve(instance: JmsInstance, affine: Sequence[JmsAffineConstraint] = (),
                convex: Sequence[ConvexConstraintSpec] = (), params: GrdipParams | None = None,
                visit_method: str = "auto", epsilon: float = 0.1, delta: float = 0.1, early_stop: bool = True,
                seed: int = 0, trials: int | None = None, cap: int = DEFAULT_JOINT_CAP,
                keep_history: bool = False) -> GrdipSolution:
    """Run the two-layer primal-dual loop.

    early_stop ends the outer loop once every measured violation is within
    delta and the best dual bound is within epsilon of the running objective.
    """
    affine = tuple(affine)
    convex = tuple(convex)
    rows = [r for a in affine for r in a.rows()]
    d = instance.d
    for r in rows:
        if r.theta.shape != (d,):
            raise ValueError(f"affine constraint {r.name!r} has dimension {r.theta.shape}, expected ({d},)")
    if params is None:
        params = params_for(instance, affine, convex, epsilon, delta)
    eps, dlt = params.epsilon, params.delta
    if trials is None:
        trials = _mc_trials(instance.visit_bound(), dlt)
    br = _BestResponse(instance, visit_method, trials, seed, cap)
    R = instance.R
    prefix = sum(c.prefix_reward for c in instance.chains)
    thetas = [r.theta for r in rows]
    bs = np.array([r.b for r in rows])
    lam = np.zeros(len(rows))
    beta = np.zeros(len(convex))
    mus = [np.zeros(d) for _ in convex]
    H_mu = params.H_mu

    atoms_R: list[Vec] = []
    atoms_p: list[Vec] = []
    p_sum = np.zeros(d)
    dual_best = math.inf
    gaps: list[float] = []
    history: list[dict] = []
    lag_sum = 0.0
    stopped = False
    k = 0
    for k in range(1, params.K_O + 1):
        p_bar = np.zeros(d)
        mu_bar = [np.zeros(d) for _ in convex]
        for _ in range(params.K_I):
            R_adj = adjusted_reward(R, lam, thetas, beta, mus)
            p = br(R_adj)
            atoms_R.append(R_adj)
            atoms_p.append(p)
            dual = float(R_adj @ p + lam @ bs + sum(b * c.conjugate(mu) for b, c, mu in zip(beta, convex, mus)))
            dual_best = min(dual_best, dual + prefix)
            p_bar += p
            for i, c in enumerate(convex):
                mu_bar[i] += mus[i]
                step = mus[i] - params.gamma_I * beta[i] * (c.conjugate_grad(mus[i]) - p)
                mus[i] = np.clip(step, -H_mu, H_mu)
        p_bar /= params.K_I
        mu_bar = [m / params.K_I for m in mu_bar]
        p_sum += p_bar * params.K_I
        # first-game Lagrangian at the averaged visits
        F_bar = np.array([c.F(p_bar) for c in convex])
        g_aff = bs - np.array([th @ p_bar for th in thetas]) if rows else np.zeros(0)
        lag = float(R @ p_bar + prefix + lam @ g_aff - beta @ F_bar)
        lag_sum += lag
        if convex:
            # inner approximate-equilibrium gap: best response to mu_bar against L at p_bar
            R_bar = adjusted_reward(R, lam, thetas, beta, mu_bar)
            q = br(R_bar)
            top = float(R_bar @ q + prefix + lam @ bs + sum(b * c.conjugate(m) for b, c, m in zip(beta, convex,
                                                                                               mu_bar)))
            gaps.append(top - lag)
        else:
            gaps.append(0.0)
        if keep_history:
            row = {"iter": k, "lagrangian": lag, "mean_lagrangian": lag_sum / k}
            p_run = p_sum / (k * params.K_I)
            for j, r in enumerate(rows):
                row[f"mean_slack_{j}"] = float(r.b - r.theta @ p_run)
                row[f"lambda_{j}"] = float(lam[j])
            for i, c in enumerate(convex):
                row[f"mean_F_{i}"] = c.F(p_run)
                row[f"beta_{i}"] = float(beta[i])
            history.append(row)
        # outer updates
        if rows:
            lam = np.clip(lam - params.gamma_O_lambda * g_aff, 0.0, params.H_lambda)
        if convex:
            beta = np.clip(beta + params.gamma_O_beta * F_bar, 0.0, params.H_beta)
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(beta))):
            raise FloatingPointError("non-finite dual iterate")
        if early_stop:
            p_run = p_sum / (k * params.K_I)
            viol = max([0.0] + [float(r.theta @ p_run - r.b) for r in rows] + [c.F(p_run) for c in convex])
            if viol <= dlt and dual_best - (float(R @ p_run) + prefix) <= eps:
                stopped = k < params.K_O
                break
    n_atoms = len(atoms_p)
    p_hat = p_sum / n_atoms
    objective = float(R @ p_hat) + prefix
    e1, e2, e3 = replace(params, K_O=k).epsilons()
    cert = Certificate(e1, e2, e3, float(np.mean(gaps)), dual_best, dual_best - objective)
    atoms = tuple(GrdipAtom(r, p, 1.0 / n_atoms) for r, p in zip(atoms_R, atoms_p))
    return GrdipSolution(
        atoms=atoms,
        p_hat=p_hat,
        objective=objective,
        affine_violation=tuple(a.violation(p_hat) for a in affine),
        convex_value=tuple(c.F(p_hat) for c in convex),
        certificate=cert,
        outer_iterations=k,
        stopped_early=stopped,
        lambdas=lam,
        betas=beta,
        history=tuple(history),
        visit_method=br.used,
    )


def write_trace(solution: GrdipSolution, path) -> None:
    if not solution.history:
        raise ValueError("solution has no history (run with keep_history=True)")
    fields = list(solution.history[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in solution.history:
            w.writerow(row)
