"""Exact satisfaction of several affine constraints.

At the dual optimum lambda* the set of slack vectors of adjusted-optimal
policies is a polytope containing 0.  Its vertices are reachable through a
linear-optimization oracle (perturbing lambda* infinitesimally along a
direction, realized as lexicographic tie scores).  The ellipsoid-based
exact Caratheodory routine (EEC) then finds a few vertices whose hull
covers 0, and a small LP recovers the mixing weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .constrained import (
    EXACT,
    AffineConstraint,
    DualAdjustedInstance,
    Evaluator,
    InfeasibleConstraintError,
    PolicyAtom,
    RandomizedIndexPolicy,
    adjust_instance,
    check_feasibility,
    lambda_bound,
    slack_value,
)
from .pandora import PandoraInstance, TieBreakRule

ZERO_TOL = 1e-10
THIN_TOL = 1e-9
RADIUS_TOL = 1e-7


class CoverageError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# dual minimization in R^m


@dataclass(frozen=True)
class MultiDualProbe:
    lam: np.ndarray
    G: float
    utility: float
    slacks: np.ndarray


def _probe(instance, constraints, lam, evaluator) -> MultiDualProbe:
    adj = adjust_instance(instance, constraints, lam)
    model = adj.model(evaluator.tol)
    ev = evaluator(model, TieBreakRule.lexicographic())
    u, _ = ev.utility(model)
    d = np.array([slack_value(ev, model, c)[0] for c in constraints])
    lam = np.asarray(lam, dtype=float)
    return MultiDualProbe(lam, float(u + lam @ d), float(u), d)


@dataclass(frozen=True)
class MultiDualResult:
    lambda_star: np.ndarray
    G: float
    iterations: int
    probes: tuple[MultiDualProbe, ...] = field(repr=False, default=())


def _bounds(instance, constraints):
    big = max([lambda_bound(instance, c) for c in constraints] + [0.0])
    out = []
    for c in constraints:
        hi = big if c.scale(instance) > 0 else 0.0
        out.append((0.0, hi) if c.sense == "leq" else (-hi, hi))
    return out


def _polish(cuts: list[MultiDualProbe], lam: np.ndarray, G: float, bounds, scale: float) -> np.ndarray:
    """Re-solve the active pieces exactly so that lambda sits on the kink."""
    m = len(lam)
    rows, rhs = [], []
    for q in cuts:
        if abs(q.utility + lam @ q.slacks - G) <= 1e-7 * scale:
            rows.append(np.concatenate([q.slacks, [-1.0]]))
            rhs.append(-q.utility)
    for i, (lo, hi) in enumerate(bounds):
        for b in (lo, hi):
            if abs(lam[i] - b) <= 1e-9 * max(1.0, abs(b)):
                r = np.zeros(m + 1)
                r[i] = 1.0
                rows.append(r)
                rhs.append(b)
    if not rows:
        return lam
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    out = np.clip(sol[:m], [b[0] for b in bounds], [b[1] for b in bounds])
    return out if np.linalg.norm(out - lam) <= 1e-5 * max(1.0, np.linalg.norm(lam)) else lam


def _kelley(instance, constraints, evaluator, cuts, best, bounds, tol, max_iter):
    """Kelley's cutting plane inside the lambda box; appends to cuts in place."""
    m = len(constraints)
    q = best
    for _ in range(max_iter):
        A = np.array([np.concatenate([c.slacks, [-1.0]]) for c in cuts])
        b = np.array([-c.utility for c in cuts])
        cost = np.zeros(m + 1)
        cost[-1] = 1.0
        res = linprog(cost, A_ub=A, b_ub=b, bounds=list(bounds) + [(None, None)], method="highs")
        if res.status != 0:
            raise InfeasibleConstraintError(f"cutting-plane LP failed: {res.message}")
        q = _probe(instance, constraints, res.x[:m], evaluator)
        if q.G < best.G:
            best = q
        if best.G - res.x[-1] <= tol:
            return best, q
        cuts.append(q)
    raise InfeasibleConstraintError("dual cutting plane did not converge (constraints may be infeasible)")


def minimize_dual_multi(instance: PandoraInstance, constraints: Sequence[AffineConstraint], tol: float = 1e-10,
                        method: str = "cutting_plane", evaluator: Evaluator = EXACT,
                        max_iter: int = 500) -> MultiDualResult:
    """Minimize the multi-constraint dual over the lambda box (lambda >= 0 for leq rows).

    cutting_plane: Kelley's method with an LP over collected pieces, then an
    exact polish on the active pieces.  subgradient: projected steps of size
    proportional to 1/sqrt(t), best iterate returned.
    """
    constraints = tuple(constraints)
    m = len(constraints)
    bounds = _bounds(instance, constraints)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    first = _probe(instance, constraints, np.zeros(m), evaluator)
    cuts = [first]
    best = first
    scale = 1.0 + abs(first.G)
    if method == "subgradient":
        lam = np.zeros(m)
        step0 = max(float(np.max(hi - lo)) / 10.0, 1e-3)
        q = first
        for t in range(1, max_iter + 1):
            g = q.slacks
            if np.linalg.norm(g) <= tol:
                break
            lam = np.clip(lam - step0 / math.sqrt(t) * g / np.linalg.norm(g), lo, hi)
            q = _probe(instance, constraints, lam, evaluator)
            cuts.append(q)
            if q.G < best.G:
                best = q
        return MultiDualResult(best.lam, best.G, len(cuts), tuple(cuts))
    if method != "cutting_plane":
        raise ValueError(f"unknown method {method!r}")
    prev = math.inf
    for _ in range(60):
        best, q = _kelley(instance, constraints, evaluator, cuts, best, bounds, tol * scale, max_iter)
        on_edge = any(b_hi > 0 and abs(best.lam[i]) >= b_hi * (1 - 1e-9) for i, (_, b_hi) in enumerate(bounds))
        if not on_edge or best.G >= prev - tol * scale:
            break
        # the minimizer may lie outside the box: double it and keep the cuts
        prev = best.G
        bounds = [(2 * b_lo, 2 * b_hi) for b_lo, b_hi in bounds]
    else:
        raise InfeasibleConstraintError("dual minimizer escapes every lambda box (constraints may be infeasible)")
    lam_p = _polish(cuts + [q], best.lam, best.G, bounds, scale)
    lam_p = np.where(np.abs(lam_p) <= 1e-12, 0.0, lam_p)
    if not np.array_equal(lam_p, best.lam):
        qp = _probe(instance, constraints, lam_p, evaluator)
        if qp.G <= best.G + 1e-12 * scale:
            best = qp
    return MultiDualResult(best.lam, best.G, len(cuts), tuple(cuts))


# ---------------------------------------------------------------------------
# oracles


@dataclass(frozen=True, eq=False)
class VertexHandle:
    """An oracle answer: a real policy (adjusted instance + rule) or a dummy vertex -e_i."""

    slacks: np.ndarray
    adjusted: DualAdjustedInstance | None = None
    rule: TieBreakRule | None = None
    dummy: int | None = None
    utility: float = math.nan


class SlackVertexOracle:
    """Extended linear-optimization oracle over the slack polytope at lambda*."""

    def __init__(self, instance: PandoraInstance, constraints: Sequence[AffineConstraint],
                 lambda_star: Sequence[float], dummies: Sequence[int] = (), evaluator: Evaluator = EXACT):
        self.instance = instance
        self.constraints = tuple(constraints)
        self.lambda_star = np.asarray(lambda_star, dtype=float)
        self.dummies = tuple(dummies)
        self.evaluator = evaluator
        self.adjusted = adjust_instance(instance, self.constraints, self.lambda_star)
        self.model = self.adjusted.model(evaluator.tol)
        self.calls = 0

    @property
    def m(self) -> int:
        return len(self.constraints)

    def policy_vertex(self, omegas: Sequence[Sequence[float]]) -> VertexHandle:
        rule = TieBreakRule.perturbation(self.constraints, omegas)
        ev = self.evaluator(self.model, rule)
        d = np.array([slack_value(ev, self.model, c)[0] for c in self.constraints])
        u, _ = ev.utility(self.model)
        return VertexHandle(d, self.adjusted, rule, None, u)

    def query(self, omegas: Sequence[Sequence[float]]) -> VertexHandle:
        self.calls += 1
        omegas = [np.asarray(w, dtype=float) for w in omegas]
        if not omegas:
            omegas = [np.zeros(self.m)]
        best = self.policy_vertex(omegas)
        best_key = [float(w @ best.slacks) for w in omegas]
        for i in self.dummies:
            e = np.zeros(self.m)
            e[i] = -1.0
            key = [float(w @ e) for w in omegas]
            if _lex_greater(key, best_key):
                best, best_key = VertexHandle(e, dummy=i), key
        return best


def _lex_greater(a: Sequence[float], b: Sequence[float], tol: float = 1e-12) -> bool:
    for x, y in zip(a, b):
        if x > y + tol:
            return True
        if x < y - tol:
            return False
    return False


def lin_oracle(oracle: SlackVertexOracle, omega: Sequence[float]) -> VertexHandle:
    return oracle.query([omega])


def ext_lin_oracle(oracle: SlackVertexOracle, omegas: Sequence[Sequence[float]]) -> VertexHandle:
    return oracle.query(list(omegas))


# ---------------------------------------------------------------------------
# ellipsoid


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """{c + B y : y^T P^{-1} y <= 1} with B an orthonormal basis of the active subspace.

    center and shape are stored in subspace coordinates; full() maps them back.
    """

    basis: np.ndarray  # m x r
    center_r: np.ndarray  # r
    shape_r: np.ndarray  # r x r

    @classmethod
    def ball(cls, basis: np.ndarray) -> "Ellipsoid":
        r = basis.shape[1]
        return cls(basis, np.zeros(r), np.eye(r))

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def center(self) -> np.ndarray:
        return self.basis @ self.center_r

    @property
    def shape(self) -> np.ndarray:
        return self.basis @ self.shape_r @ self.basis.T

    def semi_axes(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros(0)
        return np.sqrt(np.clip(np.linalg.eigvalsh(self.shape_r), 0.0, None))

    def radius(self) -> float:
        ax = self.semi_axes()
        return float(ax.max()) if len(ax) else 0.0

    def volume_factor(self) -> float:
        """sqrt(det P): volume up to the unit-ball constant."""
        if self.dim == 0:
            return 0.0
        return float(math.sqrt(max(np.linalg.det(self.shape_r), 0.0)))

    def width(self, direction: np.ndarray) -> float:
        """Half-width along a full-space direction (normalized)."""
        a = self.basis.T @ direction
        n = np.linalg.norm(direction)
        if n == 0:
            return 0.0
        return float(math.sqrt(max(a @ self.shape_r @ a, 0.0)) / n)

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        y = self.basis.T @ x - self.center_r
        if np.linalg.norm(self.basis @ (self.basis.T @ x) - x) > tol:
            return False
        return float(y @ np.linalg.pinv(self.shape_r) @ y) <= 1.0 + tol


@dataclass(frozen=True)
class CutResult:
    ellipsoid: Ellipsoid
    contained: bool
    volume_ratio: float


def ellipsoid_halfspace_update(E: Ellipsoid, normal: Sequence[float], thin_tol: float = THIN_TOL) -> CutResult:
    """Minimal ellipsoid containing E intersected with {x : normal.(x - center) <= 0}."""
    normal = np.asarray(normal, dtype=float)
    a = E.basis.T @ normal
    n = E.dim
    norm = np.linalg.norm(normal)
    if norm == 0:
        raise ValueError("cut normal must be nonzero")
    Pa = E.shape_r @ a
    q = float(a @ Pa)
    if n == 0 or math.sqrt(max(q, 0.0)) <= thin_tol * norm:
        return CutResult(E, True, 1.0)
    b = Pa / math.sqrt(q)
    if n == 1:
        c = E.center_r - b / 2.0
        P = E.shape_r / 4.0
    else:
        c = E.center_r - b / (n + 1)
        P = (n * n / (n * n - 1.0)) * (E.shape_r - (2.0 / (n + 1)) * np.outer(b, b))
    P = 0.5 * (P + P.T)
    new = Ellipsoid(E.basis, c, P)
    v0 = E.volume_factor()
    return CutResult(new, False, new.volume_factor() / v0 if v0 > 0 else 0.0)


# ---------------------------------------------------------------------------
# EEC


@dataclass(frozen=True, eq=False)
class EecResult:
    points: tuple[VertexHandle, ...]
    omegas: tuple[np.ndarray, ...]
    oracle_calls: int
    volume_ratios: tuple[float, ...]
    history: tuple[Ellipsoid, ...] = field(repr=False, default=())
    found: tuple[VertexHandle, ...] = field(repr=False, default=())


def _complement_basis(omegas: Sequence[np.ndarray], m: int) -> np.ndarray:
    if not omegas:
        return np.eye(m)
    W = np.array(omegas).T
    q, _ = np.linalg.qr(W, mode="complete")
    return q[:, len(omegas):]


def _dedupe(points: Sequence[VertexHandle], tol: float = 1e-12) -> list[VertexHandle]:
    out = []
    for p in points:
        if not any(np.max(np.abs(p.slacks - o.slacks)) <= tol for o in out):
            out.append(p)
    return out


def _covers_zero(points: Sequence[VertexHandle], tol: float) -> bool:
    try:
        convex_weights([p.slacks for p in points], tol)
        return True
    except CoverageError:
        return False


def eec(oracle: SlackVertexOracle, m: int | None = None, tol: float = RADIUS_TOL, max_iter: int = 20_000,
        early_exit: bool = False, keep_history: bool = False) -> EecResult:
    """Ellipsoid-based exact Caratheodory over the oracle's slack polytope.

    The ellipsoid lives in direction space: it always contains the polar
    cone of the points found so far intersected with the unit ball, so it
    never needs rescaling to the polytope's size.  A cut that would not
    shrink the ellipsoid (the ellipsoid is flat along the returned vertex)
    ends the inner loop: the centre, with its component along the flat
    vertices removed, is confirmed as a zero-valued direction and appended
    to Omega.
    """
    m = oracle.m if m is None else m
    omegas: list[np.ndarray] = []
    ratios: list[float] = []
    history: list[Ellipsoid] = []
    found: list[VertexHandle] = []
    V: list[VertexHandle] = []
    it = 0
    while True:
        basis = _complement_basis(omegas, m)
        E = Ellipsoid.ball(basis)
        V = []
        if E.dim == 0:
            v = oracle.query(omegas)
            found.append(v)
            if np.linalg.norm(v.slacks) <= ZERO_TOL:
                return EecResult((v,), tuple(omegas), oracle.calls, tuple(ratios), tuple(history), tuple(found))
            raise CoverageError("direction space exhausted without reaching the origin")
        flat: list[np.ndarray] = []
        restart = False
        while not restart:
            it += 1
            if it > max_iter:
                raise CoverageError("EEC iteration cap reached")
            if keep_history:
                history.append(E)
            if E.radius() < tol:
                pts = _dedupe(V)
                return EecResult(tuple(pts), tuple(omegas), oracle.calls, tuple(ratios), tuple(history),
                                 tuple(found))
            center = E.center
            if np.linalg.norm(center) > ZERO_TOL:
                omega = center
            else:
                w, vecs = np.linalg.eigh(E.shape_r)
                omega = basis @ vecs[:, -1]
            v = oracle.query(omegas + [omega])
            found.append(v)
            V.append(v)
            if np.linalg.norm(v.slacks) <= ZERO_TOL:
                return EecResult((v,), tuple(omegas), oracle.calls, tuple(ratios), tuple(history), tuple(found))
            if early_exit and _covers_zero(_dedupe(V), 1e-9):
                return EecResult(tuple(_dedupe(V)), tuple(omegas), oracle.calls, tuple(ratios), tuple(history),
                                 tuple(found))
            cut = ellipsoid_halfspace_update(E, v.slacks)
            if not cut.contained:
                ratios.append(cut.volume_ratio)
                E = cut.ellipsoid
                continue
            # flat along v: look for a direction of the polar cone inside the flat slice
            flat.append(basis.T @ v.slacks)
            u = _flat_direction(E, flat, basis, V)
            probe = oracle.query(omegas + [u])
            found.append(probe)
            if float(u @ probe.slacks) <= THIN_TOL * max(1.0, np.linalg.norm(probe.slacks)):
                omegas.append(u)
                restart = True
                continue
            V.append(probe)
            cut = ellipsoid_halfspace_update(E, probe.slacks)
            if cut.contained:
                flat.append(basis.T @ probe.slacks)
            else:
                ratios.append(cut.volume_ratio)
                E = cut.ellipsoid


def _flat_direction(E: Ellipsoid, flat: list[np.ndarray], basis: np.ndarray, V: list[VertexHandle]) -> np.ndarray:
    """Centre (or long axis) with its component along the flat vertices removed."""
    # rank-aware span: repeated flat vertices must not inflate it
    U, sv, _ = np.linalg.svd(np.array(flat).T, full_matrices=False)
    qf = U[:, sv > THIN_TOL * max(1.0, sv[0])]
    proj = np.eye(basis.shape[1]) - qf @ qf.T

    def signed(y):
        u = basis @ y
        vals = [float(u @ p.slacks) for p in V]
        if vals and max(vals) > 0 and min(vals) >= -1e-12:
            u = -u
        return u / np.linalg.norm(u)

    y = proj @ E.center_r
    if np.linalg.norm(y) > ZERO_TOL:
        return signed(y)
    w, vecs = np.linalg.eigh(proj @ E.shape_r @ proj)
    y = vecs[:, -1]
    if np.linalg.norm(proj @ y) <= ZERO_TOL:
        raise CoverageError("no direction left in the flat slice")
    return signed(proj @ y)


# ---------------------------------------------------------------------------
# weights


def convex_weights(points: Sequence[Sequence[float]], tol: float = 1e-9) -> np.ndarray:
    """Weights w >= 0, sum 1, minimizing the max-norm of sum w_i p_i; error if the residual exceeds tol."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    N, m = P.shape
    if N == 0:
        raise CoverageError("no points")
    # variables w (N) and s: minimize s with -s <= P^T w <= s
    c = np.zeros(N + 1)
    c[-1] = 1.0
    A_ub = np.vstack([np.hstack([P.T, -np.ones((m, 1))]), np.hstack([-P.T, -np.ones((m, 1))])])
    b_ub = np.zeros(2 * m)
    A_eq = np.concatenate([np.ones(N), [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * N + [(0, None)],
                  method="highs")
    if res.status != 0:
        raise CoverageError(f"weight LP failed: {res.message}")
    w = np.clip(res.x[:N], 0.0, None)
    w /= w.sum()
    # polish on the support
    support = np.flatnonzero(w > 1e-12)
    M = np.vstack([P[support].T, np.ones(len(support))])
    rhs = np.concatenate([np.zeros(m), [1.0]])
    ws, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    if np.all(ws >= -1e-15):
        cand = np.zeros(N)
        cand[support] = np.clip(ws, 0.0, None)
        cand /= cand.sum()
        if np.abs(P.T @ cand).max() <= np.abs(P.T @ w).max():
            w = cand
    resid = float(np.abs(P.T @ w).max())
    if resid > tol:
        raise CoverageError(f"origin not covered: residual {resid:.3g} > {tol:.3g}")
    return w


# ---------------------------------------------------------------------------
# end to end


@dataclass(frozen=True, eq=False)
class CaratheodoryResult:
    points: tuple[VertexHandle, ...]
    weights: np.ndarray
    lambda_star: np.ndarray
    eec: EecResult


def solve_multi_affine(instance: PandoraInstance, constraints: Sequence[AffineConstraint], tol: float = 1e-10,
                       evaluator: Evaluator = EXACT, early_exit: bool = False
                       ) -> tuple[RandomizedIndexPolicy, CaratheodoryResult]:
    constraints = tuple(constraints)
    for c in constraints:
        c.validate(instance)
        if c.sense == "eq" and not check_feasibility(instance, c):
            raise InfeasibleConstraintError(f"constraint {c.name!r} has an empty feasible polytope")
    dual = minimize_dual_multi(instance, constraints, tol, evaluator=evaluator)
    lam = dual.lambda_star
    dummies = [i for i, c in enumerate(constraints) if c.sense == "leq" and abs(lam[i]) <= 1e-9]
    oracle = SlackVertexOracle(instance, constraints, lam, dummies, evaluator)
    res = eec(oracle, early_exit=early_exit)
    pts = list(res.points)
    w = convex_weights([p.slacks for p in pts])
    real = [(p, wi) for p, wi in zip(pts, w) if p.dummy is None and wi > 0]
    if not real:
        raise CoverageError("only dummy vertices carry weight")
    total = math.fsum(wi for _, wi in real)
    atoms = tuple(PolicyAtom(p.adjusted, p.rule, wi / total) for p, wi in real)
    # renormalization can leave float dust in the sum
    fix = 1.0 - math.fsum(a.weight for a in atoms)
    atoms = atoms[:-1] + (PolicyAtom(atoms[-1].adjusted, atoms[-1].rule, atoms[-1].weight + fix),)
    policy = RandomizedIndexPolicy(atoms, tuple(float(x) for x in lam))
    return policy, CaratheodoryResult(tuple(pts), w, lam, res)
