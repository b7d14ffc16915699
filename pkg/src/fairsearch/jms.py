"""Joint Markov scheduling with arbitrary state rewards.

Each alternative is an absorbing Markov reward chain.  Playing a chain in
non-terminal state s earns R(s) and moves it; entering a terminal state
selects the chain and earns that terminal's reward.  Free-lunch states
(positive reward, no immediate chance of terminating) are collapsed away
before Gittins indices are computed; the index policy then plays them
unconditionally.
"""
from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix, identity
from scipy.sparse.linalg import spsolve

from .pandora import CapExceededError, PandoraInstance

INF = math.inf
INDEX_TOL = 1e-9
PLAY_TOL = 1e-12
DEFAULT_JOINT_CAP = 2_000_000


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Absorbing Markov reward chain.

    R(s) is the exit reward of a non-terminal state and the entry reward of
    a terminal one.  start_dist/prefix_reward are only set by collapse when
    the start state itself was eliminated.
    """

    n_states: int
    terminal: frozenset[int]
    A: np.ndarray
    R: np.ndarray
    start: int = 0
    start_dist: np.ndarray | None = None
    prefix_reward: float = 0.0
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        R = np.array(self.R, dtype=float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "terminal", frozenset(int(t) for t in self.terminal))
        if self.start_dist is not None:
            object.__setattr__(self, "start_dist", np.array(self.start_dist, dtype=float))
        ell = self.n_states
        if A.shape != (ell, ell) or R.shape != (ell,):
            raise ValueError("transition/reward shapes do not match n_states")
        if not self.terminal:
            raise ValueError("chain needs at least one terminal state")
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition rows must be stochastic")
        for t in self.terminal:
            if A[t, t] != 1.0:
                raise ValueError(f"terminal state {t} must be absorbing")
        if self.start in self.terminal and self.start_dist is None:
            raise ValueError("start state is terminal")
        # absorbing: every state reaches a terminal
        reach = set(self.terminal)
        changed = True
        while changed:
            changed = False
            for s in range(ell):
                if s not in reach and any(A[s, c] > 0 for c in reach):
                    reach.add(s)
                    changed = True
        if len(reach) != ell:
            raise ValueError(f"states {sorted(set(range(ell)) - reach)} never reach a terminal state")

    def __eq__(self, other):
        if not isinstance(other, MarkovChain):
            return NotImplemented
        same_dist = (self.start_dist is None and other.start_dist is None) or (
            self.start_dist is not None and other.start_dist is not None
            and np.array_equal(self.start_dist, other.start_dist))
        return (self.n_states == other.n_states and self.terminal == other.terminal
                and np.array_equal(self.A, other.A) and np.array_equal(self.R, other.R)
                and self.start == other.start and same_dist and self.prefix_reward == other.prefix_reward
                and self.labels == other.labels)

    __hash__ = object.__hash__

    @cached_property
    def nonterminal(self) -> np.ndarray:
        return np.array([s for s in range(self.n_states) if s not in self.terminal], dtype=np.int64)

    @cached_property
    def terminal_mask(self) -> np.ndarray:
        m = np.zeros(self.n_states, dtype=bool)
        m[list(self.terminal)] = True
        return m

    def initial(self) -> np.ndarray:
        if self.start_dist is not None:
            return self.start_dist
        e = np.zeros(self.n_states)
        e[self.start] = 1.0
        return e

    def with_rewards(self, R: Sequence[float]) -> "MarkovChain":
        return MarkovChain(self.n_states, self.terminal, self.A, np.asarray(R, dtype=float), self.start,
                           self.start_dist, self.prefix_reward, self.labels)

    @cached_property
    def fundamental(self) -> np.ndarray:
        """Expected plays of each non-terminal state when always playing, rows = start state."""
        nt = self.nonterminal
        Q = self.A[np.ix_(nt, nt)]
        return np.linalg.inv(np.eye(len(nt)) - Q)

    def visit_bound(self) -> float:
        nt = self.nonterminal
        if len(nt) == 0:
            return 1.0
        start = self.initial()[nt]
        return float(max(1.0, (start @ self.fundamental).max()))


@dataclass(frozen=True, eq=False)
class JmsInstance:
    chains: tuple[MarkovChain, ...]
    capacity: int = 1

    def __post_init__(self):
        object.__setattr__(self, "chains", tuple(self.chains))
        if not 1 <= self.capacity <= len(self.chains):
            raise ValueError(f"capacity {self.capacity} outside [1, {len(self.chains)}]")

    def __eq__(self, other):
        if not isinstance(other, JmsInstance):
            return NotImplemented
        return self.capacity == other.capacity and self.chains == other.chains

    __hash__ = object.__hash__

    @property
    def n(self) -> int:
        return len(self.chains)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([c.n_states for c in self.chains])]).astype(np.int64)

    @property
    def d(self) -> int:
        return int(self.offsets[-1])

    @property
    def R(self) -> np.ndarray:
        return np.concatenate([c.R for c in self.chains])

    def flat(self, chain: int, state: int) -> int:
        return int(self.offsets[chain] + state)

    def with_rewards(self, R: Sequence[float]) -> "JmsInstance":
        R = np.asarray(R, dtype=float)
        o = self.offsets
        return JmsInstance(tuple(c.with_rewards(R[o[i]:o[i + 1]]) for i, c in enumerate(self.chains)),
                           self.capacity)

    def visit_bound(self) -> float:
        """H_p: no policy visits a state more often than always-play does."""
        return max(c.visit_bound() for c in self.chains)

    def terminal_flat(self) -> np.ndarray:
        m = np.zeros(self.d, dtype=bool)
        for i, c in enumerate(self.chains):
            m[self.offsets[i]:self.offsets[i + 1]] = c.terminal_mask
        return m

    def check_normalized(self) -> bool:
        ok = float(np.abs(self.R).max()) <= 1.0 + 1e-12
        if not ok:
            warnings.warn("rewards exceed the unit normalization ||R||_inf <= 1", stacklevel=2)
        return ok


# ---------------------------------------------------------------------------
# NFL and collapsing


def free_lunch_states(chain: MarkovChain, alive: np.ndarray | None = None) -> list[int]:
    A, R = chain.A, chain.R
    alive = np.ones(chain.n_states, dtype=bool) if alive is None else alive
    out = []
    for s in range(chain.n_states):
        if not alive[s] or s in chain.terminal or R[s] <= 0:
            continue
        if not any(A[s, t] > 0 for t in chain.terminal if alive[t]):
            out.append(s)
    return out


def is_nfl(chain: MarkovChain) -> bool:
    return not free_lunch_states(chain)


def _collapse_arrays(chain: MarkovChain, order: str = "lowest"):
    A = chain.A.copy()
    R = chain.R.copy()
    init = chain.initial().copy()
    prefix = chain.prefix_reward
    alive = np.ones(chain.n_states, dtype=bool)
    while True:
        fl = free_lunch_states(_View(A, R, chain.terminal), alive)
        if not fl:
            break
        s = min(fl) if order == "lowest" else max(fl)
        out = 1.0 - A[s, s]
        row = A[s].copy()
        row[s] = 0.0
        for p in range(chain.n_states):
            if not alive[p] or p == s or p in chain.terminal or A[p, s] == 0:
                continue
            w = A[p, s] / out
            R[p] += w * R[s]
            A[p] += w * row
            A[p, s] = 0.0
        if init[s] > 0:
            w = init[s] / out
            prefix += w * R[s]
            init += w * row
            init[s] = 0.0
        alive[s] = False
    return A, R, init, prefix, alive


class _View:
    """Minimal chain view for free_lunch_states during elimination."""

    def __init__(self, A, R, terminal):
        self.A, self.R, self.terminal = A, R, terminal
        self.n_states = len(R)


@dataclass(frozen=True, eq=False)
class CollapseResult:
    chain: MarkovChain
    state_map: tuple[int | None, ...]

    @property
    def eliminated(self) -> tuple[int, ...]:
        return tuple(s for s, m in enumerate(self.state_map) if m is None)


def collapse(chain: MarkovChain, order: str = "lowest") -> CollapseResult:
    """Eliminate free-lunch states one at a time (lowest index first by default)."""
    A, R, init, prefix, alive = _collapse_arrays(chain, order)
    keep = np.flatnonzero(alive)
    state_map = tuple(int(np.searchsorted(keep, s)) if alive[s] else None for s in range(chain.n_states))
    if alive.all():
        return CollapseResult(chain, state_map)
    A2 = A[np.ix_(keep, keep)]
    R2 = R[keep]
    term = frozenset(state_map[t] for t in chain.terminal)
    labels = tuple(chain.labels[s] for s in keep) if chain.labels else None
    if chain.start_dist is None and alive[chain.start]:
        new = MarkovChain(len(keep), term, A2, R2, state_map[chain.start], None, prefix, labels)
    else:
        dist = init[keep]
        new = MarkovChain(len(keep), term, A2, R2, int(np.argmax(dist)), dist, prefix, labels)
    return CollapseResult(new, state_map)


# ---------------------------------------------------------------------------
# Gittins index


class _StopProblem:
    """Optimal stopping with terminal rewards shifted by -sigma, over non-terminal states.

    Block matrices are built once; each solve warm-starts policy iteration
    from the previous continuation set.
    """

    def __init__(self, chain: MarkovChain):
        nt = chain.nonterminal
        term = sorted(chain.terminal)
        self.Q = chain.A[np.ix_(nt, nt)]
        T = chain.A[np.ix_(nt, term)]
        self.t1 = T.sum(axis=1)
        self.g0 = chain.R[nt] + T @ chain.R[term]
        self.m = len(nt)
        self.cont = np.ones(self.m, dtype=bool)
        self.scale = 1.0 + float(np.abs(chain.R).max())

    def _solve(self, idx, rhs):
        out = np.zeros(self.m)
        if len(idx):
            out[idx] = np.linalg.solve(np.eye(len(idx)) - self.Q[np.ix_(idx, idx)], rhs[idx])
        return out

    def solve(self, sigma: float, max_iter: int = 1000):
        """Returns (g, V, tau) under the optimal continuation set."""
        g = self.g0 - sigma * self.t1
        thr = 1e-13 * (1.0 + np.abs(g).max())
        cont = self.cont
        for _ in range(max_iter):
            idx = np.flatnonzero(cont)
            V = self._solve(idx, g)
            new = g + self.Q @ V > thr
            if np.array_equal(new, cont):
                break
            cont = new
        else:
            raise RuntimeError("optimal stopping policy iteration did not converge")
        self.cont = cont
        tau = self._solve(np.flatnonzero(cont), self.t1)
        return g, V, tau

    def continuation(self, pos: int, sigma: float) -> tuple[float, float]:
        """Value of playing once from pos then acting optimally, and its slope in sigma."""
        g, V, tau = self.solve(sigma)
        return float(g[pos] + self.Q[pos] @ V), float(-(self.t1[pos] + self.Q[pos] @ tau))


def _continuation(chain: MarkovChain, pos: int, sigma: float) -> tuple[float, float]:
    return _StopProblem(chain).continuation(pos, sigma)


def gittins_index(chain: MarkovChain, state: int, method: str = "newton", tol: float = 1e-11,
                  max_iter: int = 200, _problem: _StopProblem | None = None) -> float:
    """Smallest sigma at which playing `state` once and continuing optimally is worth at most 0.

    The continuation value is convex, piecewise linear and decreasing in
    sigma, so Newton from the left lands on the root in finitely many steps;
    bisection is kept as an independent route.
    """
    if state in chain.terminal:
        raise ValueError("terminal states carry no index")
    prob = _problem or _StopProblem(chain)
    nt = chain.nonterminal
    pos = int(np.searchsorted(nt, state))
    # always-play value h gives C(sigma) >= h - sigma
    full = np.linalg.solve(np.eye(prob.m) - prob.Q, prob.g0)
    lo = float(full[pos]) - 1.0
    c, slope = prob.continuation(pos, lo)
    scale = prob.scale
    if method == "newton":
        sigma = lo
        for _ in range(max_iter):
            if c <= tol * scale:
                return sigma
            if slope >= 0:
                return INF
            sigma = sigma - c / slope
            c, slope = prob.continuation(pos, sigma)
        raise RuntimeError(f"Gittins Newton iteration did not converge at state {state}")
    if method != "bisection":
        raise ValueError(f"unknown method {method!r}")
    hi = max(lo + 1.0, float(chain.R[sorted(chain.terminal)].max()) + 1.0)
    for _ in range(200):
        if prob.continuation(pos, hi)[0] <= 0:
            break
        hi += 2.0 * (abs(hi) + 1.0)
    else:
        return INF
    for _ in range(max_iter * 2):
        if hi - lo <= tol * scale:
            break
        mid = 0.5 * (lo + hi)
        if prob.continuation(pos, mid)[0] <= 0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True, eq=False)
class IndexTable:
    """sigma[i][s]: index of chain i in state s (nan for terminal states)."""

    sigma: tuple[np.ndarray, ...]

    def __getitem__(self, key: tuple[int, int]) -> float:
        i, s = key
        return float(self.sigma[i][s])


def chain_indices(chain: MarkovChain, method: str = "newton") -> np.ndarray:
    res = collapse(chain)
    out = np.full(chain.n_states, np.nan)
    prob = None
    for s in range(chain.n_states):
        if s in chain.terminal:
            continue
        m = res.state_map[s]
        if m is None:
            out[s] = INF
        else:
            prob = prob or _StopProblem(res.chain)
            out[s] = gittins_index(res.chain, m, method, _problem=prob)
    return out


def index_table(instance: JmsInstance, method: str = "newton") -> IndexTable:
    return IndexTable(tuple(chain_indices(c, method) for c in instance.chains))


# ---------------------------------------------------------------------------
# index policy


def _choose(table: IndexTable, states: Sequence[int], instance: JmsInstance, priority=None) -> int | None:
    vals = []
    for i, s in enumerate(states):
        if s in instance.chains[i].terminal:
            vals.append(-INF)
            continue
        vals.append(table.sigma[i][s])
    top = max(vals) if vals else -INF
    if not top > PLAY_TOL:
        return None
    order = range(len(vals)) if priority is None else priority
    for i in order:
        v = vals[i]
        if v == top or (math.isfinite(top) and v >= top - INDEX_TOL * max(1.0, abs(top))):
            return i
    return None


class RngStream:
    def __init__(self, instance: JmsInstance, seed_or_rng):
        self.instance = instance
        self.rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)

    def start(self, i: int) -> int:
        c = self.instance.chains[i]
        if c.start_dist is None:
            return c.start
        return int(self.rng.choice(c.n_states, p=c.start_dist))

    def next_state(self, i: int, s: int) -> int:
        row = self.instance.chains[i].A[s]
        return int(min(np.searchsorted(np.cumsum(row), self.rng.random(), side="right"), len(row) - 1))


class ScriptedStream:
    """Transitions read from per-chain scripts: paths[i] lists successive next states."""

    def __init__(self, instance: JmsInstance, paths: Mapping[int, Sequence[int]]):
        self.instance = instance
        self.paths = {i: list(p) for i, p in paths.items()}

    def start(self, i: int) -> int:
        return self.instance.chains[i].start

    def next_state(self, i: int, s: int) -> int:
        nxt = self.paths[i].pop(0)
        if self.instance.chains[i].A[s, nxt] <= 0:
            raise ValueError(f"scripted transition {s}->{nxt} of chain {i} has probability 0")
        return nxt


@dataclass(frozen=True, eq=False)
class Trajectory:
    visits: tuple[np.ndarray, ...]
    reward: float
    selected: frozenset[int]
    plays: tuple[int, ...]


def run_index_policy(instance: JmsInstance, table: IndexTable, stream, tie: Sequence[int] | None = None
                     ) -> Trajectory:
    """Play the argmax-index chain while the top index is positive and capacity remains.

    tie: optional chain priority order (default: lowest chain index first).
    """
    states = [stream.start(i) for i in range(instance.n)]
    visits = [np.zeros(c.n_states) for c in instance.chains]
    reward = sum(c.prefix_reward for c in instance.chains)
    selected = set()
    plays = []
    while len(selected) < instance.capacity:
        i = _choose(table, states, instance, tie)
        if i is None:
            break
        c = instance.chains[i]
        s = states[i]
        visits[i][s] += 1
        reward += c.R[s]
        plays.append(i)
        nxt = stream.next_state(i, s)
        states[i] = nxt
        if nxt in c.terminal:
            visits[i][nxt] += 1
            reward += c.R[nxt]
            selected.add(i)
    return Trajectory(tuple(visits), float(reward), frozenset(selected), tuple(plays))


def _initial_states(instance: JmsInstance) -> list[tuple[tuple[int, ...], float]]:
    dists = []
    for c in instance.chains:
        init = c.initial()
        dists.append([(s, p) for s, p in enumerate(init) if p > 0])
    out = [((), 1.0)]
    for d in dists:
        out = [(st + (s,), p * q) for st, p in out for s, q in d]
    return out


@dataclass(frozen=True, eq=False)
class VisitVector:
    p: np.ndarray
    H_p: float
    stderr: np.ndarray | None = None
    trials: int | None = None

    def value(self, R: np.ndarray) -> float:
        return float(np.dot(self.p, R))


def visit_vector_exact(instance: JmsInstance, table: IndexTable, tie: Sequence[int] | None = None,
                       cap: int = DEFAULT_JOINT_CAP) -> VisitVector:
    """Expected visit counts via the joint chain induced by the index policy."""
    chains = instance.chains
    k = instance.capacity
    index: dict[tuple, int] = {}
    keys: list[tuple] = []
    action: list[int | None] = []
    rows, cols, vals = [], [], []
    init = _initial_states(instance)
    queue = deque()

    def get(key):
        j = index.get(key)
        if j is None:
            if len(keys) >= cap:
                raise CapExceededError(f"joint state space exceeds cap {cap}")
            j = len(keys)
            index[key] = j
            keys.append(key)
            action.append(None)
            queue.append(j)
        return j

    b_init = {}
    for st, p in init:
        j = get((st, 0))
        b_init[j] = b_init.get(j, 0.0) + p
    while queue:
        j = queue.popleft()
        states, count = keys[j]
        if count >= k:
            continue
        i = _choose(table, states, instance, tie)
        action[j] = i
        if i is None:
            continue
        c = chains[i]
        s = states[i]
        for nxt in np.flatnonzero(c.A[s]):
            ns = states[:i] + (int(nxt),) + states[i + 1:]
            nc = count + (1 if int(nxt) in c.terminal else 0)
            rows.append(get((ns, nc)))
            cols.append(j)
            vals.append(c.A[s, nxt])
    size = len(keys)
    P_T = csr_matrix((vals, (rows, cols)), shape=(size, size))
    rhs = np.zeros(size)
    for j, p in b_init.items():
        rhs[j] = p
    occ = spsolve((identity(size, format="csr") - P_T).tocsc(), rhs) if size > 1 else rhs
    occ = np.atleast_1d(occ)
    p = np.zeros(instance.d)
    off = instance.offsets
    for j, (states, count) in enumerate(keys):
        i = action[j]
        if i is None or occ[j] == 0:
            continue
        c = chains[i]
        s = states[i]
        p[off[i] + s] += occ[j]
        for t in c.terminal:
            if c.A[s, t] > 0:
                p[off[i] + t] += occ[j] * c.A[s, t]
    return VisitVector(p, instance.visit_bound())


def visit_vector_mc(instance: JmsInstance, table: IndexTable, trials: int, seed: int,
                    tie: Sequence[int] | None = None, max_steps: int = 1_000_000) -> VisitVector:
    """Vectorized trajectories; deterministic in seed."""
    rng = np.random.default_rng(seed)
    chains = instance.chains
    n = instance.n
    width = max(c.n_states for c in chains)
    # global ranks of index values, merged within tolerance
    flat = sorted({float(v) for sig in table.sigma for v in sig if not np.isnan(v)})
    merged = []
    for v in flat:
        if merged and (v == merged[-1][-1] or (math.isfinite(v) and math.isfinite(merged[-1][-1])
                                               and v - merged[-1][-1] <= INDEX_TOL * max(1.0, abs(v)))):
            merged[-1].append(v)
        else:
            merged.append([v])
    rank_of = {v: r + 1 for r, grp in enumerate(merged) for v in grp}
    rank = np.zeros((n, width), dtype=np.int64)
    playable = np.zeros((n, width), dtype=bool)
    cum = np.ones((n, width, width))
    term = np.zeros((n, width), dtype=bool)
    for i, c in enumerate(chains):
        for s in range(c.n_states):
            if s in c.terminal:
                term[i, s] = True
                continue
            v = float(table.sigma[i][s])
            rank[i, s] = rank_of[v]
            playable[i, s] = v > PLAY_TOL
            cum[i, s, :c.n_states] = np.cumsum(c.A[s])
            cum[i, s, c.n_states - 1] = 1.0
    prio = np.arange(n, 0, -1) if tie is None else np.array([n - list(tie).index(i) for i in range(n)])
    cur = np.empty((trials, n), dtype=np.int64)
    for i, c in enumerate(chains):
        if c.start_dist is None:
            cur[:, i] = c.start
        else:
            cd = np.cumsum(c.start_dist)
            cd[-1] = 1.0
            cur[:, i] = np.searchsorted(cd, rng.random(trials), side="right")
    counts = np.zeros((trials, instance.d))
    selected = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    off = instance.offsets
    cols = np.arange(n)[None, :]
    for _ in range(max_steps):
        if not active.any():
            break
        r = rank[cols, cur]
        ok = playable[cols, cur] & ~term[cols, cur]
        key = np.where(ok, r * (n + 1) + prio[None, :], -1)
        best = key.argmax(axis=1)
        go = active & (key[np.arange(trials), best] >= 0)
        active = go
        idx = np.flatnonzero(go)
        if len(idx) == 0:
            break
        ch = best[idx]
        s = cur[idx, ch]
        np.add.at(counts, (idx, off[ch] + s), 1.0)
        u = rng.random(len(idx))
        rows_cum = cum[ch, s]
        nxt = (u[:, None] >= rows_cum).sum(axis=1)
        nxt = np.minimum(nxt, width - 1)
        cur[idx, ch] = nxt
        hit = term[ch, nxt]
        np.add.at(counts, (idx[hit], off[ch[hit]] + nxt[hit]), 1.0)
        selected[idx[hit]] += 1
        active &= selected < instance.capacity
    else:
        raise RuntimeError("trajectory simulation exceeded max_steps")
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(instance.d)
    return VisitVector(mean, instance.visit_bound(), se, trials)


def visit_vector(instance: JmsInstance, table: IndexTable | None = None, method: str = "exact",
                 trials: int = 10_000, seed: int = 0, tie=None, cap: int = DEFAULT_JOINT_CAP) -> VisitVector:
    table = table or index_table(instance)
    if method == "exact":
        return visit_vector_exact(instance, table, tie, cap)
    if method == "mc":
        return visit_vector_mc(instance, table, trials, seed, tie)
    raise ValueError(f"unknown visit method {method!r}")


def policy_value(instance: JmsInstance, vv: VisitVector) -> float:
    return vv.value(instance.R) + sum(c.prefix_reward for c in instance.chains)


# ---------------------------------------------------------------------------
# brute force


def jms_brute_force_value(instance: JmsInstance, cap: int = 200_000, max_iter: int = 500) -> float:
    """Optimal value over all policies by policy iteration on the joint MDP (stop always allowed)."""
    chains = instance.chains
    k = instance.capacity
    index: dict[tuple, int] = {}
    keys: list[tuple] = []
    queue = deque()

    def get(key):
        j = index.get(key)
        if j is None:
            if len(keys) >= cap:
                raise CapExceededError(f"joint state space exceeds cap {cap}")
            j = len(keys)
            index[key] = j
            keys.append(key)
            queue.append(j)
        return j

    init = [(get((st, 0)), p) for st, p in _initial_states(instance)]
    # actions[j] = list of (reward, [(next, prob)])
    actions: list[list] = []
    while queue:
        j = queue.popleft()
        while len(actions) <= j:
            actions.append([])
        states, count = keys[j]
        if count >= k:
            continue
        acts = []
        for i, c in enumerate(chains):
            s = states[i]
            if s in c.terminal:
                continue
            r = c.R[s]
            trans = []
            for nxt in np.flatnonzero(c.A[s]):
                nxt = int(nxt)
                ns = states[:i] + (nxt,) + states[i + 1:]
                hit = nxt in c.terminal
                if hit:
                    r += c.A[s, nxt] * c.R[nxt]
                trans.append((get((ns, count + hit)), c.A[s, nxt]))
            acts.append((r, trans))
        actions[j] = acts
    while len(actions) < len(keys):
        actions.append([])
    size = len(keys)
    policy = [-1] * size  # -1 stop
    V = np.zeros(size)
    for _ in range(max_iter):
        rows, cols, vals = [], [], []
        rhs = np.zeros(size)
        for j in range(size):
            a = policy[j]
            if a < 0:
                continue
            r, trans = actions[j][a]
            rhs[j] = r
            for nxt, p in trans:
                rows.append(j)
                cols.append(nxt)
                vals.append(p)
        P = csr_matrix((vals, (rows, cols)), shape=(size, size))
        V = np.atleast_1d(spsolve((identity(size, format="csr") - P).tocsc(), rhs))
        changed = False
        for j in range(size):
            best_a, best_q = -1, 0.0
            for a, (r, trans) in enumerate(actions[j]):
                q = r + sum(p * V[nxt] for nxt, p in trans)
                if q > best_q + 1e-12 * (1.0 + abs(best_q)):
                    best_a, best_q = a, q
            cur = V[j]
            if best_q > cur + 1e-11 * (1.0 + abs(cur)) and best_a != policy[j]:
                policy[j] = best_a
                changed = True
        if not changed:
            break
    else:
        raise RuntimeError("policy iteration did not converge")
    return float(sum(p * V[j] for j, p in init) + sum(c.prefix_reward for c in chains))


# ---------------------------------------------------------------------------
# encodings


def pandora_chain(support: Sequence[float], probs: Sequence[float], cost: float) -> MarkovChain:
    """Root (reward -cost) -> value state per atom (reward 0) -> terminal (reward v)."""
    m = len(support)
    ell = 1 + 2 * m
    A = np.zeros((ell, ell))
    R = np.zeros(ell)
    R[0] = -cost
    for a, (v, p) in enumerate(zip(support, probs)):
        A[0, 1 + a] = p
        A[1 + a, 1 + m + a] = 1.0
        A[1 + m + a, 1 + m + a] = 1.0
        R[1 + m + a] = v
    labels = ("root",) + tuple(f"value{a}" for a in range(m)) + tuple(f"select{a}" for a in range(m))
    return MarkovChain(ell, frozenset(range(1 + m, ell)), A, R, 0, labels=labels)


def pandora_to_jms(instance: PandoraInstance) -> JmsInstance:
    return JmsInstance(tuple(pandora_chain(b.dist.support, b.dist.probs, b.cost) for b in instance.boxes),
                       instance.capacity)
