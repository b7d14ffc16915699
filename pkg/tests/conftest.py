import os
import sys

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from fairsearch.pandora import Box, PandoraInstance, ValueDistribution  # noqa: E402


@st.composite
def distributions(draw, max_atoms=3, lo=-5, hi=15):
    m = draw(st.integers(1, max_atoms))
    vals = sorted(set(draw(st.lists(st.integers(lo, hi), min_size=m, max_size=m))))
    w = draw(st.lists(st.integers(1, 6), min_size=len(vals), max_size=len(vals)))
    total = sum(w)
    probs = [x / total for x in w]
    probs[-1] = 1.0 - sum(probs[:-1])
    return ValueDistribution(tuple(float(v) for v in vals), tuple(probs))


@st.composite
def pandora_instances(draw, max_boxes=4, max_atoms=3, max_k=2, groups=False):
    n = draw(st.integers(2 if groups else 1, max_boxes))
    boxes = []
    for i in range(n):
        d = draw(distributions(max_atoms))
        cost = draw(st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0, 3.0]))
        g = ("X" if i % 2 == 0 else "Y") if groups else None
        boxes.append(Box(i + 1, d, cost, g))
    k = draw(st.integers(1, min(max_k, n)))
    return PandoraInstance(tuple(boxes), k)


@st.composite
def markov_chains(draw, max_states=4, self_loops=True):
    """Absorbing chains: non-terminal s moves to later states (or itself); the last one must exit."""
    import numpy as np

    from fairsearch.jms import MarkovChain

    m = draw(st.integers(1, max_states))  # non-terminal count
    t = draw(st.integers(1, 2))
    ell = m + t
    A = np.zeros((ell, ell))
    for s in range(m):
        targets = list(range(s + 1, ell))
        mask = draw(st.lists(st.booleans(), min_size=len(targets), max_size=len(targets)))
        chosen = [x for x, keep in zip(targets, mask) if keep] or [targets[-1]]
        w = draw(st.lists(st.integers(1, 4), min_size=len(chosen), max_size=len(chosen)))
        loop = self_loops and draw(st.booleans())
        total = sum(w) + (1 if loop else 0)
        for c, x in zip(chosen, w):
            A[s, c] += x / total
        if loop:
            A[s, s] += 1 / total
        A[s] /= A[s].sum()
    for j in range(m, ell):
        A[j, j] = 1.0
    R = np.array(draw(st.lists(st.sampled_from([-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0]),
                               min_size=ell, max_size=ell)))
    return MarkovChain(ell, frozenset(range(m, ell)), A, R, 0)


@st.composite
def jms_instances(draw, max_chains=3, max_states=3):
    from fairsearch.jms import JmsInstance

    n = draw(st.integers(1, max_chains))
    chains = tuple(draw(markov_chains(max_states)) for _ in range(n))
    k = draw(st.integers(1, n))
    return JmsInstance(chains, k)
