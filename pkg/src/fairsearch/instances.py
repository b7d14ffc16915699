"""Small named instances used by the tests, the docs fixtures and the scripts."""
from __future__ import annotations

from .constrained import AffineConstraint, parity_inspection, parity_selection
from .pandora import Box, PandoraInstance, ValueDistribution

D = ValueDistribution


def example_fs() -> PandoraInstance:
    """Four candidates, one hire. X = {1, 2}, Y = {3, 4}; indices 8, 7, 6, 5."""
    vals = [(4.0, 10.0), (3.0, 9.0), (2.0, 8.0), (1.0, 7.0)]
    return PandoraInstance(
        tuple(Box(i + 1, D(v, (0.5, 0.5)), 1.0, "X" if i < 2 else "Y") for i, v in enumerate(vals)), 1)


def example_fs_parity() -> AffineConstraint:
    return parity_selection((1, 2), (3, 4))


def example_tie() -> PandoraInstance:
    """Boxes 1-3 share index 6, box 4 has index 5."""
    return PandoraInstance((
        Box(1, D((4.0, 7.5), (1 / 3, 2 / 3)), 1.0, "X"),
        Box(2, D((4.0, 9.0), (2 / 3, 1 / 3)), 1.0, "X"),
        Box(3, D((4.0, 10.0), (3 / 4, 1 / 4)), 1.0, "Y"),
        Box(4, D((4.0, 7.0), (1 / 2, 1 / 2)), 1.0, "Y"),
    ), 1)


def example_tie_parity() -> AffineConstraint:
    return parity_inspection((1, 2), (3, 4))


def counterexample(p2: float = 0.1, p3: float = 0.8) -> PandoraInstance:
    """Three boxes with equal index 4 where the two extreme perturbation vertices fail to cover 0."""
    return PandoraInstance((
        Box(1, D((6.0,), (1.0,)), 2.0),
        Box(2, D((2.0, 14.0), (1 - p2, p2)), 1.0),
        Box(3, D((3.0, 9.0), (1 - p3, p3)), 4.0),
    ), 1)


def counterexample_constraints() -> tuple[AffineConstraint, AffineConstraint]:
    """(inspection, selection) equalities with theta = (-1, -1, 2)."""
    th = {1: -1.0, 2: -1.0, 3: 2.0}
    return (AffineConstraint(theta_I=th, b=0.0, sense="eq", name="inspection"),
            AffineConstraint(theta_S=th, b=0.0, sense="eq", name="selection"))


# Visit vector (chain by chain: root, value states, select states) of a
# selection-parity optimum of Example-FS in its JMS encoding.
EXAMPLE_FS_FAIR_VISITS = tuple(x / 16 for x in (
    14, 0, 7, 0, 7,
    2, 0, 1, 0, 1,
    10, 1, 5, 1, 5,
    4, 0, 2, 0, 2,
))


def example_fs_jms_ball(radius: float = 0.3) -> tuple[tuple[float, ...], float, float]:
    """(center, alpha, offset) of the ball |p - fair visits| <= radius as alpha/2 |p - c|^2 + offset <= 0."""
    return EXAMPLE_FS_FAIR_VISITS, 1.0, -0.5 * radius ** 2
