"""JSON encoding for instances, constraints and solutions (schema "cs-1").

Floats are written in their shortest round-trip form (integral values as
integers), so every value parses back bit for bit.  Infinite and missing values use the Infinity / NaN tokens
that Python's json module reads back.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .constrained import AffineConstraint, PolicyAtom, RandomizedIndexPolicy, adjust_instance
from .grdip import ConvexConstraintSpec, JmsAffineConstraint, quadratic_constraint
from .jms import JmsInstance, MarkovChain
from .pandora import OUTSIDE, Box, PandoraInstance, TieBreakRule, ValueDistribution

SCHEMA = "cs-1"


class SchemaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# writer


def _num(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    if x == int(x) and abs(x) < 2 ** 53:
        return str(int(x))
    return repr(float(x))  # shortest round-trip form


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," if indent else ", "
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # flat numeric rows stay on one line
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, 0, 0) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def loads(text: str) -> Any:
    return json.loads(text)


def _require(d: Mapping, kind: str) -> None:
    if d.get("schema") != SCHEMA:
        raise SchemaError(f"expected schema {SCHEMA!r}, got {d.get('schema')!r}")
    if d.get("type") != kind:
        raise SchemaError(f"expected type {kind!r}, got {d.get('type')!r}")


# ---------------------------------------------------------------------------
# Pandora


def pandora_to_dict(inst: PandoraInstance) -> dict:
    return {
        "schema": SCHEMA,
        "type": "pandora_instance",
        "capacity": inst.capacity,
        "boxes": [
            {"id": b.id, "support": list(b.dist.support), "probs": list(b.dist.probs), "cost": b.cost,
             **({"group": b.group} if b.group is not None else {})}
            for b in inst.boxes
        ],
    }


def pandora_from_dict(d: Mapping) -> PandoraInstance:
    _require(d, "pandora_instance")
    boxes = tuple(
        Box(int(b["id"]), ValueDistribution(tuple(b["support"]), tuple(b["probs"])), float(b["cost"]),
            b.get("group"))
        for b in d["boxes"]
    )
    return PandoraInstance(boxes, int(d.get("capacity", 1)))


def _coef_to_json(c):
    if isinstance(c, Mapping):
        return [[float(v), float(x)] for v, x in c.items()]
    return float(c)


def _coef_from_json(c):
    if isinstance(c, list):
        return {float(v): float(x) for v, x in c}
    return float(c)


def constraint_to_dict(c: AffineConstraint) -> dict:
    return {
        "name": c.name,
        "theta_S": {str(k): _coef_to_json(v) for k, v in c.theta_S.items()},
        "theta_I": {str(k): _coef_to_json(v) for k, v in c.theta_I.items()},
        "b": c.b,
        "sense": c.sense,
    }


def constraint_from_dict(d: Mapping) -> AffineConstraint:
    if "kind" in d:
        from .simlab import build_constraint

        return build_constraint(d["kind"], d.get("stage", "selection"), d["X"], d["Y"], d.get("theta"),
                                d.get("bound"))
    return AffineConstraint(
        theta_S={int(k): _coef_from_json(v) for k, v in d.get("theta_S", {}).items()},
        theta_I={int(k): _coef_from_json(v) for k, v in d.get("theta_I", {}).items()},
        b=float(d.get("b", 0.0)),
        sense=d.get("sense", "eq"),
        name=d.get("name", ""),
    )


def constraints_to_dict(cs: Sequence[AffineConstraint]) -> dict:
    return {"schema": SCHEMA, "type": "constraints", "constraints": [constraint_to_dict(c) for c in cs]}


def constraints_from_dict(d: Mapping) -> list[AffineConstraint]:
    _require(d, "constraints")
    return [constraint_from_dict(c) for c in d["constraints"]]


def constraints_equal(a: AffineConstraint, b: AffineConstraint) -> bool:
    return constraint_to_dict(a) == constraint_to_dict(b)


# ---------------------------------------------------------------------------
# tie rules and policies


def rule_to_dict(rule: TieBreakRule, constraints: Sequence[AffineConstraint]) -> dict:
    out: dict = {"kind": rule.kind}
    if rule.kind in ("negative_extreme", "positive_extreme"):
        out["constraint"] = _index_of(rule.constraints[0], constraints)
    elif rule.kind == "perturbation":
        out["constraints"] = [_index_of(c, constraints) for c in rule.constraints]
        out["omegas"] = [[float(x) for x in w] for w in rule.omegas]
    elif rule.kind == "explicit_scores":
        out["scores"] = {str(k): (list(v) if isinstance(v, tuple) else v) for k, v in rule.scores.items()}
    return out


def _index_of(c, constraints) -> int:
    for i, x in enumerate(constraints):
        if x is c:
            return i
    for i, x in enumerate(constraints):
        if constraints_equal(x.with_sense("eq"), c.with_sense("eq")):
            return i
    raise SchemaError("tie rule refers to a constraint outside the solution's list")


def rule_from_dict(d: Mapping, constraints: Sequence[AffineConstraint]) -> TieBreakRule:
    kind = d["kind"]
    if kind == "lexicographic":
        return TieBreakRule.lexicographic()
    if kind == "negative_extreme":
        return TieBreakRule.negative(constraints[d["constraint"]])
    if kind == "positive_extreme":
        return TieBreakRule.positive(constraints[d["constraint"]])
    if kind == "perturbation":
        return TieBreakRule.perturbation([constraints[i] for i in d["constraints"]],
                                         [tuple(w) for w in d["omegas"]])
    if kind == "explicit_scores":
        scores = {}
        for k, v in d["scores"].items():
            key = OUTSIDE if k == OUTSIDE else int(k)
            scores[key] = tuple(v) if isinstance(v, list) else v
        return TieBreakRule.explicit(scores)
    raise SchemaError(f"unknown tie rule kind {kind!r}")


@dataclass(frozen=True)
class SolutionRecord:
    """Serializable summary of a randomized index policy and its statistics."""

    kind: str
    method: str
    lambda_star: tuple[float, ...]
    utility: float
    utility_stderr: float
    slacks: tuple[tuple[str, float, float], ...]
    atoms: tuple[tuple[float, tuple[float, ...], Any], ...]  # (weight, lambdas, rule dict)
    extra: tuple[tuple[str, Any], ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "type": self.kind,
            "method": self.method,
            "lambda_star": list(self.lambda_star),
            "utility": self.utility,
            "utility_stderr": self.utility_stderr,
            "slacks": [{"name": n, "slack": s, "stderr": e} for n, s, e in self.slacks],
            "atoms": [{"weight": w, "lambdas": list(l), "rule": _thaw(r)} for w, l, r in self.atoms],
            **{k: _thaw(v) for k, v in self.extra},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SolutionRecord":
        if d.get("schema") != SCHEMA:
            raise SchemaError(f"expected schema {SCHEMA!r}")
        core = {"schema", "type", "method", "lambda_star", "utility", "utility_stderr", "slacks", "atoms"}
        return cls(
            kind=d["type"],
            method=d["method"],
            lambda_star=tuple(float(x) for x in d["lambda_star"]),
            utility=float(d["utility"]),
            utility_stderr=float(d["utility_stderr"]),
            slacks=tuple((s["name"], float(s["slack"]), float(s["stderr"])) for s in d["slacks"]),
            atoms=tuple((float(a["weight"]), tuple(float(x) for x in a["lambdas"]), _freeze(a["rule"]))
                        for a in d["atoms"]),
            extra=tuple((k, _freeze(v)) for k, v in d.items() if k not in core),
        )


def _freeze(v):
    """Hashable, comparable view of parsed JSON."""
    if isinstance(v, Mapping):
        return tuple((k, _freeze(x)) for k, x in v.items())
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return v


def _thaw(v):
    if isinstance(v, tuple) and v and all(isinstance(x, tuple) and len(x) == 2 and isinstance(x[0], str)
                                          for x in v):
        return {k: _thaw(x) for k, x in v}
    if isinstance(v, tuple):
        return [_thaw(x) for x in v]
    return v


def policy_record(kind: str, policy: RandomizedIndexPolicy, constraints: Sequence[AffineConstraint], evaluator,
                  extra: Mapping | None = None) -> SolutionRecord:
    u, use = policy.utility(evaluator)
    slacks = tuple((c.name, *policy.slack(c, evaluator)) for c in constraints)
    atoms = tuple((a.weight, tuple(a.adjusted.lambdas), _freeze(rule_to_dict(a.rule, a.adjusted.constraints)))
                  for a in policy.atoms)
    return SolutionRecord(kind, evaluator.method, tuple(policy.lambda_star), u, use, slacks, atoms,
                          tuple((k, _freeze(v)) for k, v in (extra or {}).items()))


def policy_from_record(rec: SolutionRecord, instance: PandoraInstance,
                       constraints: Sequence[AffineConstraint]) -> RandomizedIndexPolicy:
    """Rebuild the mixture; atoms adjust by every listed constraint with the stored lambdas."""
    constraints = tuple(constraints)
    atoms = []
    for w, lams, rule in rec.atoms:
        rd = _thaw(rule)
        cons = constraints if len(lams) == len(constraints) else constraints[:len(lams)]
        adj = adjust_instance(instance, list(cons), list(lams))
        atoms.append(PolicyAtom(adj, rule_from_dict(rd, cons), w))
    return RandomizedIndexPolicy(tuple(atoms), rec.lambda_star)


# ---------------------------------------------------------------------------
# JMS


def chain_to_dict(c: MarkovChain) -> dict:
    out = {"n_states": c.n_states, "terminal": sorted(c.terminal), "A": c.A.tolist(), "R": c.R.tolist(),
           "start": c.start}
    if c.start_dist is not None:
        out["start_dist"] = c.start_dist.tolist()
    if c.prefix_reward:
        out["prefix_reward"] = c.prefix_reward
    if c.labels is not None:
        out["labels"] = list(c.labels)
    return out


def chain_from_dict(d: Mapping) -> MarkovChain:
    return MarkovChain(int(d["n_states"]), frozenset(d["terminal"]), np.array(d["A"], dtype=float),
                       np.array(d["R"], dtype=float), int(d.get("start", 0)), d.get("start_dist"),
                       float(d.get("prefix_reward", 0.0)), tuple(d["labels"]) if "labels" in d else None)


def jms_to_dict(inst: JmsInstance) -> dict:
    return {"schema": SCHEMA, "type": "jms_instance", "capacity": inst.capacity,
            "chains": [chain_to_dict(c) for c in inst.chains]}


def jms_from_dict(d: Mapping) -> JmsInstance:
    _require(d, "jms_instance")
    return JmsInstance(tuple(chain_from_dict(c) for c in d["chains"]), int(d.get("capacity", 1)))


def _theta_vector(spec, inst: JmsInstance) -> np.ndarray:
    if isinstance(spec, Mapping):
        th = np.zeros(inst.d)
        for key, v in spec.items():
            i, s = (int(x) for x in key.split(":"))
            th[inst.flat(i, s)] = float(v)
        return th
    th = np.asarray(spec, dtype=float)
    if th.shape != (inst.d,):
        raise SchemaError(f"theta has length {th.size}, instance has {inst.d} states")
    return th


@dataclass(frozen=True, eq=False)
class JmsConstraintSet:
    affine: tuple[JmsAffineConstraint, ...]
    convex: tuple[ConvexConstraintSpec, ...]
    params: dict


def jms_constraints_from_dict(d: Mapping, inst: JmsInstance) -> JmsConstraintSet:
    """affine rows take theta as a full vector or a {"chain:state": coef} map."""
    _require(d, "jms_constraints")
    affine = tuple(JmsAffineConstraint(_theta_vector(a["theta"], inst), float(a.get("b", 0.0)),
                                       a.get("sense", "leq"), a.get("name", f"affine{j}"))
                   for j, a in enumerate(d.get("affine", [])))
    convex = []
    for j, c in enumerate(d.get("convex", [])):
        if c.get("kind", "quadratic") != "quadratic":
            raise SchemaError(f"unsupported convex constraint kind {c.get('kind')!r}")
        center = c.get("center", [0.0] * inst.d)
        if isinstance(center, Mapping):
            center = _theta_vector(center, inst)
        convex.append(quadratic_constraint(center, float(c.get("alpha", 1.0)), float(c.get("offset", 0.0)),
                                           inst.visit_bound(), c.get("name", f"convex{j}")))
    return JmsConstraintSet(affine, tuple(convex), dict(d.get("params", {})))


def load_json(path) -> Any:
    with open(path) as fh:
        return json.load(fh)


def write_text(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)
