"""Regenerate the JSON fixtures under docs/fixtures."""
from __future__ import annotations

import pathlib

from fairsearch import schema
from fairsearch.instances import (counterexample, counterexample_constraints, example_fs, example_fs_parity,
                                  example_fs_jms_ball, example_tie, example_tie_parity)
from fairsearch.jms import pandora_to_jms

OUT = pathlib.Path(__file__).resolve().parent.parent / "docs" / "fixtures"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    files = {
        "example_fs.json": schema.pandora_to_dict(example_fs()),
        "example_fs_parity.json": schema.constraints_to_dict([example_fs_parity()]),
        "example_tie.json": schema.pandora_to_dict(example_tie()),
        "example_tie_parity.json": schema.constraints_to_dict([example_tie_parity()]),
        "counterexample.json": schema.pandora_to_dict(counterexample()),
        "counterexample_constraints.json": schema.constraints_to_dict(counterexample_constraints()),
    }
    jinst = pandora_to_jms(example_fs())
    files["example_fs_jms.json"] = schema.jms_to_dict(jinst)
    # selection parity on the select states (3 and 4) of each chain; chains 0, 1 are X
    theta = {f"{i}:{s}": (1.0 if i < 2 else -1.0) for i in range(4) for s in (3, 4)}
    files["example_fs_jms_parity.json"] = {
        "schema": schema.SCHEMA, "type": "jms_constraints",
        "affine": [{"name": "parity-selection", "theta": theta, "b": 0.0, "sense": "eq"}],
        "params": {"epsilon": 0.05, "delta": 0.05},
    }
    center, alpha, offset = example_fs_jms_ball()
    files["example_fs_jms_quadratic.json"] = {
        "schema": schema.SCHEMA, "type": "jms_constraints",
        "convex": [{"name": "near-parity-ball", "kind": "quadratic", "center": list(center),
                    "alpha": alpha, "offset": offset}],
        "params": {"epsilon": 0.05, "delta": 0.05},
    }
    for name, d in files.items():
        (OUT / name).write_text(schema.dumps(d))
        print("wrote", OUT / name)


if __name__ == "__main__":
    main()
