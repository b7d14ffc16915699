"""Run a simlab grid and write one CSV row per cell.

    python scripts/run_experiments.py --out results.csv            # bias sweep
    python scripts/run_experiments.py --config grid.json --out x.csv
    python scripts/run_experiments.py --quick --out smoke.csv      # seconds, for a smoke test
"""
from __future__ import annotations

import argparse
import logging
import time

from fairsearch.simlab import BiasScenario, ConstraintSpec, ExperimentConfig, run_experiment

GRIDS = {
    # price of fairness and unconstrained slack against the bias factor
    "bias": dict(rhos=(0.1, 0.3, 0.5, 0.7, 0.9, 1.0), capacities=(8, 15, 20),
                 constraints=(ConstraintSpec("parity", "selection"),)),
    # minimum-share quotas for the minority group
    "quota": dict(rhos=(0.7,), capacities=(20,),
                  constraints=tuple(ConstraintSpec("quota", "selection", theta=t) for t in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5))),
    # inspection parity, the other stage
    "inspection": dict(rhos=(0.5, 0.7, 1.0), capacities=(20,), constraints=(ConstraintSpec("parity", "inspection"),)),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="ExperimentConfig JSON; overrides --grid")
    ap.add_argument("--grid", choices=sorted(GRIDS), default="bias")
    ap.add_argument("--out", required=True)
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--replicates", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--quick", action="store_true", help="tiny scenario and few trials")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        grid = dict(GRIDS[args.grid])
        scenario = BiasScenario()
        trials = args.trials
        if args.quick:
            grid["capacities"] = (2,)
            scenario = BiasScenario(n=8, capacity=2, grid_points=5)
            trials = min(trials, 200)
        cfg = ExperimentConfig(**grid, replicates=args.replicates, trials=trials, seed=args.seed,
                               scenario=scenario, workers=args.workers)
    t = time.perf_counter()
    rows = run_experiment(cfg, args.out)
    print(f"{len(rows)}/{len(cfg.cells())} cells written to {args.out} in {time.perf_counter() - t:.1f}s")


if __name__ == "__main__":
    main()
