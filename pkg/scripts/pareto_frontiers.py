"""Pareto frontiers (inefficiency against unfairness budget) for I-TAP and I-Solution."""
import argparse
from pathlib import Path

from fairflow.network import build_pigou, load_sioux_falls
from fairflow.sweep import (beta_grid, dense_sweep, dominance_report, i_solution_sweep,
                            pareto_frontier, pareto_to_csv, resolve_jobs)

INSTANCES = {"pigou": build_pigou, "pigou-m4": lambda: build_pigou(4, 1e-6),
             "sioux-falls": load_sioux_falls}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", nargs="+", choices=sorted(INSTANCES), default=sorted(INSTANCES))
    ap.add_argument("--step", type=float, default=0.01)
    ap.add_argument("--metric", default="U", choices=["U", "envy_free", "used_nash", "gini"])
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("pareto"))
    args = ap.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    betas = beta_grid()
    for name in args.instances:
        net = INSTANCES[name]()
        itap = pareto_frontier(dense_sweep(net, args.step, jobs=resolve_jobs(args.jobs)),
                               betas, args.metric)
        isol = pareto_frontier(i_solution_sweep(net, args.step), betas, args.metric)
        path = args.out / f"{name}.csv"
        path.write_text(pareto_to_csv(itap + isol))
        rep = dominance_report(itap, isol)
        print(f"{name:12s} I-TAP above I-Solution at {len(rep['violations'])} of "
              f"{rep['compared']} betas -> {path}")
        for a, b in zip(itap[::4], isol[::4]):
            print(f"   beta {a.beta:4.2f}  rho I-TAP {a.ineff_ratio:.5f} (alpha {a.param:.2f})"
                  f"  rho I-Solution {b.ineff_ratio:.5f} (gamma {b.param:.2f})")


if __name__ == "__main__":
    main()
