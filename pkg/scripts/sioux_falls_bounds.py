"""Sioux Falls sweep against the a-priori efficiency and fairness bounds.

Writes one CSV row per alpha: inefficiency ratio, its upper bound,
unfairness U and the unfairness guarantee 1 + m alpha (where it applies).
"""
import argparse
import time
from pathlib import Path

from fairflow.assignment import SolverConfig
from fairflow.formatting import csv_text
from fairflow.network import load_sioux_falls
from fairflow.sweep import (alpha_star_crossover, branch_intersection_alpha, dense_sweep,
                            ineff_bound_thm1, resolve_jobs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--step", type=float, default=0.01)
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("sioux_falls_bounds.csv"))
    args = ap.parse_args(argv)

    net = load_sioux_falls()
    t0 = time.perf_counter()
    recs = dense_sweep(net, args.step, SolverConfig(max_iterations=args.iters),
                       jobs=resolve_jobs(args.jobs))
    secs = time.perf_counter() - t0
    m = net.max_degree
    rows, worst_rho, worst_u = [], -float("inf"), -float("inf")
    for r in recs:
        bound = ineff_bound_thm1(recs, r.alpha) if 0 < r.alpha < 1 else float("nan")
        guarantee = 1 + m * r.alpha if m * r.alpha <= 1 else float("nan")
        if bound == bound:
            worst_rho = max(worst_rho, r.ineff_ratio - bound)
        if guarantee == guarantee:
            worst_u = max(worst_u, r.u - guarantee)
        rows.append((r.alpha, r.ineff_ratio, bound, r.u, guarantee, r.relative_gap))
    args.out.write_text(csv_text(("alpha", "ineff_ratio", "ineff_bound", "u", "u_guarantee", "gap"),
                                 rows))
    print(f"{len(recs)} solves in {secs:.1f} s -> {args.out}")
    print(f"rho_bar                  {recs[0].ineff_ratio:.6f}")
    print(f"alpha* closed form       {alpha_star_crossover(recs):.6f}")
    print(f"alpha* branch meeting    {branch_intersection_alpha(recs):.6f}")
    print(f"max rho - bound          {worst_rho:.3e}")
    print(f"max U - (1 + {m} alpha)   {worst_u:.3e}")


if __name__ == "__main__":
    main()
