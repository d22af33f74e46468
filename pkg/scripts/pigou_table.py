"""Pigou network: solver output against the closed form at a few alphas."""
import argparse

from fairflow.assignment import solve
from fairflow.fairness import unfairness_U
from fairflow.network import build_pigou
from fairflow.oracle import pigou_solve


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=1, help="degree of the congestible edge")
    ap.add_argument("--eps", type=float, default=0.0, help="slope of the constant edge")
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    args = ap.parse_args(argv)

    net = build_pigou(args.m, args.eps)
    print(f"{'alpha':>6} {'x1':>9} {'x2':>9} {'TT':>9} {'U':>9} {'TT oracle':>10} {'U oracle':>9}")
    for a in args.alphas:
        fs = solve(net, a)
        ref = pigou_solve(args.m, args.eps, 1.0, a)
        u = unfairness_U(net, fs).aggregate
        x1, x2 = fs.edge_flow
        print(f"{a:6.2f} {x1:9.5f} {x2:9.5f} {fs.h_so:9.5f} {u:9.5f} "
              f"{ref.total_travel_time:10.5f} {ref.unfairness:9.5f}")


if __name__ == "__main__":
    main()
