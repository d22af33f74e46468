"""Command-line entry point.

    fairflow solve   --builtin sioux-falls --alpha 0.5 --out run/
    fairflow sweep   --net N.tntp --trips T.tntp --step 0.01 --out run/
    fairflow pareto  --builtin pigou --betas 1:0.05:2 --methods itap,isolution --out run/
    fairflow beta-so --builtin pigou --beta 1.5
    fairflow price   --builtin pigou --alpha 0.5 [--classes classes.json] --out run/
    fairflow bounds  --builtin sioux-falls --beta 1.1 1.2

Exit codes: 0 success, 2 unreadable or invalid input, 3 routing failure,
1 any other package error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .assignment import SolverConfig, solve
from .errors import (FairflowError, InstanceError, ParameterError, ParseError, RoutingError,
                     ValidationError)
from .fairness import METRICS, all_metrics
from .formatting import csv_text, fmt
from .network import Network, build_pigou, check, load_sioux_falls, load_tntp
from .pricing import (check_tightness, classes_from_json, complementary_slackness, dual_tolls,
                      heterogeneous_lp, marginal_tolls, unrecorded_path_slack, verify_enforcement)
from .sweep import (SweepRecord, alpha_grid, alpha_star_crossover, beta_grid,
                    branch_intersection_alpha, dense_sweep, dominance_report, feasible_alpha_thm2, i_solution_sweep, ineff_bound_thm1,
                    pareto_frontier, pareto_to_csv, records_from_csv, records_to_csv,
                    resolve_jobs, select_beta_so, unfairness_outliers)

log = logging.getLogger("fairflow")

EXIT_INPUT = 2
EXIT_ROUTING = 3


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    instance: dict
    parameters: dict
    version: str = __version__
    wall_seconds: float = 0.0
    outputs: list[str] = field(default_factory=list)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path


# ----------------------------------------------------------------------------
# argument parsing

def _beta_list(text: str) -> list[float]:
    """'1:0.05:2' (inclusive range) or '1,1.5,2'."""
    try:
        if ":" in text:
            lo, step, hi = (float(p) for p in text.split(":"))
            return beta_grid(lo, hi, step)
        return [float(p) for p in text.split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad beta list {text!r}") from exc


def _add_instance(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("instance")
    g.add_argument("--net", help="TNTP network file")
    g.add_argument("--trips", help="TNTP trips file")
    g.add_argument("--instance", help="JSON instance file")
    g.add_argument("--builtin", choices=("pigou", "sioux-falls"))
    g.add_argument("--pigou-m", type=int, default=1)
    g.add_argument("--pigou-eps", type=float, default=0.0)
    g.add_argument("--pigou-demand", type=float, default=1.0)


def _add_solver(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--iters", type=int, default=100)
    g.add_argument("--gap", type=float, default=1e-5)
    g.add_argument("--method", choices=("fw", "cfw", "path"), default="path")
    g.add_argument("--record-threshold", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairflow", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"fairflow {__version__}")
    ap.add_argument("--jobs", type=int, default=None,
                    help="worker processes for sweeps (FAIRFLOW_JOBS overrides)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve I-TAP at one alpha")
    _add_instance(p)
    _add_solver(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep", help="dense alpha sweep")
    _add_instance(p)
    _add_solver(p)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--isolution", action="store_true", help="also sweep the I-Solution baseline")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("pareto", help="efficiency-fairness frontier")
    _add_instance(p)
    _add_solver(p)
    p.add_argument("--sweep-csv", type=Path, help="reuse an I-TAP sweep CSV")
    p.add_argument("--isolution-csv", type=Path, help="reuse an I-Solution sweep CSV")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--betas", type=_beta_list, default=beta_grid())
    p.add_argument("--methods", default="itap,isolution")
    p.add_argument("--metric", choices=METRICS, default="U")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("beta-so", help="best beta-fair sweep point")
    _add_instance(p)
    _add_solver(p)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--metric", choices=METRICS, default="U")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("price", help="enforcing tolls for x(alpha)")
    _add_instance(p)
    _add_solver(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--classes", type=Path, help="JSON list of [commodity, value_of_time, share]")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("bounds", help="a-priori efficiency and fairness bounds")
    _add_instance(p)
    _add_solver(p)
    p.add_argument("--beta", type=float, nargs="*", default=[1.05, 1.1, 1.2, 1.5, 2.0])
    p.add_argument("--step", type=float, default=0.05, help="alpha spacing of bound samples")
    p.add_argument("--out", type=Path)
    return ap


def load_instance(args) -> tuple[Network, dict]:
    sources = [args.builtin is not None, args.instance is not None,
               args.net is not None or args.trips is not None]
    if sum(sources) != 1:
        raise ParameterError("give exactly one of --builtin, --instance, or --net with --trips")
    if args.builtin == "pigou":
        return (build_pigou(args.pigou_m, args.pigou_eps, args.pigou_demand),
                {"builtin": "pigou", "m": args.pigou_m, "epsilon": args.pigou_eps,
                 "demand": args.pigou_demand})
    if args.builtin == "sioux-falls":
        return load_sioux_falls(), {"builtin": "sioux-falls"}
    if args.instance:
        text = Path(args.instance).read_text()
        try:
            net = Network.from_json(text)
        except (ValueError, KeyError, TypeError) as exc:
            raise InstanceError(f"{args.instance}: malformed instance JSON ({exc})") from exc
        return check(net), {"instance": args.instance}
    if not (args.net and args.trips):
        raise ParameterError("--net and --trips must be given together")
    return load_tntp(args.net, args.trips), {"net": args.net, "trips": args.trips}


def _cfg(args) -> SolverConfig:
    return SolverConfig(max_iterations=args.iters, target_relative_gap=args.gap,
                        method=args.method, path_record_threshold=args.record_threshold)


def _params(args) -> dict:
    skip = {"command", "verbose", "net", "trips", "instance", "builtin"}
    out = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _write(out_dir: Path | None, name: str, text: str, outputs: list[str]) -> None:
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    outputs.append(str(path))


# ----------------------------------------------------------------------------
# commands

def cmd_solve(args, net, outputs) -> None:
    t0 = time.perf_counter()
    fs = solve(net, args.alpha, _cfg(args))
    wall = time.perf_counter() - t0
    reports = all_metrics(net, fs)
    rows = [row for r in reports.values() for row in r.csv_rows()]
    _write(args.out, "flowstate.json", fs.to_json(net) + "\n", outputs)
    _write(args.out, "unfairness.csv", csv_text(("metric", "commodity", "value"), rows), outputs)
    print(f"alpha       {fmt(fs.alpha)}")
    print(f"h_so        {fmt(fs.h_so)}   (total travel time; rho needs h_so at alpha=1)")
    print(f"h_ue        {fmt(fs.h_ue)}")
    print(f"gap         {fs.relative_gap:.3e} after {fs.iterations} iterations")
    for name, r in reports.items():
        print(f"{name:<11} {fmt(r.aggregate)}")
    print(f"wall        {wall:.3f} s")


def _sweeps(args, net, jobs):
    cfg = _cfg(args)
    recs = dense_sweep(net, args.step, cfg, jobs=jobs, keep_states=True)
    ue = next((r.state for r in recs if r.alpha == 0.0 and r.ok), None)
    so = next((r.state for r in recs if r.alpha == 1.0 and r.ok), None)
    return recs, ue, so


def cmd_sweep(args, net, outputs) -> None:
    jobs = resolve_jobs(args.jobs)
    recs, ue, so = _sweeps(args, net, jobs)
    _write(args.out, "sweep.csv", records_to_csv(recs), outputs)
    failed = [r for r in recs if not r.ok]
    for r in failed:
        print(f"alpha={fmt(r.alpha)} failed: {r.error}", file=sys.stderr)
    if args.isolution:
        iso = i_solution_sweep(net, args.step, _cfg(args), ue=ue, so=so)
        _write(args.out, "isolution.csv", records_to_csv(iso), outputs)
    if args.out is None:
        sys.stdout.write(records_to_csv(recs))
    outliers = unfairness_outliers(recs)
    print(f"{len(recs)} records, {len(failed)} failed, U outliers at {outliers}", file=sys.stderr)


def cmd_pareto(args, net, outputs) -> None:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = set(methods) - {"itap", "isolution"}
    if bad:
        raise ParameterError(f"unknown method(s) {sorted(bad)}")
    frontiers = {}
    itap = records_from_csv(args.sweep_csv.read_text()) if args.sweep_csv else None
    iso = (records_from_csv(args.isolution_csv.read_text(), "isolution")
           if args.isolution_csv else None)
    ue = so = None
    if (itap is None and "itap" in methods) or (iso is None and "isolution" in methods):
        if net is None:
            raise ParameterError("an instance is needed when sweep CSVs are not supplied")
        if itap is None:
            itap, ue, so = _sweeps(args, net, resolve_jobs(args.jobs))
        if iso is None and "isolution" in methods:
            iso = i_solution_sweep(net, args.step, _cfg(args), ue=ue, so=so)
    if "itap" in methods:
        frontiers["itap"] = pareto_frontier(itap, args.betas, args.metric, "itap")
    if "isolution" in methods:
        frontiers["isolution"] = pareto_frontier(iso, args.betas, args.metric, "isolution")
    points = [p for m in methods for p in frontiers[m]]
    text = pareto_to_csv(points)
    _write(args.out, "pareto.csv", text, outputs)
    if args.out is None:
        sys.stdout.write(text)
    if len(frontiers) == 2:
        rep = dominance_report(frontiers["itap"], frontiers["isolution"])
        print(f"I-TAP above I-Solution at {len(rep['violations'])} of {rep['compared']} betas",
              file=sys.stderr)


def cmd_beta_so(args, net, outputs) -> None:
    recs = dense_sweep(net, args.step, _cfg(args), jobs=resolve_jobs(args.jobs))
    pt = select_beta_so(recs, args.beta, args.metric)
    row = {"beta": pt.beta, "alpha": pt.param, "ineff_ratio": pt.ineff_ratio,
           "unfairness": pt.unfairness, "metric": args.metric}
    _write(args.out, "beta_so.json", json.dumps(row, indent=1) + "\n", outputs)
    print(f"beta={fmt(pt.beta)} alpha*={fmt(pt.param)} rho={fmt(pt.ineff_ratio)} "
          f"{args.metric}={fmt(pt.unfairness)}")


def cmd_price(args, net, outputs) -> None:
    cfg = _cfg(args)
    fs = solve(net, args.alpha, cfg)
    if args.classes is None:
        tolls = marginal_tolls(net, fs)
        rep = verify_enforcement(net, fs, tolls, cfg)
        summary = {"provenance": tolls.provenance, "flow_deviation": rep.flow_deviation,
                   "norm_deviation": rep.norm_deviation, "cost_spread": rep.cost_spread,
                   "passed": rep.passed}
    else:
        classes = classes_from_json(args.classes.read_text())
        lp = heterogeneous_lp(net, fs, classes)
        tight = check_tightness(lp)
        tolls = dual_tolls(lp, args.alpha)
        cs = complementary_slackness(lp, tolls)
        slack = unrecorded_path_slack(net, lp, tolls)
        summary = {"provenance": tolls.provenance, "tight": tight.tight,
                   "worst_slack": tight.worst, "cs_violation": cs,
                   "unrecorded_path_slack": slack, "columns_added": lp.added_columns,
                   "passed": tight.tight and cs <= 1e-6 and slack >= -1e-6}
    _write(args.out, "tolls.csv", tolls.to_csv(), outputs)
    _write(args.out, "verification.json", json.dumps(summary, indent=1) + "\n", outputs)
    if args.out is None:
        sys.stdout.write(tolls.to_csv())
    print(" ".join(f"{k}={fmt(v) if isinstance(v, float) else v}" for k, v in summary.items()),
          file=sys.stderr)


def _endpoint_records(net, cfg) -> list[SweepRecord]:
    recs = []
    for a in (0.0, 1.0):
        fs = solve(net, a, cfg)
        recs.append(SweepRecord(a, fs.h_so, fs.h_ue, relative_gap=fs.relative_gap,
                                iterations=fs.iterations))
    return recs


def cmd_bounds(args, net, outputs) -> None:
    if not 0 < args.step < 1:
        raise ParameterError(f"step must lie in (0, 1), got {args.step}")
    ends = _endpoint_records(net, _cfg(args))
    grid = [a for a in alpha_grid(args.step) if 0 < a < 1]
    rows = [(a, ineff_bound_thm1(ends, a)) for a in grid]
    betas = [(b, feasible_alpha_thm2(net, b)) for b in args.beta]
    _write(args.out, "bounds.csv", csv_text(("alpha", "efficiency_bound"), rows), outputs)
    _write(args.out, "feasible_alpha.csv", csv_text(("beta", "feasible_alpha"), betas), outputs)
    print(f"rho_bar                   {fmt(ends[0].h_so / ends[1].h_so)}")
    print(f"alpha* closed form        {fmt(alpha_star_crossover(ends))}")
    print(f"alpha* branch meeting     {fmt(branch_intersection_alpha(ends))}")
    for a, b in rows:
        print(f"efficiency alpha={fmt(a):<6} rho <= {fmt(b)}")
    for b, a in betas:
        print(f"fairness   beta={fmt(b):<6} U <= beta for alpha <= {fmt(a)}")


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "pareto": cmd_pareto,
            "beta-so": cmd_beta_so, "price": cmd_price, "bounds": cmd_bounds}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    outputs: list[str] = []
    try:
        needs_net = not (args.command == "pareto" and args.sweep_csv
                         and ("isolution" not in args.methods or args.isolution_csv))
        if needs_net:
            net, instance = load_instance(args)
        else:
            net, instance = None, {"sweep_csv": str(args.sweep_csv)}
        COMMANDS[args.command](args, net, outputs)
    except (ParseError, ValidationError, InstanceError, ParameterError, OSError) as exc:
        print(f"fairflow: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RoutingError as exc:
        print(f"fairflow: routing error: {exc}", file=sys.stderr)
        return EXIT_ROUTING
    except FairflowError as exc:
        print(f"fairflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.out is not None:
        man = RunManifest(args.command, argv, instance, _params(args),
                          wall_seconds=round(time.perf_counter() - t0, 3), outputs=outputs)
        man.write(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
