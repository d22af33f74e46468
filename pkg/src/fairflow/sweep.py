"""Dense alpha sweeps, beta-SO selection, Pareto frontiers and the a-priori bounds."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .assignment import FlowState, SolverConfig, objective_values, solve
from .errors import FairflowError, ParameterError
from .fairness import EDGE_THRESHOLD, USED_PATH_TOLERANCE, all_metrics
from .formatting import csv_text
from .network import Network

SWEEP_HEADER = ("alpha", "h_so", "h_ue", "ineff_ratio", "gap", "u", "envy_free", "used_nash", "gini")
PARETO_HEADER = ("beta", "method", "param", "ineff_ratio", "unfairness")
GATE_METRICS = {"U": "u", "envy_free": "envy_free", "used_nash": "used_nash", "gini": "gini"}
OUTLIER_JUMP = 0.1


@dataclass
class SweepRecord:
    alpha: float
    h_so: float = math.nan
    h_ue: float = math.nan
    ineff_ratio: float = math.nan
    relative_gap: float = math.nan
    u: float = math.nan
    envy_free: float = math.nan
    used_nash: float = math.nan
    gini: float = math.nan
    method: str = "itap"
    iterations: int = 0
    error: str | None = None
    state: FlowState | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    def metric(self, name: str) -> float:
        return getattr(self, GATE_METRICS.get(name, name))

    def csv_row(self):
        return (self.alpha, self.h_so, self.h_ue, self.ineff_ratio, self.relative_gap,
                self.u, self.envy_free, self.used_nash, self.gini)


@dataclass(frozen=True)
class ParetoPoint:
    beta: float
    method: str           # itap | isolution
    param: float          # alpha or gamma
    ineff_ratio: float
    unfairness: float

    def csv_row(self):
        return (self.beta, self.method, self.param, self.ineff_ratio, self.unfairness)


def alpha_grid(step: float) -> list[float]:
    """{0, s, 2s, ...} plus exactly 1."""
    if not 0 < step < 1:
        raise ParameterError(f"step must lie in (0, 1), got {step}")
    n = int(math.floor(1 / step + 1e-9))
    grid = [round(i * step, 12) for i in range(n + 1)]
    grid = [a for a in grid if a < 1.0]
    return grid + [1.0]


def resolve_jobs(jobs: int | None = None) -> int:
    """FAIRFLOW_JOBS overrides the argument; the fallback is the core count."""
    env = os.environ.get("FAIRFLOW_JOBS")
    if env:
        try:
            jobs = int(env)
        except ValueError as exc:
            raise ParameterError(f"FAIRFLOW_JOBS must be an integer, got {env!r}") from exc
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs < 1:
        raise ParameterError(f"jobs must be >= 1, got {jobs}")
    return jobs


def _fill_metrics(rec: SweepRecord, net: Network, fs: FlowState, threshold, used_tolerance,
                  gini_aggregation) -> None:
    rec.h_so, rec.h_ue = fs.h_so, fs.h_ue
    rec.relative_gap = fs.relative_gap
    rec.iterations = fs.iterations
    reports = all_metrics(net, fs, threshold, used_tolerance, gini_aggregation)
    rec.u = reports["U"].aggregate
    rec.envy_free = reports["envy_free"].aggregate
    rec.used_nash = reports["used_nash"].aggregate
    rec.gini = reports["gini"].aggregate


def _sweep_point(args) -> SweepRecord:
    net, alpha, cfg, keep, threshold, used_tolerance, gini_aggregation = args
    rec = SweepRecord(alpha)
    try:
        fs = solve(net, alpha, cfg)
        _fill_metrics(rec, net, fs, threshold, used_tolerance, gini_aggregation)
        if keep:
            rec.state = fs
    except FairflowError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _set_ratios(records: list[SweepRecord]) -> None:
    ref = next((r for r in records if r.alpha == 1.0 and r.ok), None)
    for r in records:
        if r.ok and ref is not None and ref.h_so > 0:
            r.ineff_ratio = r.h_so / ref.h_so


def dense_sweep(net: Network, step: float = 0.01, cfg: SolverConfig | None = None,
                jobs: int = 1, keep_states: bool = False,
                threshold: float = EDGE_THRESHOLD, used_tolerance: float = USED_PATH_TOLERANCE,
                gini_aggregation: str = "max") -> list[SweepRecord]:
    """Cold-start solve and metrics at every alpha of the grid.

    A failing alpha yields a record carrying the error message; the sweep
    continues.  Records come back in alpha order whatever ``jobs`` is.
    """
    cfg = cfg or SolverConfig()
    tasks = [(net, a, cfg, keep_states, threshold, used_tolerance, gini_aggregation)
             for a in alpha_grid(step)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_sweep_point, tasks))
    else:
        records = [_sweep_point(t) for t in tasks]
    _set_ratios(records)
    return records


def i_solution_sweep(net: Network, step: float = 0.01, cfg: SolverConfig | None = None,
                     ue: FlowState | None = None, so: FlowState | None = None,
                     keep_states: bool = False, threshold: float = EDGE_THRESHOLD,
                     used_tolerance: float = USED_PATH_TOLERANCE,
                     gini_aggregation: str = "max") -> list[SweepRecord]:
    """Metrics along (1 - gamma) x_UE + gamma x_SO.

    Path sets are merged: a path recorded in either endpoint gets weight
    (1 - gamma) w_UE + gamma w_SO.
    """
    cfg = cfg or SolverConfig()
    ue = ue if ue is not None else solve(net, 0.0, cfg)
    so = so if so is not None else solve(net, 1.0, cfg)
    records = []
    for g in alpha_grid(step):
        merged = []
        for k in range(net.num_commodities):
            w: dict[tuple[int, ...], float] = {}
            for p, wt in ue.recorded_paths[k]:
                w[p] = w.get(p, 0.0) + (1 - g) * wt
            for p, wt in so.recorded_paths[k]:
                w[p] = w.get(p, 0.0) + g * wt
            merged.append(sorted(((p, v) for p, v in w.items() if v > 0),
                                 key=lambda t: (-t[1], t[0])))
        xk = (1 - g) * ue.commodity_edge_flow + g * so.commodity_edge_flow
        x = (1 - g) * ue.edge_flow + g * so.edge_flow
        h_so, h_ue = objective_values(net, x)
        fs = FlowState(g, x, xk, merged, h_so, h_ue, g * h_so + (1 - g) * h_ue, math.nan)
        rec = SweepRecord(g, method="isolution")
        try:
            _fill_metrics(rec, net, fs, threshold, used_tolerance, gini_aggregation)
            rec.relative_gap = math.nan
            if keep_states:
                rec.state = fs
        except FairflowError as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    _set_ratios(records)
    return records


def select_beta_so(records: list[SweepRecord], beta: float, metric: str = "U",
                   tol: float = 1e-9, method: str | None = None) -> ParetoPoint:
    """Least total travel time among records that are at most beta-unfair.

    The alpha = 0 record (user equilibrium) is always admissible; its
    measured unfairness may exceed 1 only through solver tolerance.
    """
    if not records:
        raise ParameterError("no sweep records")
    if beta < 1:
        raise ParameterError(f"beta must be >= 1, got {beta}")
    if metric not in GATE_METRICS:
        raise ParameterError(f"unknown gate metric {metric!r}")
    ok = [r for r in records if r.ok]
    if not ok:
        raise ParameterError("every sweep record failed")
    feasible = [r for r in ok if r.alpha == 0.0 or r.metric(metric) <= beta + tol]
    if not feasible:
        feasible = [min(ok, key=lambda r: r.alpha)]
    best = min(feasible, key=lambda r: (r.h_so, r.alpha))
    return ParetoPoint(beta, method or best.method, best.alpha, best.ineff_ratio,
                       best.metric(metric))


def beta_grid(lo: float = 1.0, hi: float = 2.0, step: float = 0.05) -> list[float]:
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 12) for i in range(n + 1)]


def pareto_frontier(records: list[SweepRecord], betas=None, metric: str = "U",
                    method: str | None = None) -> list[ParetoPoint]:
    betas = beta_grid() if betas is None else list(betas)
    if any(b2 < b1 for b1, b2 in zip(betas, betas[1:])):
        raise ParameterError("beta grid must be sorted ascending")
    return [select_beta_so(records, b, metric, method=method) for b in betas]


def dominance_report(itap: list[ParetoPoint], isolution: list[ParetoPoint],
                     tol: float = 1e-6) -> dict:
    """Count betas where the I-Solution frontier beats the I-TAP frontier."""
    by_beta = {p.beta: p for p in isolution}
    violations = [p.beta for p in itap
                  if p.beta in by_beta and p.ineff_ratio > by_beta[p.beta].ineff_ratio + tol]
    return {"compared": sum(p.beta in by_beta for p in itap), "violations": violations}


def unfairness_outliers(records: list[SweepRecord], jump: float = OUTLIER_JUMP,
                        metric: str = "U") -> list[float]:
    """Alphas where the metric jumps by more than ``jump`` from the previous point."""
    ok = [r for r in records if r.ok]
    return [b.alpha for a, b in zip(ok, ok[1:]) if abs(b.metric(metric) - a.metric(metric)) > jump]


# ----------------------------------------------------------------------------
# a-priori bounds

def _endpoints(records):
    lo = next((r for r in records if r.alpha == 0.0 and r.ok), None)
    hi = next((r for r in records if r.alpha == 1.0 and r.ok), None)
    if lo is None or hi is None:
        raise ParameterError("records must contain successful alpha = 0 and alpha = 1 points")
    if hi.h_so <= 0:
        raise ParameterError("bounds are undefined for zero total travel time")
    return lo, hi


def ineff_bound_thm1(records, alpha: float) -> float:
    """min{rho_bar, 1 + (1-a)/a (h_UE(x1) - h_UE(x0)) / h_SO(x1)} for a in (0, 1)."""
    if not 0 < alpha < 1:
        raise ParameterError(f"the bound holds on the open interval (0, 1), got {alpha}")
    lo, hi = _endpoints(records)
    rho_bar = lo.h_so / hi.h_so
    return min(rho_bar, 1 + (1 - alpha) / alpha * (hi.h_ue - lo.h_ue) / hi.h_so)


def alpha_star_crossover(records) -> float:
    """The closed-form crossover value dUE / (h_SO(x0) + dUE).

    It equates rho_bar with the second branch *without* its leading 1.  The
    alpha where the two branches really meet is ``branch_intersection_alpha``.
    """
    lo, hi = _endpoints(records)
    d_ue = hi.h_ue - lo.h_ue
    denom = lo.h_so + d_ue
    if denom <= 0:
        raise ParameterError("crossover undefined for zero objectives")
    return d_ue / denom


def branch_intersection_alpha(records) -> float:
    """Alpha at which rho_bar equals 1 + (1-a)/a dUE / h_SO(x1)."""
    lo, hi = _endpoints(records)
    d_ue = hi.h_ue - lo.h_ue
    denom = lo.h_so - hi.h_so + d_ue
    if denom <= 0:
        return 0.0
    return d_ue / denom


def feasible_alpha_thm2(net: Network, beta: float) -> float:
    """Largest alpha with a guaranteed unfairness of at most beta: min{1, (beta-1)/m}."""
    if beta < 1:
        raise ParameterError(f"beta must be >= 1, got {beta}")
    m = net.max_degree
    if m == 0:
        return 1.0
    return min(1.0, (beta - 1) / m)


# ----------------------------------------------------------------------------
# CSV

def records_to_csv(records: list[SweepRecord]) -> str:
    return csv_text(SWEEP_HEADER, (r.csv_row() for r in records))


def records_from_csv(text: str, method: str = "itap") -> list[SweepRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != SWEEP_HEADER:
        raise ParameterError(f"sweep CSV header must be {','.join(SWEEP_HEADER)}")
    out = []
    for row in rows:
        vals = {k: float(v) if v != "" else math.nan for k, v in row.items()}
        out.append(SweepRecord(vals["alpha"], vals["h_so"], vals["h_ue"], vals["ineff_ratio"],
                               vals["gap"], vals["u"], vals["envy_free"], vals["used_nash"],
                               vals["gini"], method=method,
                               error=None if not math.isnan(vals["h_so"]) else "missing"))
    return out


def pareto_to_csv(points: list[ParetoPoint]) -> str:
    return csv_text(PARETO_HEADER, (p.csv_row() for p in points))


def record_dict(rec: SweepRecord) -> dict:
    d = asdict(rec)
    d.pop("state")
    return d
