"""Tolls that make a given I-TAP flow an equilibrium.

Homogeneous users get marginal-cost tolls alpha x t'(x).  For users with
different values of time the tolls come from the capacity duals of the path
LP  min sum_c v_c sum_P t_P d_P  s.t. demand rows and sum_{P ∋ e} d_P <= x_e,
restricted to recorded paths and enlarged by column generation whenever a
shortest-path query finds a cheaper unrecorded path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assignment import FlowState, SolverConfig, _trace, shortest_path_tree, solve
from .errors import EnforceabilityError, ParameterError, RestrictionError
from .formatting import csv_text
from .network import Network
from .simplex import solve_lp

TIGHTNESS_TOL = 1e-6
CS_TOL = 1e-6


@dataclass
class TollVector:
    tolls: np.ndarray
    provenance: str          # marginal_cost | lp_dual
    alpha: float

    def __post_init__(self):
        t = np.asarray(self.tolls, dtype=float)
        if np.any(t < -1e-9):
            raise EnforceabilityError(f"negative toll {t.min():.3g}")
        self.tolls = np.maximum(t, 0.0)

    def to_csv(self) -> str:
        return csv_text(("edge_id", "toll", "provenance", "alpha"),
                        ((e, float(t), self.provenance, self.alpha)
                         for e, t in enumerate(self.tolls)))


def marginal_tolls(net: Network, fs: FlowState) -> TollVector:
    x = fs.edge_flow
    return TollVector(fs.alpha * x * net.travel_time_derivatives(x), "marginal_cost", fs.alpha)


# ----------------------------------------------------------------------------
# verification for homogeneous users

@dataclass
class EnforcementReport:
    flow_deviation: float        # max_e |x_tolled - x| / max(x_e, 0.01 max x)
    norm_deviation: float        # max_e |x_tolled - x| / max_e x
    cost_spread: float           # worst (max - min)/min generalised cost over recorded paths
    tolled_gap: float
    tolerance: float = 1e-3

    @property
    def flow_ok(self) -> bool:
        return self.flow_deviation <= self.tolerance

    @property
    def spread_ok(self) -> bool:
        return self.cost_spread <= self.tolerance

    @property
    def passed(self) -> bool:
        return self.flow_ok and self.spread_ok


def generalized_costs(net: Network, fs: FlowState, tolls: np.ndarray, k: int,
                      value_of_time: float | None = None) -> np.ndarray:
    v = net.commodities[k].value_of_time if value_of_time is None else value_of_time
    t = net.travel_times(fs.edge_flow)
    return np.array([v * t[list(p)].sum() + tolls[list(p)].sum()
                     for p, _ in fs.recorded_paths[k]])


def verify_enforcement(net: Network, fs: FlowState, tolls: TollVector | np.ndarray,
                       cfg: SolverConfig | None = None, tolerance: float = 1e-3,
                       tolled: FlowState | None = None) -> EnforcementReport:
    """Re-solve the equilibrium under constant tolls and compare with ``fs``."""
    v = net.values_of_time
    if v.size and not np.allclose(v, v[0]):
        raise ParameterError("verify_enforcement assumes one value of time for all users")
    tau = tolls.tolls if isinstance(tolls, TollVector) else np.asarray(tolls, dtype=float)
    if tolled is None:
        tolled = solve(net, 0.0, cfg, tolls=tau)
    x = fs.edge_flow
    diff = np.abs(tolled.edge_flow - x)
    scale = float(x.max(initial=0.0))
    if scale > 0:
        dev = float((diff / np.maximum(x, 0.01 * scale)).max())
        norm_dev = float(diff.max()) / scale
    else:
        dev = norm_dev = float(diff.max(initial=0.0))
    spread = 0.0
    for k in range(net.num_commodities):
        g = generalized_costs(net, fs, tau, k)
        if g.size and g.min() > 0:
            spread = max(spread, float((g.max() - g.min()) / g.min()))
    return EnforcementReport(dev, norm_dev, spread, tolled.relative_gap, tolerance)


# ----------------------------------------------------------------------------
# heterogeneous users

@dataclass(frozen=True)
class UserClass:
    commodity: int
    value_of_time: float
    share: float


def classes_from_json(text: str) -> list[UserClass]:
    """Parse ``[[commodity, value_of_time, share], ...]`` (objects also accepted)."""
    try:
        raw = json.loads(text)
        out = []
        for item in raw:
            if isinstance(item, dict):
                item = (item["commodity"], item["value_of_time"], item["share"])
            k, v, s = item
            out.append(UserClass(int(k), float(v), float(s)))
    except (ValueError, KeyError, TypeError) as exc:
        raise ParameterError(f"malformed class list: {exc}") from exc
    return out


def classes_to_json(classes: list[UserClass]) -> str:
    return json.dumps([[c.commodity, c.value_of_time, c.share] for c in classes])


def default_classes(net: Network) -> list[UserClass]:
    return [UserClass(k, c.value_of_time, 1.0) for k, c in enumerate(net.commodities)]


def _check_classes(net: Network, classes: list[UserClass]) -> None:
    share = np.zeros(net.num_commodities)
    for c in classes:
        if not 0 <= c.commodity < net.num_commodities:
            raise ParameterError(f"class refers to unknown commodity {c.commodity}")
        if c.value_of_time <= 0 or c.share <= 0:
            raise ParameterError("class value_of_time and share must be positive")
        share[c.commodity] += c.share
    if not np.allclose(share, 1.0, atol=1e-9):
        bad = int(np.flatnonzero(~np.isclose(share, 1.0, atol=1e-9))[0])
        raise ParameterError(f"class shares of commodity {bad} sum to {share[bad]:.6g}, not 1")


@dataclass
class RestrictedLP:
    classes: list[UserClass]
    demands: np.ndarray                 # per class
    columns: list[tuple[int, tuple[int, ...]]]   # (class index, edge ids)
    path_times: np.ndarray              # t_P(x) per column
    capacities: np.ndarray              # x_e
    primal: np.ndarray                  # d_P per column
    capacity_duals: np.ndarray          # <= 0 at optimality, per edge
    demand_duals: np.ndarray            # per class
    objective: float
    dual_objective: float
    iterations: int = 0
    rounds: int = 1
    added_columns: int = 0
    status: str = "optimal"
    notes: list[str] = field(default_factory=list)

    def edge_load(self) -> np.ndarray:
        load = np.zeros(len(self.capacities))
        for (cls, p), d in zip(self.columns, self.primal):
            for e in p:
                load[e] += d
        return load


def _solve_restricted(net, classes, demands, columns, t, x, rule, basis=None):
    E = net.num_edges
    C = len(classes)
    rows, cols = [], []
    cost = np.empty(len(columns))
    for j, (ci, p) in enumerate(columns):
        rows.append(ci)
        rows.extend(C + e for e in p)
        cols.extend([j] * (len(p) + 1))
        cost[j] = classes[ci].value_of_time * t[list(p)].sum()
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(C + E, len(columns)))
    b = np.concatenate([demands, x])
    res = solve_lp(cost, A, b, ["="] * C + ["<="] * E, rule=rule, basis=basis)
    return res, cost, b


def heterogeneous_lp(net: Network, fs: FlowState, classes: list[UserClass] | None = None,
                     column_generation: bool = True, max_rounds: int = 25,
                     rule: str = "bland") -> RestrictedLP:
    """Path LP on the recorded paths, priced out against all paths.

    After each solve a shortest-path query per class under v t_e(x_e) + tau_e
    looks for an unrecorded path cheaper than the class's demand dual; such
    paths join the column set and the LP is solved again.
    """
    classes = default_classes(net) if classes is None else list(classes)
    _check_classes(net, classes)
    x = fs.edge_flow
    t = net.travel_times(x)
    demands = np.array([c.share * net.commodities[c.commodity].demand for c in classes])
    columns = [(ci, p) for ci, c in enumerate(classes)
               for p, _ in fs.recorded_paths[c.commodity]]
    seen = set(columns)
    added = 0
    total_iters = 0
    basis = None
    for rounds in range(1, max_rounds + 1):
        res, cost, b = _solve_restricted(net, classes, demands, columns, t, x, rule, basis)
        total_iters += res.iterations
        if res.status == "infeasible":
            raise RestrictionError(
                "recorded paths cannot carry the demands within the edge flows; "
                "lower path_record_threshold and re-solve")
        if not res.optimal:
            raise RestrictionError(f"restricted LP ended with status {res.status}")
        C = len(classes)
        mu = res.duals[:C]
        cap = res.duals[C:]
        if not column_generation:
            break
        tau = np.maximum(-cap, 0.0)
        new = []
        for ci, c in enumerate(classes):
            com = net.commodities[c.commodity]
            w = c.value_of_time * t + tau
            dist, pred = shortest_path_tree(net, com.origin, w)
            if dist[com.destination] < mu[ci] - CS_TOL * max(1.0, abs(mu[ci])):
                p = _trace(net, pred, com.origin, com.destination)
                if (ci, p) not in seen:
                    seen.add((ci, p))
                    new.append((ci, p))
        if not new:
            break
        if res.basis is not None:
            # slack indices shift right by the number of new columns
            n_old = len(columns)
            basis = np.where(res.basis < n_old, res.basis, res.basis + len(new))
        columns.extend(new)
        added += len(new)
    path_times = np.array([t[list(p)].sum() for _, p in columns])
    return RestrictedLP(classes, demands, columns, path_times, x.copy(), res.x, cap, mu,
                        res.objective, float(res.duals @ b), total_iters, rounds, added,
                        res.status)


@dataclass
class TightnessReport:
    tight: bool
    slacks: np.ndarray
    worst: float                 # max slack / (1 + x_e)


def check_tightness(lp: RestrictedLP, tol: float = TIGHTNESS_TOL) -> TightnessReport:
    slacks = lp.capacities - lp.edge_load()
    scaled = slacks / (1.0 + lp.capacities)
    worst = float(np.abs(scaled).max(initial=0.0))
    return TightnessReport(bool(np.all(scaled <= tol)), slacks, worst)


def dual_tolls(lp: RestrictedLP, alpha: float = float("nan")) -> TollVector:
    report = check_tightness(lp)
    if not report.tight:
        raise EnforceabilityError(
            f"capacity constraints are slack (worst {report.worst:.3g}); "
            "the flow cannot be enforced by these prices")
    if np.any(lp.capacity_duals > 1e-9):
        raise EnforceabilityError("capacity dual has the wrong sign")
    return TollVector(-lp.capacity_duals, "lp_dual", alpha)


def complementary_slackness(lp: RestrictedLP, tolls: TollVector | np.ndarray,
                            flow_tol: float = 1e-9) -> float:
    """Worst relative excess of a used path's generalised cost over its class minimum."""
    tau = tolls.tolls if isinstance(tolls, TollVector) else np.asarray(tolls, float)
    worst = 0.0
    by_class: dict[int, list[tuple[float, float]]] = {}
    for (ci, p), tp, d in zip(lp.columns, lp.path_times, lp.primal):
        g = lp.classes[ci].value_of_time * tp + tau[list(p)].sum()
        by_class.setdefault(ci, []).append((g, d))
    for ci, items in by_class.items():
        low = min(g for g, _ in items)
        scale = max(abs(low), 1e-12)
        for g, d in items:
            if d > flow_tol * max(1.0, lp.demands[ci]):
                worst = max(worst, (g - low) / scale)
    return worst


def unrecorded_path_slack(net: Network, lp: RestrictedLP,
                          tolls: TollVector | np.ndarray) -> float:
    """min over classes of (shortest generalised cost - best column cost) / best column cost.

    Negative values mean some path outside the column set undercuts every
    column; the certificate passes when the result is >= -1e-6.
    """
    tau = tolls.tolls if isinstance(tolls, TollVector) else np.asarray(tolls, float)
    t = net.travel_times(lp.capacities)
    best: dict[int, float] = {}
    for (ci, p), tp in zip(lp.columns, lp.path_times):
        g = lp.classes[ci].value_of_time * tp + tau[list(p)].sum()
        best[ci] = min(best.get(ci, np.inf), g)
    worst = np.inf
    trees: dict[tuple[int, float], list[float]] = {}
    for ci, c in enumerate(lp.classes):
        com = net.commodities[c.commodity]
        key = (com.origin, c.value_of_time)
        if key not in trees:
            trees[key] = shortest_path_tree(net, com.origin, c.value_of_time * t + tau)[0]
        sp = trees[key][com.destination]
        worst = min(worst, (sp - best[ci]) / max(abs(best[ci]), 1e-12))
    return float(worst)
