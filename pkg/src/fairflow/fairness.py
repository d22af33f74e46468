"""Path-based unfairness metrics.

U compares the slowest and fastest *positive* paths of a commodity, i.e. any
origin-destination path whose edges all carry commodity flow.  It depends on
the commodity edge flows only, so it is computed on a DAG built from x^k.
The envy-free, used-Nash and Gini metrics instead look at the recorded path
decomposition.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .assignment import FlowState
from .errors import DecompositionError, ParameterError
from .formatting import csv_text
from .network import Network

EDGE_THRESHOLD = 1e-7       # fraction of d_k below which commodity flow is dust
USED_PATH_TOLERANCE = 1e-4  # fraction of d_k for a recorded path to count as used
METRICS = ("U", "envy_free", "used_nash", "gini")


@dataclass(frozen=True)
class CommodityDag:
    commodity: int
    origin: int
    destination: int
    order: tuple[int, ...]        # topological order of V_k
    edges: tuple[int, ...]        # E_k, increasing edge id
    flows: np.ndarray             # commodity flow on E_k after cycle cancellation
    weights: np.ndarray           # t_e(x_e) on E_k under the total flow
    cancelled: float = 0.0        # flow removed by cycle cancellation
    imbalance: float = 0.0        # worst conservation residual at transit vertices

    @property
    def vertices(self) -> tuple[int, ...]:
        return self.order

    def extreme_path(self, net: Network, longest: bool = False) -> tuple[float, tuple[int, ...]]:
        """Shortest (or longest, via negated weights) origin-destination path."""
        sign = -1.0 if longest else 1.0
        out: dict[int, list[tuple[int, int, float]]] = {}
        for e, w in zip(self.edges, self.weights):
            edge = net.edges[e]
            out.setdefault(edge.tail, []).append((e, edge.head, sign * float(w)))
        dist = {self.origin: 0.0}
        pred: dict[int, int] = {}
        for v in self.order:
            if v not in dist:
                continue
            for e, h, w in out.get(v, ()):
                nd = dist[v] + w
                if h not in dist or nd < dist[h]:
                    dist[h] = nd
                    pred[h] = e
        if self.destination not in dist:
            raise DecompositionError(
                f"commodity {self.commodity}: no positive path reaches the destination")
        path = []
        v = self.destination
        while v != self.origin:
            e = pred[v]
            path.append(e)
            v = net.edges[e].tail
        return sign * dist[self.destination], tuple(reversed(path))


def _find_cycle(net: Network, flow: dict[int, float]) -> list[int] | None:
    """Edge ids of some directed cycle among edges with flow, or None."""
    out: dict[int, list[int]] = {}
    for e in sorted(flow):
        out.setdefault(net.edges[e].tail, []).append(e)
    done: set[int] = set()
    for root in sorted(out):
        if root in done:
            continue
        pos = {root: 0}                 # vertex -> depth on the current stack
        stack = [(root, iter(out[root]))]
        via: list[int] = []             # via[i] leads from stack[i] to stack[i+1]
        while stack:
            v, it = stack[-1]
            e = next(it, None)
            if e is None:
                done.add(v)
                del pos[v]
                stack.pop()
                if via:
                    via.pop()
                continue
            h = net.edges[e].head
            if h in pos:
                return via[pos[h]:] + [e]
            if h not in done:
                pos[h] = len(stack)
                via.append(e)
                stack.append((h, iter(out.get(h, ()))))
    return None


def _cancel_cycles(net: Network, flow: dict[int, float], floor: float) -> float:
    removed = 0.0
    while True:
        cyc = _find_cycle(net, flow)
        if cyc is None:
            return removed
        bottleneck = min(flow[e] for e in cyc)
        removed += bottleneck
        for e in cyc:
            flow[e] -= bottleneck
            if flow[e] <= floor:
                del flow[e]


def _topological_order(net: Network, edges, origin: int) -> list[int] | None:
    verts = {origin}
    indeg: dict[int, int] = {}
    out: dict[int, list[int]] = {}
    for e in edges:
        t, h = net.edges[e].tail, net.edges[e].head
        verts.update((t, h))
        indeg[h] = indeg.get(h, 0) + 1
        out.setdefault(t, []).append(h)
    ready = sorted(v for v in verts if indeg.get(v, 0) == 0)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for h in out.get(v, ()):
            indeg[h] -= 1
            if indeg[h] == 0:
                ready.append(h)
    return order if len(order) == len(verts) else None


def build_commodity_dag(net: Network, fs: FlowState, k: int,
                        threshold: float = EDGE_THRESHOLD,
                        travel_times: np.ndarray | None = None) -> CommodityDag:
    c = net.commodities[k]
    floor = threshold * c.demand
    xk = fs.commodity_edge_flow[k]
    flow = {int(e): float(xk[e]) for e in np.flatnonzero(xk > floor)}
    removed = _cancel_cycles(net, flow, floor)
    edges = tuple(sorted(flow))
    order = _topological_order(net, edges, c.origin)
    if order is None:
        raise DecompositionError(f"commodity {k}: cycle survived cancellation")
    balance: dict[int, float] = {}
    for e in edges:
        balance[net.edges[e].tail] = balance.get(net.edges[e].tail, 0.0) - flow[e]
        balance[net.edges[e].head] = balance.get(net.edges[e].head, 0.0) + flow[e]
    imbalance = max((abs(b) for v, b in balance.items()
                     if v not in (c.origin, c.destination)), default=0.0)
    if imbalance > 1e-6 * c.demand:
        raise DecompositionError(
            f"commodity {k}: flow not conserved (residual {imbalance:.3g})")
    t = net.travel_times(fs.edge_flow) if travel_times is None else travel_times
    return CommodityDag(k, c.origin, c.destination, tuple(order), edges,
                        np.array([flow[e] for e in edges]), t[list(edges)],
                        removed, imbalance)


def commodity_dags(net: Network, fs: FlowState, threshold: float = EDGE_THRESHOLD):
    t = net.travel_times(fs.edge_flow)
    return [build_commodity_dag(net, fs, k, threshold, t) for k in range(net.num_commodities)]


@dataclass
class UnfairnessReport:
    metric: str
    values: dict[int, float]
    aggregate: float
    excluded: list[int] = field(default_factory=list)
    aggregation: str = "max"
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "aggregation": self.aggregation,
            "aggregate": self.aggregate,
            "values": {str(k): v for k, v in sorted(self.values.items())},
            "excluded": list(self.excluded),
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def csv_rows(self, include_aggregate: bool = True):
        rows = [(self.metric, k, v) for k, v in sorted(self.values.items())]
        if include_aggregate:
            rows.append((self.metric, self.aggregation, self.aggregate))
        return rows

    def to_csv(self) -> str:
        return csv_text(("metric", "commodity", "value"), self.csv_rows())


def _aggregate(values: dict[int, float], how: str) -> float:
    if how not in ("max", "mean"):
        raise ParameterError(f"aggregation must be 'max' or 'mean', got {how!r}")
    if not values:
        return 1.0 if how == "max" else 0.0
    arr = np.fromiter(values.values(), float)
    return float(arr.max() if how == "max" else arr.mean())


def _used_path_times(net: Network, fs: FlowState, k: int, t: np.ndarray, tol: float):
    d = net.commodities[k].demand
    plist = fs.recorded_paths[k] if k < len(fs.recorded_paths) else []
    used = [(p, w) for p, w in plist if w > tol * d]
    if not used:
        raise DecompositionError(f"commodity {k} has no recorded path")
    times = np.array([float(t[list(p)].sum()) for p, _ in used])
    weights = np.array([w for _, w in used])
    return times, weights


def unfairness_U(net: Network, fs: FlowState, dags=None,
                 threshold: float = EDGE_THRESHOLD) -> UnfairnessReport:
    dags = dags if dags is not None else commodity_dags(net, fs, threshold)
    values, excluded = {}, []
    for dag in dags:
        short, _ = dag.extreme_path(net)
        if short <= 1e-12:
            excluded.append(dag.commodity)
            continue
        long_, _ = dag.extreme_path(net, longest=True)
        values[dag.commodity] = long_ / short
    return UnfairnessReport("U", values, _aggregate(values, "max"), excluded)


def unfairness_envy_free(net: Network, fs: FlowState,
                         used_tolerance: float = USED_PATH_TOLERANCE) -> UnfairnessReport:
    t = net.travel_times(fs.edge_flow)
    values, excluded = {}, []
    for k in range(net.num_commodities):
        times, _ = _used_path_times(net, fs, k, t, used_tolerance)
        if times.min() <= 1e-12:
            excluded.append(k)
            continue
        values[k] = float(times.max() / times.min())
    return UnfairnessReport("envy_free", values, _aggregate(values, "max"), excluded,
                            note=f"used paths carry > {used_tolerance:g} of demand")


def unfairness_used_nash(net: Network, fs: FlowState, dags=None,
                         threshold: float = EDGE_THRESHOLD,
                         used_tolerance: float = USED_PATH_TOLERANCE) -> UnfairnessReport:
    dags = dags if dags is not None else commodity_dags(net, fs, threshold)
    t = net.travel_times(fs.edge_flow)
    values, excluded = {}, []
    for dag in dags:
        k = dag.commodity
        short, _ = dag.extreme_path(net)
        if short <= 1e-12:
            excluded.append(k)
            continue
        times, _ = _used_path_times(net, fs, k, t, used_tolerance)
        values[k] = float(times.max() / short)
    return UnfairnessReport("used_nash", values, _aggregate(values, "max"), excluded,
                            note=f"used paths carry > {used_tolerance:g} of demand")


def unfairness_gini(net: Network, fs: FlowState, aggregation: str = "max",
                    used_tolerance: float = USED_PATH_TOLERANCE) -> UnfairnessReport:
    t = net.travel_times(fs.edge_flow)
    values, excluded = {}, []
    for k, c in enumerate(net.commodities):
        times, w = _used_path_times(net, fs, k, t, used_tolerance)
        denom = 2.0 * c.demand * float(np.dot(w, times))
        if denom <= 0:
            excluded.append(k)
            values[k] = 0.0
            continue
        spread = np.abs(times[:, None] - times[None, :])
        values[k] = float(w @ spread @ w) / denom
    return UnfairnessReport("gini", values, _aggregate(values, aggregation), excluded,
                            aggregation=aggregation)


def all_metrics(net: Network, fs: FlowState, threshold: float = EDGE_THRESHOLD,
                used_tolerance: float = USED_PATH_TOLERANCE,
                gini_aggregation: str = "max") -> dict[str, UnfairnessReport]:
    """All four reports, sharing one set of commodity DAGs."""
    dags = commodity_dags(net, fs, threshold)
    return {
        "U": unfairness_U(net, fs, dags),
        "envy_free": unfairness_envy_free(net, fs, used_tolerance),
        "used_nash": unfairness_used_nash(net, fs, dags, used_tolerance=used_tolerance),
        "gini": unfairness_gini(net, fs, gini_aggregation, used_tolerance),
    }
