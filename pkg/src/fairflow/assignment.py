"""Frank-Wolfe solver for the interpolated traffic assignment problem.

For alpha in [0, 1] the objective alpha*h_SO + (1-alpha)*h_UE has gradient
c_e(x, alpha) = t_e(x) + alpha * x * t_e'(x), so each linearised subproblem is
an all-or-nothing assignment on those edge costs.
"""
from __future__ import annotations

import heapq
import json
import logging
from itertools import chain
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, RoutingError
from .network import Network, TravelTimeFn

log = logging.getLogger(__name__)


METHODS = ("fw", "cfw", "path")


@dataclass
class SolverConfig:
    """Solver controls.

    ``method`` selects the search direction: ``fw`` is vanilla Frank-Wolfe,
    ``cfw`` the conjugate variant, and ``path`` keeps every all-or-nothing
    path as a column and re-equilibrates path flows between subproblem calls
    (disaggregated simplicial decomposition).  All three share the same
    all-or-nothing subproblem, exact line search and path recording.
    """

    max_iterations: int = 100
    target_relative_gap: float = 1e-5
    line_search_tolerance: float = 1e-10
    path_record_threshold: float = 1e-4
    method: str = "path"
    # conjugate weight is capped at 1 - conjugate_delta
    conjugate_delta: float = 1e-4
    # path-flow equilibration passes per all-or-nothing call (method="path")
    master_passes: int = 10
    # optional extra stop rule: every kept path's cost within this relative
    # excess of its commodity's shortest path (None disables it)
    max_path_excess: float | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if not (self.target_relative_gap > 0 and self.line_search_tolerance > 0):
            raise ParameterError("tolerances must be positive")
        if not 0 <= self.path_record_threshold < 1:
            raise ParameterError("path_record_threshold must lie in [0, 1)")
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 < self.conjugate_delta < 1:
            raise ParameterError("conjugate_delta must lie in (0, 1)")
        if self.master_passes < 1:
            raise ParameterError("master_passes must be >= 1")
        if self.max_path_excess is not None and not self.max_path_excess > 0:
            raise ParameterError("max_path_excess must be positive or None")


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    return float(alpha)


def interpolated_cost(fn: TravelTimeFn, y: float, alpha: float) -> float:
    if y < 0:
        raise ParameterError(f"flow must be nonnegative, got {y}")
    alpha = _check_alpha(alpha)
    return fn(y) + alpha * y * fn.derivative(y)


def edge_costs(net: Network, x: np.ndarray, alpha: float, tolls=None) -> np.ndarray:
    c = net.travel_times(x)
    if alpha:
        c = c + alpha * x * net.travel_time_derivatives(x)
    if tolls is not None:
        c = c + tolls
    return c


def _edge_cost_slopes(net: Network, x: np.ndarray, alpha: float) -> np.ndarray:
    """d/dx of c_e(x, alpha): (1+alpha) t' + alpha x t''."""
    c = net.coefficient_matrix
    d1 = net.travel_time_derivatives(x)
    d2 = np.zeros_like(x)
    for j in range(c.shape[1] - 1, 1, -1):
        d2 = d2 * x + j * (j - 1) * c[:, j]
    return (1 + alpha) * d1 + alpha * x * d2


def objective_values(net: Network, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.num_edges,):
        raise ParameterError(f"flow vector has shape {x.shape}, expected ({net.num_edges},)")
    h_so = float(np.dot(x, net.travel_times(x)))
    h_ue = float(np.sum(net.travel_time_integrals(x)))
    return h_so, h_ue


def interpolated_objective(net: Network, x, alpha: float, tolls=None) -> float:
    h_so, h_ue = objective_values(net, x)
    h = alpha * h_so + (1 - alpha) * h_ue
    if tolls is not None:
        h += float(np.dot(tolls, x))
    return h


# ----------------------------------------------------------------------------
# shortest paths

def shortest_path_tree(net: Network, origin: int, weights) -> tuple[list[float], list[int]]:
    """Label-setting search from ``origin`` with nonnegative ``weights``.

    Returns (distance, predecessor edge) lists; unreachable vertices keep
    distance inf and predecessor -1.  Among equal-distance labels of an
    unsettled vertex the lower predecessor edge index wins.
    """
    w = weights.tolist() if isinstance(weights, np.ndarray) else list(weights)
    adj = net.out_edges
    inf = float("inf")
    dist = [inf] * net.num_vertices
    pred = [-1] * net.num_vertices
    done = [False] * net.num_vertices
    dist[origin] = 0.0
    heap = [(0.0, origin)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for e, h in adj[v]:
            if done[h]:
                continue
            nd = d + w[e]
            if nd < dist[h]:
                dist[h] = nd
                pred[h] = e
                heapq.heappush(heap, (nd, h))
            elif nd == dist[h] and e < pred[h]:
                pred[h] = e
    return dist, pred


def _trace(net: Network, pred: list[int], origin: int, dest: int) -> tuple[int, ...]:
    path = []
    v = dest
    while v != origin:
        e = pred[v]
        path.append(e)
        v = net.edges[e].tail
    path.reverse()
    return tuple(path)


def _trace_memo(pred: list[int], tail: list[int], memo: dict, dest: int) -> tuple[int, ...]:
    """Trace to ``dest`` reusing prefixes already traced in the same tree."""
    stack = []
    v = dest
    while v not in memo:
        e = pred[v]
        stack.append((v, e))
        v = tail[e]
    p = memo[v]
    for v, e in reversed(stack):
        p = memo[v] = p + (e,)
    return p


def _aon(net: Network, weights: np.ndarray):
    """All-or-nothing loading on fixed edge weights; returns (y, per-commodity paths)."""
    paths: list[tuple[int, ...]] = [()] * net.num_commodities
    trees: dict[int, tuple[list[float], list[int], dict]] = {}
    tail = net.tails.tolist()
    for k, c in enumerate(net.commodities):
        tree = trees.get(c.origin)
        if tree is None:
            dist, pred = shortest_path_tree(net, c.origin, weights)
            tree = trees[c.origin] = (dist, pred, {c.origin: ()})
        dist, pred, memo = tree
        if dist[c.destination] == float("inf"):
            raise RoutingError(
                f"commodity {k} ({c.origin + 1}->{c.destination + 1}) has no route", k)
        paths[k] = memo.get(c.destination) or _trace_memo(pred, tail, memo, c.destination)
    lengths = [len(p) for p in paths]
    edges = np.fromiter(chain.from_iterable(paths), dtype=np.intp, count=sum(lengths))
    # bincount adds in commodity order, matching sequential accumulation
    y = np.bincount(edges, weights=np.repeat(net.demands, lengths), minlength=net.num_edges)
    return y, paths


def all_or_nothing(net: Network, x, alpha: float, tolls=None):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ParameterError("edge flows must be nonnegative")
    alpha = _check_alpha(alpha)
    return _aon(net, edge_costs(net, x, alpha, tolls))


def _slope_polynomial(net: Network, x, d, alpha: float, tolls=None) -> np.ndarray:
    """Ascending coefficients of g'(lam) = sum_e d_e c_e(x_e + lam d_e, alpha).

    c_e(y) = sum_i (1 + alpha i) gamma_i y^i, so substituting y = x + lam d
    gives a polynomial of the same degree in lam (built here by Horner's rule
    on polynomial coefficients).
    """
    coef = net.coefficient_matrix
    width = coef.shape[1]
    a = coef * (1 + alpha * np.arange(width))
    q = np.zeros((width, len(x)))
    q[0] = a[:, -1]
    for i in range(width - 2, -1, -1):
        q[1:] = q[1:] * x + q[:-1] * d
        q[0] = q[0] * x + a[:, i]
    out = q @ d
    if tolls is not None:
        out[0] += float(np.dot(tolls, d))
    return out


def _bisect_slope(poly: np.ndarray, tol: float) -> float:
    """Root of the nondecreasing slope polynomial on [0, 1], bracketed to width ``tol``.

    Safeguarded Newton: steps leaving the bracket fall back to bisection, and
    a Newton estimate is accepted only once a sign change is confirmed
    across a window of width ``tol`` around it.
    """
    p = poly[::-1].tolist()

    def g(lam):
        v = 0.0
        for c in p:
            v = v * lam + c
        return v

    def g_and_slope(lam):
        v = dv = 0.0
        for c in p:
            dv = dv * lam + v
            v = v * lam + c
        return v, dv

    if g(0.0) >= 0:
        return 0.0
    if g(1.0) <= 0:
        return 1.0
    lo, hi, lam = 0.0, 1.0, 0.5
    for _ in range(200):
        if hi - lo <= tol:
            break
        v, dv = g_and_slope(lam)
        if v > 0:
            hi = lam
        else:
            lo = lam
        nxt = lam - v / dv if dv > 0 else lo - 1.0
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        elif abs(nxt - lam) < tol:
            a, b = max(lo, nxt - 0.5 * tol), min(hi, nxt + 0.5 * tol)
            if g(a) <= 0 < g(b):
                return 0.5 * (a + b)
        lam = nxt
    return 0.5 * (lo + hi)


def line_search(net: Network, x, y, alpha: float, tol: float = 1e-10, tolls=None) -> float:
    """Exact step along y - x by bisection on the (monotone) directional derivative."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(y, dtype=float) - x
    if not np.any(d):
        return 0.0
    return _bisect_slope(_slope_polynomial(net, x, d, alpha, tolls), tol)


def _gap_from(costs: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    denom = float(np.dot(costs, x))
    if denom <= 0:
        return 0.0
    return max(0.0, float(np.dot(costs, x - y)) / denom)


def relative_gap(net: Network, x, alpha: float, tolls=None) -> float:
    """Normalised duality gap (c.x - c.y) / c.x with y the all-or-nothing response."""
    x = np.asarray(x, dtype=float)
    if net.num_commodities == 0:
        return 0.0
    costs = edge_costs(net, x, _check_alpha(alpha), tolls)
    y, _ = _aon(net, costs)
    return _gap_from(costs, x, y)


# ----------------------------------------------------------------------------
# flow state

@dataclass
class FlowState:
    alpha: float
    edge_flow: np.ndarray
    commodity_edge_flow: np.ndarray
    recorded_paths: list[list[tuple[tuple[int, ...], float]]]
    h_so: float
    h_ue: float
    h_interp: float
    relative_gap: float
    iterations: int = 0
    tolls: np.ndarray | None = None
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def total_travel_time(self) -> float:
        return self.h_so

    def to_dict(self, net: Network) -> dict:
        paths = []
        for k, plist in enumerate(self.recorded_paths):
            paths.append([
                {"vertices": net.path_vertices(p), "edges": list(p), "weight": w}
                for p, w in plist
            ])
        return {
            "alpha": self.alpha,
            "edge_flow": self.edge_flow.tolist(),
            "h_so": self.h_so,
            "h_ue": self.h_ue,
            "h_interp": self.h_interp,
            "relative_gap": self.relative_gap,
            "iterations": self.iterations,
            "recorded_paths": paths,
            **({"tolls": self.tolls.tolist()} if self.tolls is not None else {}),
        }

    def to_json(self, net: Network) -> str:
        return json.dumps(self.to_dict(net), indent=1)

    @classmethod
    def from_dict(cls, net: Network, data: dict) -> "FlowState":
        recorded = [[(tuple(p["edges"]), float(p["weight"])) for p in plist]
                    for plist in data["recorded_paths"]]
        xk = commodity_flows_from_paths(net, recorded)
        tolls = np.array(data["tolls"]) if "tolls" in data else None
        return cls(float(data["alpha"]), np.array(data["edge_flow"], dtype=float), xk, recorded,
                   float(data["h_so"]), float(data["h_ue"]), float(data["h_interp"]),
                   float(data["relative_gap"]), int(data.get("iterations", 0)), tolls)


def commodity_flows_from_paths(net: Network, recorded) -> np.ndarray:
    xk = np.zeros((net.num_commodities, net.num_edges))
    for k, plist in enumerate(recorded):
        for p, w in plist:
            for e in p:
                xk[k, e] += w
    return xk


def state_from_paths(net: Network, alpha: float, recorded, tolls=None,
                     iterations: int = 0, history=None) -> FlowState:
    """Build a FlowState whose flows are implied exactly by ``recorded`` path weights."""
    xk = commodity_flows_from_paths(net, recorded)
    x = xk.sum(axis=0) if net.num_commodities else np.zeros(net.num_edges)
    h_so, h_ue = objective_values(net, x)
    gap = relative_gap(net, x, alpha, tolls)
    return FlowState(alpha, x, xk, recorded, h_so, h_ue, alpha * h_so + (1 - alpha) * h_ue,
                     gap, iterations, None if tolls is None else np.asarray(tolls, float),
                     list(history or []))


def path_cost_excess(net: Network, fs: FlowState) -> float:
    """Worst (path cost - shortest path cost) / shortest path cost over recorded paths.

    Costs are the interpolated edge costs at ``fs.alpha`` plus any tolls, so
    at alpha = 0 this measures how far the recorded paths are from equal
    travel times.
    """
    if net.num_commodities == 0:
        return 0.0
    costs = edge_costs(net, fs.edge_flow, fs.alpha, fs.tolls)
    trees: dict[int, list[float]] = {}
    worst = 0.0
    for k, c in enumerate(net.commodities):
        if c.origin not in trees:
            trees[c.origin] = shortest_path_tree(net, c.origin, costs)[0]
        low = trees[c.origin][c.destination]
        if low <= 0:
            continue
        for p, _ in fs.recorded_paths[k]:
            worst = max(worst, float(costs[list(p)].sum()) / low - 1.0)
    return worst


def _store_excess(net: Network, store: "_PathStore", costs: np.ndarray, paths,
                  threshold: float) -> float:
    """path_cost_excess over stored paths that would survive pruning."""
    n = store.size
    ext = np.append(costs, 0.0)
    cost = ext[store.pad[:n]].sum(axis=1)
    low = np.array([ext[list(p)].sum() for p in paths])[store.owner[:n]]
    keep = (store.x[:n] >= threshold * net.demands[store.owner[:n]]) & (low > 0)
    if not keep.any():
        return 0.0
    return float((cost[keep] / low[keep] - 1.0).max())


class _PathStore:
    """Registry of recorded paths with weights held in growable arrays.

    ``pad`` holds each path's edge ids padded with ``num_edges`` so that
    gathers over an extended per-edge vector (last entry 0) give path sums.
    """

    def __init__(self, net: Network):
        self.ids: dict[tuple[int, tuple[int, ...]], int] = {}
        self.commodity: list[int] = []
        self.edges: list[tuple[int, ...]] = []
        self.size = 0
        self.null = net.num_edges
        self.x = np.zeros(64)      # current iterate
        self.s = np.zeros(64)      # conjugate point
        self.pad = np.full((64, 8), self.null, dtype=np.intp)
        self.owner = np.zeros(64, dtype=np.intp)

    def _grow(self, rows: int, cols: int):
        r, c = self.pad.shape
        if rows > r or cols > c:
            r2 = max(r, 2 * r if rows > r else r)
            c2 = max(c, cols)
            pad = np.full((r2, c2), self.null, dtype=np.intp)
            pad[:r, :c] = self.pad
            self.pad = pad
            for name in ("x", "s"):
                a = np.zeros(r2)
                a[:r] = getattr(self, name)
                setattr(self, name, a)
            owner = np.zeros(r2, dtype=np.intp)
            owner[:r] = self.owner
            self.owner = owner

    def ensure(self, k, p) -> int:
        key = (k, p)
        i = self.ids.get(key)
        if i is None:
            i = self.ids[key] = self.size
            self.commodity.append(k)
            self.edges.append(p)
            self.size += 1
            self._grow(self.size, len(p))
            self.pad[i, : len(p)] = p
            self.owner[i] = k
        return i

    def pruned(self, net: Network, threshold: float):
        n = self.size
        w = self.x[:n]
        out: list[list[tuple[tuple[int, ...], float]]] = [[] for _ in range(net.num_commodities)]
        for i in range(n):
            if w[i] > 0:
                out[self.commodity[i]].append((self.edges[i], float(w[i])))
        for k, c in enumerate(net.commodities):
            plist = out[k]
            if not plist:
                continue
            keep = [(p, w_) for p, w_ in plist if w_ >= threshold * c.demand]
            if not keep:
                keep = [max(plist, key=lambda t: t[1])]
            total = sum(w_ for _, w_ in keep)
            out[k] = sorted(((p, w_ * c.demand / total) for p, w_ in keep),
                            key=lambda t: (-t[1], t[0]))
        return out


def _fw_step(net, alpha, cfg, tolls, store, x, costs, y, ids, s_bar):
    """One (conjugate) Frank-Wolfe move; returns (x, s_bar, lam)."""
    demands = net.demands
    n = store.size
    weight = 0.0
    if cfg.method == "cfw" and s_bar is not None:
        h = _edge_cost_slopes(net, x, alpha)
        u = s_bar - x
        num = float(np.dot(u * h, y - x))
        den = float(np.dot(u * h, y - s_bar))
        if den != 0.0:
            weight = min(max(num / den, 0.0), 1.0 - cfg.conjugate_delta)
    if weight > 0.0:
        target = weight * s_bar + (1 - weight) * y
        if float(np.dot(costs, target - x)) >= 0:
            weight = 0.0
    if weight > 0.0:
        store.s[:n] *= weight
        store.s[ids] += (1 - weight) * demands
        s_bar = target
    else:
        store.s[:n] = 0.0
        store.s[ids] = demands
        s_bar = y

    lam = line_search(net, x, s_bar, alpha, cfg.line_search_tolerance, tolls)
    if lam <= 0.0 and s_bar is not y:
        # conjugate point failed to descend; fall back to the plain direction
        store.s[:n] = 0.0
        store.s[ids] = demands
        s_bar = y
        lam = line_search(net, x, y, alpha, cfg.line_search_tolerance, tolls)
    if lam > 0.0:
        x = x + lam * (s_bar - x)
        store.x[:n] = (1 - lam) * store.x[:n] + lam * store.s[:n]
    return x, s_bar, lam


# passes stop once the restricted gap falls below this fraction of the full gap
_MASTER_GAP_RATIO = 0.1


def _path_passes(net, alpha, cfg, tolls, store, x, best, outer_gap=0.0):
    """Equilibrate path flows over the recorded columns.

    Each pass moves flow from every recorded path towards its commodity's
    cheapest recorded path by a Newton step (cost difference over the
    curvature of the symmetric difference), then takes an exact line search
    along the combined edge-flow direction.
    """
    n = store.size
    E1 = net.num_edges + 1
    pad = store.pad[:n]
    owner = store.owner[:n]
    f = store.x[:n]
    width = pad.shape[1]
    flat = owner[:, None] * E1 + pad          # index into a K x (E+1) table
    perm = np.argsort(owner, kind="stable")
    seg = owner[perm]
    starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
    ext = np.zeros(E1)
    member = np.zeros(net.num_commodities * E1)   # 1.0 on edges of each commodity's best path
    member[flat[best]] = 1.0
    for it in range(cfg.master_passes):
        ext[:-1] = edge_costs(net, x, alpha, tolls)
        cost = ext[pad].sum(axis=1)
        if it:
            cs = cost[perm]
            low = np.minimum.reduceat(cs, starts)
            idx = np.flatnonzero(cs <= low[np.searchsorted(starts, np.arange(n), "right") - 1])
            first = np.r_[True, seg[idx[1:]] != seg[idx[:-1]]]
            new_best = perm[idx[first]]
            if not np.array_equal(new_best, best):
                member[flat[best]] = 0.0
                best = new_best
                member[flat[best]] = 1.0
        b = best[owner]
        diff = cost - cost[b]
        active = (f > 0) & (diff > 0)
        # restricted master solved to round-off: further passes cannot help
        if not active.any() or np.dot(f, diff) <= _MASTER_GAP_RATIO * outer_gap * np.dot(f, cost):
            break
        ext[:-1] = _edge_cost_slopes(net, x, alpha)
        gathered = ext[pad]
        curv = gathered.sum(axis=1)
        shared = np.einsum("ij,ij->i", gathered, member[flat])
        H = curv + curv[b] - 2.0 * shared
        step = np.where(active, f, 0.0)
        pos = active & (H > 0)
        step[pos] = np.minimum(f[pos], diff[pos] / H[pos])
        dvec = np.bincount(b, weights=step, minlength=n) - step
        D = np.bincount(pad.ravel(), weights=np.repeat(dvec, width), minlength=E1)[:-1]
        lam = _bisect_slope(_slope_polynomial(net, x, D, alpha, tolls), cfg.line_search_tolerance)
        if lam <= 0.0:
            break
        f += lam * dvec
        np.maximum(f, 0.0, out=f)
        x = np.maximum(x + lam * D, 0.0)
    return x


def solve(net: Network, alpha: float, cfg: SolverConfig | None = None, tolls=None) -> FlowState:
    """Solve I-TAP at ``alpha`` (UE at 0, SO at 1); optional constant edge ``tolls``."""
    cfg = cfg or SolverConfig()
    alpha = _check_alpha(alpha)
    tolls = None if tolls is None else np.asarray(tolls, dtype=float)
    if net.num_commodities == 0:
        zero = np.zeros(net.num_edges)
        return FlowState(alpha, zero, np.zeros((0, net.num_edges)), [], 0.0, 0.0, 0.0, 0.0, 0, tolls)
    demands = net.demands
    store = _PathStore(net)

    costs = edge_costs(net, np.zeros(net.num_edges), alpha, tolls)
    x, paths = _aon(net, costs)
    ids = [store.ensure(k, p) for k, p in enumerate(paths)]
    store.x[ids] = demands
    s_bar = None
    history = [interpolated_objective(net, x, alpha, tolls)]
    it = 0
    # the loop target tightens until the pruned state itself meets the target
    inner_target = cfg.target_relative_gap
    while True:
        stalled = False
        while it < cfg.max_iterations:
            costs = edge_costs(net, x, alpha, tolls)
            y, paths = _aon(net, costs)
            gap = _gap_from(costs, x, y)
            if gap <= inner_target and (
                    cfg.max_path_excess is None
                    or _store_excess(net, store, costs, paths, cfg.path_record_threshold)
                    <= cfg.max_path_excess):
                break
            it += 1
            ids = [store.ensure(k, p) for k, p in enumerate(paths)]
            if cfg.method == "path":
                x = _path_passes(net, alpha, cfg, tolls, store, x,
                                 np.asarray(ids, dtype=np.intp), gap)
            else:
                x, s_bar, lam = _fw_step(net, alpha, cfg, tolls, store, x, costs, y, ids, s_bar)
                if lam <= 0.0:
                    stalled = True
                    break
            history.append(interpolated_objective(net, x, alpha, tolls))
        recorded = store.pruned(net, cfg.path_record_threshold)
        state = state_from_paths(net, alpha, recorded, tolls, it, history)
        converged = state.relative_gap <= cfg.target_relative_gap and (
            cfg.max_path_excess is None or path_cost_excess(net, state) <= cfg.max_path_excess)
        if (converged or stalled
                or it >= cfg.max_iterations or inner_target < 1e-15):
            break
        inner_target *= 0.1
    log.debug("solve alpha=%.4f iterations=%d gap=%.3e", alpha, it, state.relative_gap)
    return state
