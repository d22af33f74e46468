"""Independent ground truth: analytic Pigou solutions and brute-force grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .network import Network


@dataclass(frozen=True)
class PigouSolution:
    alpha: float
    x1: float
    x2: float
    total_travel_time: float
    ratio: float            # t_1 / t_2
    unfairness: float       # max/min travel time over edges carrying flow
    residual: float         # |c_1 - c_2| at interior solutions, else 0

    @property
    def flows(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


def _check_pigou(m, epsilon, demand):
    if m < 1 or int(m) != m:
        raise ParameterError(f"m must be an integer >= 1, got {m}")
    if epsilon < 0:
        raise ParameterError(f"epsilon must be >= 0, got {epsilon}")
    if demand <= 0:
        raise ParameterError(f"demand must be positive, got {demand}")


def _pigou_times(m, epsilon, x1, x2):
    return 1.0 + epsilon * x1, x2 ** m


def _pigou_unfairness(t1, t2, x1, x2):
    used = [t for t, x in ((t1, x1), (t2, x2)) if x > 0]
    return max(used) / min(used)


def pigou_solve(m: int = 1, epsilon: float = 0.0, demand: float = 1.0,
                alpha: float = 0.0) -> PigouSolution:
    """I-TAP on Pigou(m, eps) by bisection on c_2(x_2) - c_1(d - x_2).

    c_1(y) = 1 + (1 + alpha) eps y and c_2(y) = (1 + alpha m) y^m; the
    difference is increasing in x_2, so the root is unique.  When edge 2 is
    still no dearer with all demand on it, the tie goes to edge 2.
    """
    _check_pigou(m, epsilon, demand)
    if not 0 <= alpha <= 1:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")

    def excess(x2):
        return (1 + alpha * m) * x2 ** m - (1 + (1 + alpha) * epsilon * (demand - x2))

    residual = 0.0
    if excess(demand) <= 0:
        x2 = float(demand)
    else:
        lo, hi = 0.0, float(demand)
        while hi - lo > 1e-15 * max(1.0, demand):
            mid = 0.5 * (lo + hi)
            if excess(mid) > 0:
                hi = mid
            else:
                lo = mid
            if abs(excess(mid)) <= 1e-13:
                lo = hi = mid
        x2 = 0.5 * (lo + hi)
        residual = abs(excess(x2))
    x1 = demand - x2
    t1, t2 = _pigou_times(m, epsilon, x1, x2)
    tt = x1 * t1 + x2 * t2
    return PigouSolution(float(alpha), x1, x2, tt, t1 / t2 if t2 > 0 else float("inf"),
                         _pigou_unfairness(t1, t2, x1, x2), residual)


def _parallel_edges(net: Network) -> None:
    if net.num_commodities != 1:
        raise ParameterError("grid search needs exactly one commodity")
    if not 1 <= net.num_edges <= 3:
        raise ParameterError("grid search supports parallel networks with at most 3 edges")
    c = net.commodities[0]
    for e in net.edges:
        if (e.tail, e.head) != (c.origin, c.destination):
            raise ParameterError("grid search supports parallel origin-destination edges only")


def _interp_values(net: Network, flows: np.ndarray, alpha: float) -> np.ndarray:
    """h_I(alpha) for every row of ``flows`` (n x E)."""
    coef = net.coefficient_matrix
    out = np.zeros(flows.shape[0])
    for e in range(net.num_edges):
        x = flows[:, e]
        p = np.zeros_like(x)
        q = np.zeros_like(x)
        for j in range(coef.shape[1] - 1, -1, -1):
            p = p * x + coef[e, j]                # t_e
            q = q * x + coef[e, j] / (j + 1)      # integral / x
        out += alpha * x * p + (1 - alpha) * x * q
    return out


def grid_search_optimum(net: Network, alpha: float, grid_resolution: float = 1e-4) -> np.ndarray:
    """Minimise h_I(alpha) over a simplex grid of spacing grid_resolution * d.

    Two or three edges are refined coarse-to-fine: a grid around the current
    best point shrinks by a factor 10 per round until the spacing reaches
    the requested resolution.  Valid for the convex objectives used here.
    """
    _parallel_edges(net)
    if not 0 <= alpha <= 1:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    if not 0 < grid_resolution < 1:
        raise ParameterError("grid_resolution must lie in (0, 1)")
    d = net.commodities[0].demand
    E = net.num_edges
    if E == 1:
        return np.array([d])
    center = np.full(E - 1, d / E)
    width = d
    step = d / 100
    target = grid_resolution * d
    while True:
        step = max(step, target)
        axes = [np.clip(np.arange(max(0.0, c - width), min(d, c + width) + step / 2, step), 0, d)
                for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        last = d - pts.sum(axis=1)
        ok = last >= -1e-12
        pts = np.column_stack([pts[ok], np.maximum(last[ok], 0.0)])
        vals = _interp_values(net, pts, alpha)
        best = pts[int(np.argmin(vals))]
        if step <= target * (1 + 1e-9):
            return best
        center = best[:-1]
        width = 2 * step
        step = step / 10


def pigou_beta_so(m: int = 1, epsilon: float = 0.0, demand: float = 1.0, beta: float = 1.0,
                  resolution: float = 1e-5) -> np.ndarray:
    """Minimum total travel time over a grid on x_2 subject to U <= beta."""
    _check_pigou(m, epsilon, demand)
    if beta < 1:
        raise ParameterError(f"beta must be >= 1, got {beta}")
    x2 = np.linspace(0.0, demand, int(round(1 / resolution)) + 1)
    x1 = demand - x2
    t1, t2 = 1.0 + epsilon * x1, x2 ** m
    both = (x1 > 0) & (x2 > 0)
    with np.errstate(divide="ignore"):
        ratio = np.where(both, np.maximum(t1 / t2, t2 / t1), 1.0)
    tt = x1 * t1 + x2 * t2
    tt = np.where(ratio <= beta * (1 + 1e-12), tt, np.inf)
    # ties resolve towards edge 2, as in the all-or-nothing tie-break
    i = len(tt) - 1 - int(np.argmin(tt[::-1]))
    return np.array([x1[i], x2[i]])
