"""Road networks with polynomial travel-time functions and O-D demand.

Vertices are 0-based internally.  TNTP files are 1-based and are shifted on
read/write.
"""
from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable

import numpy as np

from .errors import InstanceError, ParameterError, ParseError, ValidationError

BPR_A = 0.15
BPR_POWER = 4


@dataclass(frozen=True)
class TravelTimeFn:
    """Polynomial travel time t(x) = sum_i coefficients[i] * x**i.

    ``bpr`` keeps the (free_flow_time, capacity, b, power) parameters when
    the polynomial came from a BPR function, so the scalar evaluation can use
    the normalised form and TNTP output can be regenerated exactly.
    """

    coefficients: tuple[float, ...]
    bpr: tuple[float, float, float, int] | None = None

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            coeffs = (0.0,)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_bpr(cls, free_flow_time, capacity, b=BPR_A, power=BPR_POWER):
        if capacity <= 0:
            raise InstanceError(f"nonpositive capacity {capacity}")
        if power < 0 or float(power) != int(power):
            raise InstanceError(f"BPR power {power} is not a nonnegative integer")
        power = int(power)
        coeffs = [0.0] * (power + 1)
        coeffs[0] += free_flow_time
        coeffs[power] += free_flow_time * b / capacity**power
        return cls(tuple(coeffs), (float(free_flow_time), float(capacity), float(b), power))

    @classmethod
    def affine(cls, constant, slope):
        return cls((constant, slope))

    @classmethod
    def monomial(cls, degree, scale=1.0):
        coeffs = [0.0] * (degree + 1)
        coeffs[degree] = scale
        return cls(tuple(coeffs))

    @property
    def degree(self) -> int:
        for i in range(len(self.coefficients) - 1, 0, -1):
            if self.coefficients[i] != 0.0:
                return i
        return 0

    def __call__(self, x: float) -> float:
        if self.bpr is not None:
            fft, cap, b, p = self.bpr
            return fft * (1.0 + b * (x / cap) ** p)
        return float(np.polynomial.polynomial.polyval(x, self.coefficients))

    def derivative(self, x: float) -> float:
        if self.bpr is not None:
            fft, cap, b, p = self.bpr
            if p == 0:
                return 0.0
            return fft * b * p * x ** (p - 1) / cap**p
        d = np.polynomial.polynomial.polyder(self.coefficients)
        return float(np.polynomial.polynomial.polyval(x, d))

    def integral(self, x: float) -> float:
        """Closed-form antiderivative evaluated at ``x`` (zero at the origin)."""
        c = np.polynomial.polynomial.polyint(self.coefficients)
        return float(np.polynomial.polynomial.polyval(x, c))


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int
    fn: TravelTimeFn
    length: float = 0.0


@dataclass(frozen=True)
class Commodity:
    origin: int
    destination: int
    demand: float
    value_of_time: float = 1.0


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    message: str
    severity: str = "error"


@dataclass(frozen=True)
class Network:
    """Immutable network instance.

    Array views (``tails``, ``coefficient_matrix`` ...) are computed lazily and
    cached on the instance.
    """

    num_vertices: int
    edges: tuple[Edge, ...]
    commodities: tuple[Commodity, ...] = ()
    name: str = ""
    first_thru_node: int = 0
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "commodities", tuple(self.commodities))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_commodities(self) -> int:
        return len(self.commodities)

    @cached_property
    def tails(self) -> np.ndarray:
        return np.array([e.tail for e in self.edges], dtype=np.int64)

    @cached_property
    def heads(self) -> np.ndarray:
        return np.array([e.head for e in self.edges], dtype=np.int64)

    @cached_property
    def demands(self) -> np.ndarray:
        return np.array([c.demand for c in self.commodities], dtype=float)

    @cached_property
    def values_of_time(self) -> np.ndarray:
        return np.array([c.value_of_time for c in self.commodities], dtype=float)

    @cached_property
    def max_degree(self) -> int:
        return max((e.fn.degree for e in self.edges), default=0)

    @cached_property
    def coefficient_matrix(self) -> np.ndarray:
        width = max((len(e.fn.coefficients) for e in self.edges), default=1)
        mat = np.zeros((self.num_edges, width))
        for i, e in enumerate(self.edges):
            mat[i, : len(e.fn.coefficients)] = e.fn.coefficients
        return mat

    @cached_property
    def out_edges(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per vertex, (edge index, head) pairs in increasing edge index."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.num_vertices)]
        for i, e in enumerate(self.edges):
            adj[e.tail].append((i, e.head))
        return tuple(tuple(a) for a in adj)

    # vectorised evaluation over all edges -------------------------------
    def travel_times(self, x: np.ndarray) -> np.ndarray:
        c = self.coefficient_matrix
        out = np.full_like(x, c[:, -1], dtype=float)
        for j in range(c.shape[1] - 2, -1, -1):
            out = out * x + c[:, j]
        return out

    def travel_time_derivatives(self, x: np.ndarray) -> np.ndarray:
        c = self.coefficient_matrix
        if c.shape[1] == 1:
            return np.zeros_like(x, dtype=float)
        out = np.full_like(x, c[:, -1] * (c.shape[1] - 1), dtype=float)
        for j in range(c.shape[1] - 2, 0, -1):
            out = out * x + j * c[:, j]
        return out

    def travel_time_integrals(self, x: np.ndarray) -> np.ndarray:
        c = self.coefficient_matrix
        w = c.shape[1]
        out = np.full_like(x, c[:, -1] / w, dtype=float)
        for j in range(w - 2, -1, -1):
            out = out * x + c[:, j] / (j + 1)
        return out * x

    def path_travel_time(self, edge_ids: Iterable[int], x: np.ndarray) -> float:
        t = self.travel_times(x)
        return float(sum(t[e] for e in edge_ids))

    def path_vertices(self, edge_ids: Iterable[int]) -> list[int]:
        ids = list(edge_ids)
        if not ids:
            return []
        verts = [self.edges[ids[0]].tail]
        verts.extend(self.edges[e].head for e in ids)
        return verts

    def reachable_from(self, source: int) -> set[int]:
        seen = {source}
        queue = deque([source])
        while queue:
            v = queue.popleft()
            for _, h in self.out_edges[v]:
                if h not in seen:
                    seen.add(h)
                    queue.append(h)
        return seen

    def with_commodities(self, commodities) -> "Network":
        return Network(self.num_vertices, self.edges, tuple(commodities), self.name,
                       self.first_thru_node, dict(self.metadata))

    def scaled(self, factor: float) -> "Network":
        """Copy with every travel-time function multiplied by ``factor``."""
        edges = []
        for e in self.edges:
            bpr = None
            if e.fn.bpr is not None:
                fft, cap, b, p = e.fn.bpr
                bpr = (fft * factor, cap, b, p)
            fn = TravelTimeFn(tuple(factor * c for c in e.fn.coefficients), bpr)
            edges.append(Edge(e.tail, e.head, fn, e.length))
        return Network(self.num_vertices, tuple(edges), self.commodities, self.name,
                       self.first_thru_node, dict(self.metadata))

    # JSON instance format ------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_vertices": self.num_vertices,
            "edges": [
                {"tail": e.tail, "head": e.head, "coefficients": list(e.fn.coefficients),
                 "length": e.length,
                 **({"bpr": list(e.fn.bpr)} if e.fn.bpr is not None else {})}
                for e in self.edges
            ],
            "commodities": [
                {"origin": c.origin, "destination": c.destination, "demand": c.demand,
                 "value_of_time": c.value_of_time}
                for c in self.commodities
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        edges = []
        for e in data["edges"]:
            bpr = tuple(e["bpr"]) if e.get("bpr") is not None else None
            if bpr is not None:
                bpr = (float(bpr[0]), float(bpr[1]), float(bpr[2]), int(bpr[3]))
            fn = TravelTimeFn(tuple(e["coefficients"]), bpr)
            edges.append(Edge(int(e["tail"]), int(e["head"]), fn, float(e.get("length", 0.0))))
        comms = [
            Commodity(int(c["origin"]), int(c["destination"]), float(c["demand"]),
                      float(c.get("value_of_time", 1.0)))
            for c in data.get("commodities", [])
        ]
        return cls(int(data["num_vertices"]), tuple(edges), tuple(comms), data.get("name", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------------
# validation

def validate(net: Network, include_warnings: bool = False) -> list[Diagnostic]:
    """Return one diagnostic per violated invariant; empty when the instance is sound."""
    out: list[Diagnostic] = []
    n = net.num_vertices
    for i, e in enumerate(net.edges):
        if not (0 <= e.tail < n and 0 <= e.head < n):
            out.append(Diagnostic("endpoint", f"edge {i} has endpoint outside 0..{n - 1}"))
            continue
        if any(c < 0 or not math.isfinite(c) for c in e.fn.coefficients):
            out.append(Diagnostic("coefficient",
                                  f"edge {i} ({e.tail}->{e.head}) has a negative or non-finite coefficient"))
        if e.length < 0:
            out.append(Diagnostic("length", f"edge {i} has negative normal length {e.length}"))
        if include_warnings and e.tail == e.head:
            out.append(Diagnostic("self_loop", f"edge {i} is a self loop at {e.tail}", "warning"))
    if any(d.kind == "endpoint" for d in out):
        return out
    reach_cache: dict[int, set[int]] = {}
    for k, c in enumerate(net.commodities):
        if not (0 <= c.origin < n and 0 <= c.destination < n):
            out.append(Diagnostic("endpoint", f"commodity {k} references a missing vertex"))
            continue
        if not c.demand > 0:
            out.append(Diagnostic("demand", f"commodity {k} has nonpositive demand {c.demand}"))
        if not c.value_of_time > 0:
            out.append(Diagnostic("value_of_time", f"commodity {k} has nonpositive value of time"))
        if c.origin not in reach_cache:
            reach_cache[c.origin] = net.reachable_from(c.origin)
        if c.destination not in reach_cache[c.origin]:
            out.append(Diagnostic(
                "reachability",
                f"commodity {k}: destination {c.destination + 1} unreachable from origin {c.origin + 1}"))
    return out


def check(net: Network) -> Network:
    diags = validate(net)
    if diags:
        raise ValidationError("; ".join(d.message for d in diags), diags)
    return net


# ----------------------------------------------------------------------------
# TNTP

_META = re.compile(r"^\s*<([^>]+)>\s*(.*?)\s*$")
_REQUIRED_NET_META = ("NUMBER OF NODES", "NUMBER OF LINKS", "FIRST THRU NODE")


def _read_metadata(lines, required=()):
    meta: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        m = _META.match(line)
        if m is None:
            raise ParseError(f"expected metadata tag, got {line[:40]!r}", lineno)
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            for req in required:
                if req not in meta:
                    raise ParseError(f"missing <{req}> before <END OF METADATA>", lineno)
            return meta, lineno
        meta[key] = m.group(2)
    raise ParseError("missing <END OF METADATA>", len(lines))


def _meta_int(meta, key, lineno):
    try:
        return int(float(meta[key]))
    except ValueError:
        raise ParseError(f"<{key}> is not an integer: {meta[key]!r}", lineno) from None


def _read_text(src) -> str:
    if hasattr(src, "read"):
        return src.read()
    return src


def _parse_links(text: str):
    lines = text.splitlines()
    meta, end = _read_metadata(lines, _REQUIRED_NET_META)
    n_nodes = _meta_int(meta, "NUMBER OF NODES", end)
    n_links = _meta_int(meta, "NUMBER OF LINKS", end)
    first_thru = _meta_int(meta, "FIRST THRU NODE", end)
    edges: list[Edge] = []
    for lineno in range(end + 1, len(lines) + 1):
        line = lines[lineno - 1].split("~", 1)[0].strip()
        if not line:
            continue
        line = line.rstrip(";").strip()
        toks = line.split()
        if len(toks) < 7:
            raise ParseError(f"link row needs at least 7 columns, got {len(toks)}", lineno)
        try:
            tail, head = int(toks[0]), int(toks[1])
            cap, length, fft, b, power = (float(t) for t in toks[2:7])
        except ValueError:
            raise ParseError(f"non-numeric link row {line[:40]!r}", lineno) from None
        if not (1 <= tail <= n_nodes and 1 <= head <= n_nodes):
            raise ParseError(f"link endpoint outside 1..{n_nodes}", lineno)
        if cap <= 0:
            raise InstanceError(f"line {lineno}: nonpositive capacity {cap}")
        fn = TravelTimeFn.from_bpr(fft, cap, b, power)
        edges.append(Edge(tail - 1, head - 1, fn, length))
    if len(edges) != n_links:
        raise ParseError(f"<NUMBER OF LINKS> says {n_links}, found {len(edges)}", len(lines))
    return n_nodes, first_thru, edges


_TRIP = re.compile(r"(\d+)\s*:\s*([-+0-9.eE]+)")


def _parse_trips(text: str, n_nodes: int):
    lines = text.splitlines()
    if not any(l.strip() for l in lines):
        return []
    start = 0
    if any("<END OF METADATA>" in l.upper() for l in lines):
        _, start = _read_metadata(lines)
    demand: dict[tuple[int, int], float] = {}
    origin = None
    for lineno in range(start + 1, len(lines) + 1):
        line = lines[lineno - 1].split("~", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("origin"):
            parts = line.split()
            try:
                origin = int(parts[1])
            except (IndexError, ValueError):
                raise ParseError(f"malformed origin line {line!r}", lineno) from None
            if not 1 <= origin <= n_nodes:
                raise ParseError(f"origin {origin} outside 1..{n_nodes}", lineno)
            continue
        if origin is None:
            raise ParseError("trip entry before any Origin block", lineno)
        entries = _TRIP.findall(line)
        if not entries:
            raise ParseError(f"cannot parse trip entries {line[:40]!r}", lineno)
        for dest_s, flow_s in entries:
            dest, flow = int(dest_s), float(flow_s)
            if not 1 <= dest <= n_nodes:
                raise ParseError(f"destination {dest} outside 1..{n_nodes}", lineno)
            if flow < 0:
                raise InstanceError(f"line {lineno}: negative demand {flow}")
            key = (origin - 1, dest - 1)
            demand[key] = demand.get(key, 0.0) + flow
    return [Commodity(o, d, q) for (o, d), q in demand.items() if q > 0 and o != d]


def parse_tntp(net_text, trips_text, name: str = "") -> Network:
    """Parse TNTP ``_net`` and ``_trips`` text (strings or file objects)."""
    n_nodes, first_thru, edges = _parse_links(_read_text(net_text))
    comms = _parse_trips(_read_text(trips_text), n_nodes)
    net = Network(n_nodes, tuple(edges), tuple(comms), name, first_thru)
    return check(net)


def load_tntp(net_path, trips_path, name: str | None = None) -> Network:
    with open(net_path) as fn, open(trips_path) as ft:
        return parse_tntp(fn, ft, name if name is not None else str(net_path))


def write_tntp(net: Network) -> tuple[str, str]:
    """Serialise a BPR network back to TNTP net and trips text."""
    rows = [
        f"<NUMBER OF ZONES> {net.num_vertices}",
        f"<NUMBER OF NODES> {net.num_vertices}",
        f"<FIRST THRU NODE> {max(net.first_thru_node, 1)}",
        f"<NUMBER OF LINKS> {net.num_edges}",
        "<END OF METADATA>",
        "",
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for i, e in enumerate(net.edges):
        if e.fn.bpr is None:
            raise InstanceError(f"edge {i} is not a BPR function; TNTP cannot represent it")
        fft, cap, b, p = e.fn.bpr
        rows.append(f"\t{e.tail + 1}\t{e.head + 1}\t{cap!r}\t{e.length!r}\t{fft!r}\t{b!r}\t{p}\t0\t0\t1\t;")
    by_origin: dict[int, list[Commodity]] = {}
    for c in net.commodities:
        by_origin.setdefault(c.origin, []).append(c)
    total = sum(c.demand for c in net.commodities)
    trips = [f"<NUMBER OF ZONES> {net.num_vertices}", f"<TOTAL OD FLOW> {total!r}",
             "<END OF METADATA>", ""]
    for o in sorted(by_origin):
        trips.append(f"Origin {o + 1}")
        trips.append("  ".join(f"{c.destination + 1} : {c.demand!r};" for c in by_origin[o]))
        trips.append("")
    return "\n".join(rows) + "\n", "\n".join(trips) + "\n"


# ----------------------------------------------------------------------------
# built-in instances

def build_pigou(m: int = 1, epsilon: float = 0.0, demand: float = 1.0) -> Network:
    """Two parallel edges: t1(x) = 1 + epsilon*x and t2(x) = x**m."""
    if int(m) != m or m < 1:
        raise ParameterError(f"degree m must be an integer >= 1, got {m}")
    if epsilon < 0:
        raise ParameterError("epsilon must be nonnegative")
    if not demand > 0:
        raise ParameterError("demand must be positive")
    e1 = Edge(0, 1, TravelTimeFn.affine(1.0, epsilon))
    e2 = Edge(0, 1, TravelTimeFn.monomial(int(m)))
    return Network(2, (e1, e2), (Commodity(0, 1, float(demand)),), f"pigou-m{m}-eps{epsilon}")


def parallel_network(fns, demand: float = 1.0, name: str = "parallel") -> Network:
    edges = tuple(Edge(0, 1, fn) for fn in fns)
    return Network(2, edges, (Commodity(0, 1, float(demand)),), name)


def sioux_falls_paths():
    base = resources.files("fairflow") / "data"
    return base / "SiouxFalls_net.tntp", base / "SiouxFalls_trips.tntp"


def load_sioux_falls() -> Network:
    net_path, trips_path = sioux_falls_paths()
    return parse_tntp(net_path.read_text(), trips_path.read_text(), "SiouxFalls")
