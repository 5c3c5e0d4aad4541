"""Stage-order planning from accuracy/compression trade-off points.

Each compressed configuration yields a point (accuracy, bitops
compression ratio).  For two candidate orders of the same stage pair we
compare the hypervolumes of their Pareto fronts against a shared
reference point (compression on a log2 axis, since ratios span orders of
magnitude); a sufficiently large win emits a precedence edge "apply X
before Y".  Collected edges form a DAG whose topological sort is the
recommended pipeline order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .stages import StageKind


@dataclass(frozen=True)
class ParetoPoint:
    accuracy: float          # percent
    bitops_cr: float
    cr: float = float("nan")
    config_id: str = ""
    pipeline_tag: str = ""

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"ParetoPoint: accuracy must be in [0, 100], got {self.accuracy}")
        if not self.bitops_cr > 0:
            raise ValueError(f"ParetoPoint: bitops_cr must be positive, got {self.bitops_cr}")

    @property
    def log2_bitops_cr(self) -> float:
        return math.log2(self.bitops_cr)


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """True when a is no worse on both axes and strictly better on one."""
    if a.accuracy < b.accuracy or a.bitops_cr < b.bitops_cr:
        return False
    return a.accuracy > b.accuracy or a.bitops_cr > b.bitops_cr


def pareto_front(points: Sequence[ParetoPoint]) -> list:
    """Maximal subset under dominance, sorted by accuracy descending.

    Points with identical (accuracy, bitops_cr) collapse to the first
    occurrence.
    """
    pts = list(points)
    if not pts:
        raise ValueError("pareto_front: empty input")
    # stable sort: accuracy desc, then bitops_cr desc; first occurrence
    # of a duplicate coordinate pair wins
    order = sorted(range(len(pts)),
                   key=lambda i: (-pts[i].accuracy, -pts[i].bitops_cr, i))
    front = []
    best_cr = -math.inf
    seen = set()
    for i in order:
        p = pts[i]
        key = (p.accuracy, p.bitops_cr)
        if key in seen:
            continue
        if p.bitops_cr > best_cr:
            front.append(p)
            best_cr = p.bitops_cr
            seen.add(key)
    return front


def hypervolume(points: Iterable[ParetoPoint], ref_accuracy: float,
                ref_log_cr: float) -> float:
    """Area dominated by ``points`` above the reference corner.

    Rectangles span (ref_accuracy, ref_log_cr) .. (accuracy, log2 cr);
    the union is swept in accuracy-descending order.  Every point must
    weakly dominate the reference.
    """
    pts = list(points)
    for p in pts:
        if p.accuracy < ref_accuracy or p.log2_bitops_cr < ref_log_cr:
            raise ValueError(
                f"hypervolume: point (acc={p.accuracy}, log2cr={p.log2_bitops_cr:.3f}) "
                f"below reference (acc={ref_accuracy}, log2cr={ref_log_cr})")
    area = 0.0
    best = ref_log_cr
    for p in sorted(pts, key=lambda q: -q.accuracy):
        l = p.log2_bitops_cr
        if l > best:
            area += (p.accuracy - ref_accuracy) * (l - best)
            best = l
    return area


@dataclass
class OrderFront:
    """Pareto front of one stage ordering plus its reference point."""

    order: tuple                 # StageKind sequence, first-applied first
    points: list
    ref_accuracy: float
    ref_log_cr: float = 0.0

    @property
    def tag(self) -> str:
        return "".join(k.letter for k in self.order)

    def hypervolume(self) -> float:
        return hypervolume(self.points, self.ref_accuracy, self.ref_log_cr)


@dataclass(frozen=True)
class Edge:
    """Precedence constraint: apply ``before`` earlier than ``after``."""

    before: StageKind
    after: StageKind
    margin: float = 0.0

    def __post_init__(self):
        if self.before is self.after:
            raise ValueError(f"Edge: self-edge on {self.before.name}")

    def __str__(self):
        return f"{self.before.letter}->{self.after.letter}"


@dataclass
class OrderDecision:
    edge: Optional[Edge]
    hv_first: float
    hv_second: float
    margin: float

    @property
    def conclusive(self) -> bool:
        return self.edge is not None


def compare_orders(front_a: OrderFront, front_b: OrderFront,
                   margin: float = 0.05) -> OrderDecision:
    """Emit a precedence edge when one ordering's hypervolume clearly wins.

    The winner must exceed the loser by the relative ``margin``; otherwise
    the comparison is inconclusive and no edge is produced.  Both fronts
    must share the same reference point and be reverses of each other.
    """
    if (front_a.ref_accuracy, front_a.ref_log_cr) != (front_b.ref_accuracy, front_b.ref_log_cr):
        raise ValueError(
            f"compare_orders: mismatched reference points "
            f"({front_a.ref_accuracy}, {front_a.ref_log_cr}) vs "
            f"({front_b.ref_accuracy}, {front_b.ref_log_cr})")
    if tuple(front_a.order) != tuple(reversed(front_b.order)):
        raise ValueError(
            f"compare_orders: orders {front_a.tag} and {front_b.tag} are not reverses")
    hv_a = front_a.hypervolume()
    hv_b = front_b.hypervolume()
    edge = None
    if hv_a > hv_b * (1.0 + margin):
        gain = math.inf if hv_b == 0 else hv_a / hv_b - 1.0
        edge = Edge(front_a.order[0], front_a.order[-1], gain)
    elif hv_b > hv_a * (1.0 + margin):
        gain = math.inf if hv_a == 0 else hv_b / hv_a - 1.0
        edge = Edge(front_b.order[0], front_b.order[-1], gain)
    return OrderDecision(edge=edge, hv_first=hv_a, hv_second=hv_b, margin=margin)


class CycleError(ValueError):
    def __init__(self, cycle: list):
        self.cycle = list(cycle)
        path = "->".join(k.letter for k in self.cycle)
        super().__init__(f"precedence edges contain a cycle: [{path}]")


@dataclass
class PrecedenceGraph:
    nodes: list = field(default_factory=list)     # StageKind, priority order
    edges: dict = field(default_factory=dict)     # (before, after) -> margin

    def successors(self, k: StageKind) -> list:
        return [b for (a, b) in self.edges if a is k]


def _find_cycle(nodes, adj) -> Optional[list]:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    stack: list = []

    def dfs(u):
        color[u] = GRAY
        stack.append(u)
        for v in adj.get(u, ()):
            if color[v] == GRAY:
                return stack[stack.index(v):] + [v]
            if color[v] == WHITE:
                found = dfs(v)
                if found:
                    return found
        stack.pop()
        color[u] = BLACK
        return None

    for n in nodes:
        if color[n] == WHITE:
            found = dfs(n)
            if found:
                return found
    return None


def build_dag(edges: Iterable[Edge], nodes: Optional[Iterable[StageKind]] = None) -> PrecedenceGraph:
    """Precedence graph over the stage kinds present in ``edges``.

    Rejects duplicate or contradictory edges for one pair, and cycles
    (reported with the offending path).
    """
    edge_map: dict = {}
    node_set = set(nodes) if nodes is not None else set()
    for e in edges:
        node_set.update((e.before, e.after))
        if (e.after, e.before) in edge_map:
            raise ValueError(
                f"build_dag: contradictory edges {e.before.letter}->{e.after.letter} "
                f"and {e.after.letter}->{e.before.letter}")
        if (e.before, e.after) in edge_map:
            raise ValueError(f"build_dag: duplicate edge {e}")
        edge_map[(e.before, e.after)] = e.margin
    ordered_nodes = sorted(node_set, key=lambda k: k.priority)
    adj = {n: [] for n in ordered_nodes}
    for (a, b) in edge_map:
        adj[a].append(b)
    cycle = _find_cycle(ordered_nodes, adj)
    if cycle:
        raise CycleError(cycle)
    return PrecedenceGraph(nodes=ordered_nodes, edges=edge_map)


def toposort(g: PrecedenceGraph) -> tuple:
    """Kahn's algorithm over the precedence graph.

    Returns (order, unique): ``unique`` is True iff every step had exactly
    one zero-indegree candidate; ties break by the fixed kind priority
    D < P < Q < E.
    """
    indeg = {n: 0 for n in g.nodes}
    adj = {n: [] for n in g.nodes}
    for (a, b) in g.edges:
        indeg[b] += 1
        adj[a].append(b)
    ready = sorted((n for n in g.nodes if indeg[n] == 0), key=lambda k: k.priority)
    order = []
    unique = True
    while ready:
        if len(ready) > 1:
            unique = False
        n = ready.pop(0)
        order.append(n)
        for v in adj[n]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
        ready.sort(key=lambda k: k.priority)
    if len(order) != len(g.nodes):
        remaining = [n for n in g.nodes if n not in order]
        cycle = _find_cycle(remaining, {n: [v for v in adj[n] if v in remaining]
                                        for n in remaining})
        raise CycleError(cycle or remaining)
    return order, unique
