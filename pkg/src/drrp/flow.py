"""Exact integer min-cost flow with node potentials.

Successive shortest paths on reduced costs.  Negative-cost arcs are saturated
up front so the residual graph starts with nonnegative costs, which also
takes care of negative cycles.  Each Dijkstra round updates the potentials
and then augments along every shortest-path-tree path that still has
residual capacity.

Sign conventions: node supply is ``outflow - inflow``; the potential ``pi`` is
the dual of that row, so the reduced cost of an arc is
``cost - pi[tail] + pi[head]``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FlowProblem:
    n_nodes: int
    supply: np.ndarray
    tail: np.ndarray
    head: np.ndarray
    capacity: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        for name in ("supply", "tail", "head", "capacity", "cost"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.supply.shape != (self.n_nodes,):
            raise ValueError("supply must have one entry per node")
        m = self.tail.shape[0]
        if not (self.head.shape[0] == self.capacity.shape[0] == self.cost.shape[0] == m):
            raise ValueError("arc arrays must have equal length")
        if m and (self.tail.min() < 0 or self.head.min() < 0 or max(self.tail.max(), self.head.max()) >= self.n_nodes):
            raise ValueError("arc endpoint out of range")
        if m and self.capacity.min() < 0:
            raise ValueError("capacities must be nonnegative")
        if int(self.supply.sum()) != 0:
            raise ValueError("supplies must balance to zero")

    @property
    def n_arcs(self) -> int:
        return int(self.tail.shape[0])


@dataclass(frozen=True)
class FlowSolution:
    status: str
    flow: np.ndarray
    cost: int
    potential: np.ndarray

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve_flow(problem: FlowProblem) -> FlowSolution:
    n, m = problem.n_nodes, problem.n_arcs
    tail = problem.tail.tolist()
    head = problem.head.tolist()
    cap = problem.capacity.tolist()
    cost = problem.cost.tolist()
    # residual arc a < m is forward, a >= m is the reverse of a - m
    to = head + tail
    frm = tail + head
    rcost = cost + [-c for c in cost]
    res = cap + [0] * m
    adj = [[] for _ in range(n)]
    for a in range(m):
        adj[tail[a]].append(a)
        adj[head[a]].append(a + m)
    excess = problem.supply.tolist()
    for a in range(m):
        if cost[a] < 0 and cap[a] > 0:
            res[a], res[a + m] = 0, cap[a]
            excess[tail[a]] -= cap[a]
            excess[head[a]] += cap[a]
    pot = [0] * n
    INF = float("inf")
    status = "optimal"
    while True:
        sources = [v for v in range(n) if excess[v] > 0]
        if not sources:
            break
        dist = [INF] * n
        pred = [-1] * n
        heap = []
        for s in sources:
            dist[s] = 0
            heap.append((0, s))
        heapq.heapify(heap)
        done = [False] * n
        reached_deficit = []
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if excess[u] < 0:
                reached_deficit.append(u)
            pu = pot[u]
            for a in adj[u]:
                if res[a] > 0:
                    v = to[a]
                    nd = d + rcost[a] + pu - pot[v]
                    if nd < dist[v]:
                        dist[v] = nd
                        pred[v] = a
                        heapq.heappush(heap, (nd, v))
        if not reached_deficit:
            status = "infeasible"
            break
        far = max(dist[v] for v in range(n) if done[v])
        for v in range(n):
            pot[v] += dist[v] if done[v] else far
        reached_deficit.sort(key=lambda v: (dist[v], v))
        for t in reached_deficit:
            if excess[t] >= 0:
                continue
            path = []
            v = t
            bottleneck = -excess[t]
            while excess[v] <= 0:
                a = pred[v]
                if a < 0:
                    break
                path.append(a)
                if res[a] < bottleneck:
                    bottleneck = res[a]
                v = frm[a]
            if excess[v] <= 0 or bottleneck <= 0:
                continue
            if excess[v] < bottleneck:
                bottleneck = excess[v]
            for a in path:
                res[a] -= bottleneck
                res[a + m if a < m else a - m] += bottleneck
            excess[v] -= bottleneck
            excess[t] += bottleneck
    flow = np.array([cap[a] - res[a] for a in range(m)], dtype=np.int64)
    total = int(sum(f * c for f, c in zip(flow.tolist(), cost)))
    potential = -np.array(pot, dtype=np.int64)
    return FlowSolution(status, flow, total, potential)


def reduced_costs(problem: FlowProblem, solution: FlowSolution) -> np.ndarray:
    pi = solution.potential
    return problem.cost - pi[problem.tail] + pi[problem.head]


def certificate_violations(problem: FlowProblem, solution: FlowSolution) -> list:
    """Empty iff flow is conserved, within bounds, and reduced-cost optimal."""
    out = []
    f = solution.flow
    if np.any(f < 0) or np.any(f > problem.capacity):
        out.append("flow outside [0, capacity]")
    bal = np.zeros(problem.n_nodes, dtype=np.int64)
    np.add.at(bal, problem.tail, f)
    np.subtract.at(bal, problem.head, f)
    if np.any(bal != problem.supply):
        out.append("flow conservation violated")
    rc = reduced_costs(problem, solution)
    if np.any((rc < 0) & (f < problem.capacity)):
        out.append("negative reduced cost on an unsaturated arc")
    if np.any((rc > 0) & (f > 0)):
        out.append("positive reduced cost on an arc carrying flow")
    return out


def extract_bound_duals(problem: FlowProblem, solution: FlowSolution, arcs) -> tuple:
    """Per tracked arc ``(lambda_lower, lambda_upper)`` in the cost units of the problem."""
    if not solution.optimal:
        raise ValueError("bound duals need an optimal flow")
    arcs = np.asarray(arcs, dtype=np.int64)
    pi = solution.potential
    t, h, c = problem.tail[arcs], problem.head[arcs], problem.cost[arcs]
    upper = np.maximum(0, pi[t] - pi[h] - c)
    lower = np.maximum(0, c + pi[h] - pi[t])
    f, u = solution.flow[arcs], problem.capacity[arcs]
    if np.any((upper > 0) & (f < u)) or np.any((lower > 0) & (f > 0)):
        raise ValueError("solution fails complementary slackness on a tracked arc")
    return lower, upper


def _dijkstra(n, source, adj):
    dist = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    dist[source] = 0
    heap = [(0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def residual_distances(problem: FlowProblem, solution: FlowSolution, target: int) -> tuple:
    """Cheapest residual paths ``node -> target`` and ``target -> node`` at an optimal flow.

    These are the exact costs of pushing one more unit from a node to
    ``target`` and back, i.e. the one-sided derivatives of the optimal cost
    in the supply of a node balanced at ``target``.  Unreachable nodes get
    ``inf``.  Returned as floats in the cost units of the problem.
    """
    if not solution.optimal:
        raise ValueError("residual distances need an optimal flow")
    n = problem.n_nodes
    rc = reduced_costs(problem, solution)
    fwd = [[] for _ in range(n)]
    rev = [[] for _ in range(n)]
    f, cap = solution.flow, problem.capacity
    for a, (u, v) in enumerate(zip(problem.tail.tolist(), problem.head.tolist())):
        if f[a] < cap[a]:
            fwd[u].append((v, int(rc[a])))
            rev[v].append((u, int(rc[a])))
        if f[a] > 0:
            fwd[v].append((u, -int(rc[a])))
            rev[u].append((v, -int(rc[a])))
    pi = solution.potential.astype(float)
    big = np.iinfo(np.int64).max
    to_t = _dijkstra(n, target, rev).astype(float)
    from_t = _dijkstra(n, target, fwd).astype(float)
    to_t = np.where(to_t >= big, np.inf, to_t + pi - pi[target])
    from_t = np.where(from_t >= big, np.inf, from_t + pi[target] - pi)
    return to_t, from_t


def flow_lp(problem: FlowProblem, supply=None):
    """The same problem as a generic LP (conservation rows, arc bounds)."""
    from .lp import LinearProgram

    m = problem.n_arcs
    rows = np.concatenate([problem.tail, problem.head])
    cols = np.concatenate([np.arange(m), np.arange(m)])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    b = problem.supply if supply is None else supply
    return LinearProgram(
        c=problem.cost.astype(float),
        rows=rows, cols=cols, vals=vals,
        sense=np.full(problem.n_nodes, "E"),
        rhs=np.asarray(b, dtype=float),
        lb=np.zeros(m), ub=problem.capacity.astype(float),
    )


# ---------------------------------------------------------------- DIMACS I/O


def write_dimacs(problem: FlowProblem, fh, comment: str | None = None) -> None:
    if comment:
        for line in comment.splitlines():
            fh.write(f"c {line}\n")
    fh.write(f"p min {problem.n_nodes} {problem.n_arcs}\n")
    for v, s in enumerate(problem.supply.tolist()):
        if s:
            fh.write(f"n {v + 1} {s}\n")
    for a in range(problem.n_arcs):
        fh.write(f"a {problem.tail[a] + 1} {problem.head[a] + 1} 0 {problem.capacity[a]} {problem.cost[a]}\n")


def read_dimacs(fh) -> FlowProblem:
    n = None
    supply = None
    tail, head, cap, cost = [], [], [], []
    for raw in fh:
        parts = raw.split()
        if not parts or parts[0] == "c":
            continue
        if parts[0] == "p":
            if parts[1] != "min":
                raise ValueError("only 'p min' problems are supported")
            n = int(parts[2])
            supply = [0] * n
        elif parts[0] == "n":
            supply[int(parts[1]) - 1] = int(parts[2])
        elif parts[0] == "a":
            lo = int(parts[3])
            if lo != 0:
                raise ValueError("nonzero lower bounds are not supported")
            tail.append(int(parts[1]) - 1)
            head.append(int(parts[2]) - 1)
            cap.append(int(parts[4]))
            cost.append(int(parts[5]))
        else:
            raise ValueError(f"unknown DIMACS line: {raw!r}")
    if n is None:
        raise ValueError("missing problem line")
    return FlowProblem(n, np.array(supply), np.array(tail, dtype=np.int64), np.array(head, dtype=np.int64),
                       np.array(cap, dtype=np.int64), np.array(cost, dtype=np.int64))
