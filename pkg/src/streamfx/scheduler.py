"""Operator fusion and placement.

Cost model
----------
For a plan mapping every operator to a node::

    cost = alpha * (bytes/s on edges whose endpoints sit on different nodes)
         + beta  * max over nodes (CPU demand / capacity)

with operator CPU demand = input rate (tuples/s) x mean cost (us/tuple) and
node capacity in CPU microseconds per second.  Defaults alpha = 1,
beta = 1000.

Greedy fusion starts from one processing element (PE) per operator, and
repeatedly merges the adjacent pair whose merge lowers the cost the most
(ties, including zero-gain merges, go to the pair joined by the most bytes),
as long as the merged PE fits on a node and the PE graph stays acyclic.  PEs
are assigned to nodes first-fit-decreasing by CPU demand.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

log = logging.getLogger(__name__)

ALPHA = 1.0
BETA = 1000.0
COLD_RATE = 1.0      # tuples/s before profiling warms up
COLD_COST_US = 1.0   # us/tuple before profiling warms up
DEFAULT_CAPACITY = 1e6  # one core: 1e6 CPU-us per second
DEFAULT_THRESHOLD = 0.10


class PlanError(ValueError):
    """A placement plan violates its invariants."""


class InfeasibleError(ValueError):
    def __init__(self, demand: float, capacity: float, detail: str = ""):
        self.demand = demand
        self.capacity = capacity
        self.deficit = demand - capacity
        msg = (f"total CPU demand {demand:.6g} us/s exceeds total capacity {capacity:.6g} us/s "
               f"(deficit {self.deficit:.6g} us/s)")
        super().__init__(msg + (f"; {detail}" if detail else ""))


# ---------------------------------------------------------------- topology

@dataclass(frozen=True)
class OpGraph:
    """Bare operator topology: ids in topological order plus directed edges."""

    ops: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        known = set(self.ops)
        for u, v in self.edges:
            if u not in known or v not in known:
                raise PlanError(f"edge {u}->{v} references an unknown operator")


def topology(graph: Any) -> OpGraph:
    if isinstance(graph, OpGraph):
        return graph
    seen: dict[tuple[str, str], None] = {}
    for e in graph.edges:
        seen[(e.producer[0], e.consumer[0])] = None
    return OpGraph(tuple(graph.order), tuple(seen))


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class OpProfile:
    rate_in: float = COLD_RATE
    rate_out: float = COLD_RATE
    cost_us: float = COLD_COST_US
    queue_depth: float = 0.0

    def __post_init__(self):
        for name in ("rate_in", "rate_out", "cost_us", "queue_depth"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def demand(self) -> float:
        """CPU microseconds per second; sources are charged per emitted tuple."""
        rate = self.rate_in if self.rate_in > 0 else self.rate_out
        return rate * self.cost_us


@dataclass
class ProfileStats:
    ops: dict[str, OpProfile] = field(default_factory=dict)
    edges: dict[tuple[str, str], float] = field(default_factory=dict)  # bytes/s

    def op(self, op_id: str) -> OpProfile:
        return self.ops.get(op_id) or OpProfile()

    def edge_rate(self, u: str, v: str) -> float:
        return self.edges.get((u, v), COLD_RATE)

    def demand(self, op_id: str) -> float:
        return self.op(op_id).demand

    @classmethod
    def cold_start(cls, graph: Any) -> "ProfileStats":
        topo = topology(graph)
        return cls({o: OpProfile() for o in topo.ops}, {e: COLD_RATE for e in topo.edges})

    @classmethod
    def uniform(cls, graph: Any, rate: float = COLD_RATE, cost_us: float = COLD_COST_US,
                edge_rate: float = COLD_RATE) -> "ProfileStats":
        topo = topology(graph)
        return cls({o: OpProfile(rate, rate, cost_us) for o in topo.ops}, {e: edge_rate for e in topo.edges})

    @classmethod
    def from_job_stats(cls, graph: Any, stats: Any, previous: Any = None,
                       queue_depths: Mapping[str, int] | None = None) -> "ProfileStats":
        """Rates over the window between two :class:`~streamfx.engine.JobStats` samples.

        Operators that saw no traffic in the window keep the cold-start
        defaults so later divisions stay finite.
        """
        elapsed = stats.elapsed_s - (previous.elapsed_s if previous is not None else 0.0)
        if elapsed <= 0:
            raise ValueError("sampling window has zero length")
        topo = topology(graph)
        ops = {}
        for o in topo.ops:
            cur = stats.operators[o]
            old = previous.operators[o] if previous is not None else None
            d_in = cur.tuples_in - (old.tuples_in if old else 0)
            d_out = cur.tuples_out - (old.tuples_out if old else 0)
            d_busy = cur.busy_ns - (old.busy_ns if old else 0)
            base = d_in if d_in > 0 else d_out
            cost = d_busy / 1e3 / base if base > 0 else COLD_COST_US
            ops[o] = OpProfile(d_in / elapsed, d_out / elapsed, cost, float((queue_depths or {}).get(o, 0)))
        edges: dict[tuple[str, str], float] = {}
        for key, e in stats.edges.items():
            stream, consumer = key.split("->", 1)
            consumer = consumer.rsplit(":", 1)[0]
            producer = _producer_of(graph, stream)
            old = previous.edges.get(key) if previous is not None else None
            rate = (e.bytes - (old.bytes if old else 0)) / elapsed
            edges[(producer, consumer)] = edges.get((producer, consumer), 0.0) + rate
        for e in topo.edges:
            edges.setdefault(e, 0.0)
        return cls(ops, edges)


def _producer_of(graph: Any, stream: str) -> str:
    for e in graph.edges:
        if e.stream == stream:
            return e.producer[0]
    raise KeyError(stream)


# ---------------------------------------------------------------- plans

@dataclass(frozen=True)
class PlacementPlan:
    fusion: tuple[tuple[str, ...], ...]
    assignment: tuple[int, ...]  # node of each PE, by PE index
    objective: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "fusion", tuple(tuple(pe) for pe in self.fusion))
        object.__setattr__(self, "assignment", tuple(int(n) for n in self.assignment))

    @property
    def n_pes(self) -> int:
        return len(self.fusion)

    def pe_of(self) -> dict[str, int]:
        return {op: i for i, pe in enumerate(self.fusion) for op in pe}

    def node_of(self) -> dict[str, int]:
        return {op: self.assignment[i] for i, pe in enumerate(self.fusion) for op in pe}

    def fusion_groups(self) -> list[list[str]]:
        return [list(pe) for pe in self.fusion]

    def with_objective(self, value: float) -> "PlacementPlan":
        return PlacementPlan(self.fusion, self.assignment, value)

    def canonical(self) -> tuple:
        """Order-independent identity of the plan (ignores the objective)."""
        return tuple(sorted((tuple(sorted(pe)), n) for pe, n in zip(self.fusion, self.assignment)))


def _components(members: Iterable[str], adj: Mapping[str, set[str]]) -> int:
    members = set(members)
    seen: set[str] = set()
    count = 0
    for m in members:
        if m in seen:
            continue
        count += 1
        stack = [m]
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            stack.extend(y for y in adj[x] if y in members and y not in seen)
    return count


def _quotient_acyclic(groups: Sequence[Sequence[str]], topo: OpGraph) -> bool:
    pe = {op: i for i, g in enumerate(groups) for op in g}
    succ: dict[int, set[int]] = {i: set() for i in range(len(groups))}
    indeg = [0] * len(groups)
    for u, v in topo.edges:
        a, b = pe[u], pe[v]
        if a != b and b not in succ[a]:
            succ[a].add(b)
            indeg[b] += 1
    ready = [i for i, d in enumerate(indeg) if d == 0]
    done = 0
    while ready:
        i = ready.pop()
        done += 1
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    return done == len(groups)


def _undirected(topo: OpGraph) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {o: set() for o in topo.ops}
    for u, v in topo.edges:
        adj[u].add(v)
        adj[v].add(u)
    return adj


def plan_issues(graph: Any, plan: PlacementPlan, n_nodes: int | None = None) -> list[str]:
    """Every invariant the plan breaks (empty when valid)."""
    topo = topology(graph)
    issues = []
    counts: dict[str, int] = {}
    for pe in plan.fusion:
        if not pe:
            issues.append("empty processing element")
        for op in pe:
            counts[op] = counts.get(op, 0) + 1
    for op in topo.ops:
        if counts.get(op, 0) != 1:
            issues.append(f"operator {op!r} appears in {counts.get(op, 0)} processing elements")
    extra = sorted(set(counts) - set(topo.ops))
    if extra:
        issues.append(f"unknown operators {extra}")
    if len(plan.assignment) != len(plan.fusion):
        issues.append(f"{len(plan.fusion)} processing elements but {len(plan.assignment)} assignments")
    if n_nodes is not None:
        bad = [n for n in plan.assignment if not 0 <= n < n_nodes]
        if bad:
            issues.append(f"assignment to nonexistent nodes {sorted(set(bad))}")
    if issues:
        return issues
    adj = _undirected(topo)
    for i, pe in enumerate(plan.fusion):
        if _components(pe, adj) != 1:
            issues.append(f"processing element {i} {list(pe)} is not connected")
    if not _quotient_acyclic(plan.fusion, topo):
        issues.append("processing elements form a cycle")
    return issues


def validate_plan(graph: Any, plan: PlacementPlan, n_nodes: int | None = None) -> None:
    issues = plan_issues(graph, plan, n_nodes)
    if issues:
        raise PlanError("; ".join(issues))


# ---------------------------------------------------------------- cost model

def _capacities(node_capacities: float | Sequence[float], n_nodes: int | None = None) -> list[float]:
    if isinstance(node_capacities, (int, float)):
        caps = [float(node_capacities)] * (n_nodes or 1)
    else:
        caps = [float(c) for c in node_capacities]
    if not caps or any(c <= 0 for c in caps):
        raise ValueError("node capacities must be positive")
    return caps


def cost_of_mapping(topo: OpGraph, stats: ProfileStats, node_of: Mapping[str, int], caps: Sequence[float],
                    alpha: float = ALPHA, beta: float = BETA) -> tuple[float, float, float]:
    """``(cost, traffic_term, utilisation_term)`` for an operator -> node map."""
    traffic = sum(stats.edge_rate(u, v) for u, v in topo.edges if node_of[u] != node_of[v])
    load = [0.0] * len(caps)
    for op in topo.ops:
        load[node_of[op]] += stats.demand(op)
    util = max(l / c for l, c in zip(load, caps))
    return alpha * traffic + beta * util, alpha * traffic, beta * util


def estimate_cost(graph: Any, stats: ProfileStats, plan: PlacementPlan,
                  node_capacities: float | Sequence[float] = DEFAULT_CAPACITY, *,
                  alpha: float = ALPHA, beta: float = BETA) -> float:
    caps = _capacities(node_capacities, max(plan.assignment, default=0) + 1)
    validate_plan(graph, plan, len(caps))
    return cost_of_mapping(topology(graph), stats, plan.node_of(), caps, alpha, beta)[0]


def first_fit_decreasing(demands: Sequence[float], caps: Sequence[float]) -> list[int] | None:
    """Node index per item, or None if some item fits nowhere."""
    order = sorted(range(len(demands)), key=lambda i: (-demands[i], i))
    load = [0.0] * len(caps)
    out = [-1] * len(demands)
    for i in order:
        for n, c in enumerate(caps):
            if load[n] + demands[i] <= c * (1 + 1e-12):
                load[n] += demands[i]
                out[i] = n
                break
        else:
            return None
    return out


def singleton_plan(graph: Any, stats: ProfileStats, node_capacities: float | Sequence[float] = DEFAULT_CAPACITY,
                   *, alpha: float = ALPHA, beta: float = BETA, n_nodes: int | None = None) -> PlacementPlan:
    """One PE per operator, placed first-fit-decreasing."""
    topo = topology(graph)
    caps = _capacities(node_capacities, n_nodes)
    _check_total(topo, stats, caps)
    groups = [(op,) for op in topo.ops]
    assign = first_fit_decreasing([stats.demand(op) for op in topo.ops], caps)
    if assign is None:
        raise InfeasibleError(sum(stats.demand(o) for o in topo.ops), sum(caps),
                              "operators cannot be packed onto the nodes")
    plan = PlacementPlan(groups, assign)
    return plan.with_objective(cost_of_mapping(topo, stats, plan.node_of(), caps, alpha, beta)[0])


def _check_total(topo: OpGraph, stats: ProfileStats, caps: Sequence[float]) -> None:
    total = sum(stats.demand(o) for o in topo.ops)
    if total > sum(caps) * (1 + 1e-12):
        raise InfeasibleError(total, sum(caps))


def greedy_fuse(graph: Any, stats: ProfileStats | None = None,
                node_capacities: float | Sequence[float] = DEFAULT_CAPACITY, *,
                alpha: float = ALPHA, beta: float = BETA, n_nodes: int | None = None) -> PlacementPlan:
    topo = topology(graph)
    stats = stats or ProfileStats.cold_start(topo)
    caps = _capacities(node_capacities, n_nodes)
    current = singleton_plan(topo, stats, caps, alpha=alpha, beta=beta)
    groups = [list(pe) for pe in current.fusion]
    cost = current.objective
    cap_max = max(caps)
    while True:
        pe = {op: i for i, g in enumerate(groups) for op in g}
        between: dict[tuple[int, int], float] = {}
        for u, v in topo.edges:
            a, b = sorted((pe[u], pe[v]))
            if a != b:
                between[(a, b)] = between.get((a, b), 0.0) + stats.edge_rate(u, v)
        demand = [sum(stats.demand(o) for o in g) for g in groups]
        best = None
        for (a, b), bytes_ab in between.items():
            if demand[a] + demand[b] > cap_max * (1 + 1e-12):
                continue
            merged = [g for i, g in enumerate(groups) if i not in (a, b)]
            merged.insert(min(a, b), groups[a] + groups[b])
            if not _quotient_acyclic(merged, topo):
                continue
            assign = first_fit_decreasing([sum(stats.demand(o) for o in g) for g in merged], caps)
            if assign is None:
                continue
            node_of = {op: assign[i] for i, g in enumerate(merged) for op in g}
            new_cost = cost_of_mapping(topo, stats, node_of, caps, alpha, beta)[0]
            gain = cost - new_cost
            if gain < -1e-9 * max(1.0, abs(cost)):
                continue
            key = (round(gain, 9), bytes_ab)
            names = tuple(sorted((min(groups[a]), min(groups[b]))))
            if best is None or key > best[0] or (key == best[0] and names < best[1]):
                best = (key, names, merged, assign, new_cost)
        if best is None:
            break
        _, _, groups, assign, cost = best
        current = PlacementPlan(groups, assign, cost)
    return current


def exhaustive_optimum(graph: Any, stats: ProfileStats, node_capacities: float | Sequence[float], *,
                       alpha: float = ALPHA, beta: float = BETA, n_nodes: int | None = None,
                       max_ops: int = 10) -> tuple[float, dict[str, int]]:
    """Minimum cost over every capacity-respecting operator -> node map.

    The cost depends only on which node each operator lands on, so this
    bounds every partition/assignment pair from below.
    """
    topo = topology(graph)
    caps = _capacities(node_capacities, n_nodes)
    if len(topo.ops) > max_ops:
        raise ValueError(f"exhaustive search limited to {max_ops} operators")
    _check_total(topo, stats, caps)
    demand = [stats.demand(o) for o in topo.ops]
    best: tuple[float, dict[str, int]] | None = None
    for combo in itertools.product(range(len(caps)), repeat=len(topo.ops)):
        load = [0.0] * len(caps)
        for d, n in zip(demand, combo):
            load[n] += d
        if any(l > c * (1 + 1e-12) for l, c in zip(load, caps)):
            continue
        node_of = dict(zip(topo.ops, combo))
        c = cost_of_mapping(topo, stats, node_of, caps, alpha, beta)[0]
        if best is None or c < best[0]:
            best = (c, node_of)
    if best is None:
        raise InfeasibleError(sum(demand), sum(caps), "no assignment fits the node capacities")
    return best


def plan_from_mapping(graph: Any, node_of: Mapping[str, int]) -> PlacementPlan:
    """PEs = connected groups of operators sharing a node."""
    topo = topology(graph)
    adj = _undirected(topo)
    seen: set[str] = set()
    groups, assign = [], []
    for op in topo.ops:
        if op in seen:
            continue
        group, stack = [], [op]
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            group.append(x)
            stack.extend(y for y in adj[x] if node_of[y] == node_of[op] and y not in seen)
        order = {o: i for i, o in enumerate(topo.ops)}
        groups.append(sorted(group, key=order.__getitem__))
        assign.append(node_of[op])
    return PlacementPlan(groups, assign)


# ---------------------------------------------------------------- replanning

class Replanner:
    """Emit a new plan only when it beats the running one by more than ``threshold``.

    The improvement is measured under the latest statistics, as a fraction
    of the running plan's cost.  Because costs are non-negative, a threshold
    of 1.0 (100 %) never triggers.
    """

    def __init__(self, graph: Any, node_capacities: float | Sequence[float] = DEFAULT_CAPACITY,
                 threshold: float = DEFAULT_THRESHOLD, current: PlacementPlan | None = None, *,
                 alpha: float = ALPHA, beta: float = BETA, n_nodes: int | None = None):
        if threshold < 0:
            raise ValueError("threshold must be >= 0")
        self.topo = topology(graph)
        self.caps = _capacities(node_capacities, n_nodes)
        self.threshold = threshold
        self.alpha, self.beta = alpha, beta
        self.current = current or greedy_fuse(self.topo, None, self.caps, alpha=alpha, beta=beta)
        self.history: list[PlacementPlan] = []

    def observe(self, stats: ProfileStats) -> PlacementPlan | None:
        candidate = greedy_fuse(self.topo, stats, self.caps, alpha=self.alpha, beta=self.beta)
        running = cost_of_mapping(self.topo, stats, self.current.node_of(), self.caps, self.alpha, self.beta)[0]
        if running <= 0 or candidate.canonical() == self.current.canonical():
            return None
        if (running - candidate.objective) / running > self.threshold:
            self.current = candidate
            self.history.append(candidate)
            return candidate
        return None


def profile_and_replan(job: Any, interval: float, *, node_capacities: float | Sequence[float] = DEFAULT_CAPACITY,
                       threshold: float = DEFAULT_THRESHOLD, current: PlacementPlan | None = None,
                       max_samples: int | None = None, n_nodes: int | None = None) -> Iterator[PlacementPlan]:
    """Sample a running job every ``interval`` seconds and yield improved plans.

    Applying a plan means restarting the job at a chunk boundary with the
    new fusion; this generator only proposes.
    """
    planner = Replanner(job.graph, node_capacities, threshold, current, n_nodes=n_nodes)
    previous = None
    samples = 0
    while max_samples is None or samples < max_samples:
        time.sleep(interval)
        samples += 1
        try:
            snap = job.stats()
            stats = ProfileStats.from_job_stats(job.graph, snap, previous, job.operator_queue_depths())
        except Exception as exc:  # sampling must never take the job down
            log.warning("profile sample %d skipped: %s", samples, exc)
            continue
        previous = snap
        plan = planner.observe(stats)
        if plan is not None:
            yield plan
        if not job.running:
            break


# ---------------------------------------------------------------- reporting

def format_plan(graph: Any, plan: PlacementPlan, stats: ProfileStats | None = None,
                node_capacities: float | Sequence[float] = DEFAULT_CAPACITY, *,
                alpha: float = ALPHA, beta: float = BETA) -> str:
    topo = topology(graph)
    stats = stats or ProfileStats.cold_start(topo)
    caps = _capacities(node_capacities, max(plan.assignment, default=0) + 1)
    cost, traffic, util = cost_of_mapping(topo, stats, plan.node_of(), caps, alpha, beta)
    rows = [("PE", "node", "demand_us/s", "operators")]
    for i, (pe, node) in enumerate(zip(plan.fusion, plan.assignment)):
        demand = sum(stats.demand(o) for o in pe)
        rows.append((str(i), str(node), f"{demand:.3f}", ", ".join(pe)))
    widths = [max(len(r[c]) for r in rows) for c in range(3)]
    lines = ["  ".join(r[c].ljust(widths[c]) for c in range(3)) + "  " + r[3] for r in rows]
    lines.insert(1, "-" * (sum(widths) + 6 + max(len(r[3]) for r in rows)))
    lines.append(f"cost={cost:.6g} traffic_term={traffic:.6g} utilisation_term={util:.6g} "
                 f"alpha={alpha:g} beta={beta:g} nodes={len(caps)}")
    return "\n".join(lines) + "\n"
