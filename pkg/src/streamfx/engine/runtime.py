"""Deterministic and concurrent execution of a :class:`DataflowGraph`.

Deterministic mode is the reference: one thread, topological sweeps, FIFO
buffers on every edge, sources advanced one tuple per sweep.  Concurrent mode
runs each processing element (a fused group of operators) on its own thread;
operators inside a PE call each other directly and edges between PEs are
bounded FIFOs with blocking back-pressure.
"""

from __future__ import annotations

import enum
import threading
import time
import traceback
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from .graph import DataflowGraph, Edge
from .operators import Operator, RunContext, Source
from .schema import SchemaError, Tuple
from .stats import EdgeStats, JobStats

DEFAULT_QUEUE_CAPACITY = 16


class JobState(str, enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    STOPPED = "stopped"
    FAILED = "failed"


class JobFailedError(RuntimeError):
    def __init__(self, node: str | None, cause: BaseException):
        self.node = node
        self.cause = cause
        super().__init__(f"operator {node!r} failed: {cause!r}")


class _Cancelled(Exception):
    pass


@dataclass(frozen=True)
class _EOS:
    drained: bool = False


@dataclass
class JobResult:
    outputs: dict[str, list[Tuple]]
    stats: JobStats
    state: JobState
    error: BaseException | None = None
    diagnostic: str | None = None

    @property
    def ok(self) -> bool:
        return self.state in (JobState.COMPLETED, JobState.STOPPED)


class Controller:
    """Handed to a ``control`` hook at every chunk boundary (between source tuples)."""

    def __init__(self, operators: Mapping[str, Operator]):
        self.operators = operators
        self._stop = threading.Event()
        self.drain = True

    def stop(self, drain: bool = True) -> None:
        self.drain = drain
        self._stop.set()

    @property
    def stopping(self) -> bool:
        return self._stop.is_set()


def _edge_key(e: Edge) -> str:
    return f"{e.stream}->{e.consumer[0]}:{e.consumer[1]}"


def _check_schema(e: Edge, item: Tuple) -> None:
    if not item.punct and item.schema != e.schema:
        raise SchemaError(f"edge {_edge_key(e)}: emitted {item.schema!r}, edge carries {e.schema!r}")


def _collect(graph: DataflowGraph, ops: Mapping[str, Operator], edge_stats, state: str,
             mode: str, elapsed: float) -> JobStats:
    for op in ops.values():
        if isinstance(op, Source):
            op.collect_counters()
    return JobStats(
        name=graph.name, mode=mode, state=state, elapsed_s=elapsed,
        kinds={nid: graph.nodes[nid].kind for nid in graph.order},
        operators={nid: ops[nid].stats.snapshot() for nid in graph.order},
        edges={_edge_key(e): edge_stats[i] for i, e in enumerate(graph.edges)},
    )


def _sink_outputs(graph: DataflowGraph, ops: Mapping[str, Operator]) -> dict[str, list[Tuple]]:
    return {nid: list(ops[nid].received) for nid in graph.sinks}


def run_deterministic(graph: DataflowGraph, inputs: Mapping[str, Iterable[Tuple]] | None = None, *,
                      debug: bool = False, control: Callable[[Controller], None] | None = None) -> JobResult:
    """Single-threaded reference execution; sink outputs are a pure function of inputs."""
    inputs = dict(inputs or {})
    unknown = set(inputs) - set(graph.sources)
    if unknown:
        raise ValueError(f"inputs given for non-source nodes {sorted(unknown)}")
    ops = graph.instantiate_all()
    controller = Controller(ops)
    ctx = RunContext("deterministic", debug, stop_requested=lambda: controller.stopping)
    for op in ops.values():
        op.bind(ctx)

    edge_index = {id(e): i for i, e in enumerate(graph.edges)}
    edge_stats = [EdgeStats() for _ in graph.edges]
    buffers: dict[tuple[str, int], deque] = {e.consumer: deque() for e in graph.edges}
    routes: dict[str, list[list[Edge]]] = {}
    for nid in graph.order:
        ports = [[] for _ in graph.nodes[nid].outputs]
        for e in graph.out_edges(nid):
            ports[e.producer[1]].append(e)
        routes[nid] = ports

    def emitter(nid: str):
        stats = ops[nid].stats
        ports = routes[nid]

        def emit(port: int, item: Any) -> None:
            if isinstance(item, _EOS):
                for e in ports[port]:
                    buffers[e.consumer].append(item)
                return
            if item.punct:
                stats.punct_out += 1
            else:
                stats.tuples_out += 1
            size = item.nbytes
            for e in ports[port]:
                if debug:
                    _check_schema(e, item)
                buffers[e.consumer].append(item)
                es = edge_stats[edge_index[id(e)]]
                es.tuples += 1
                es.bytes += size
                depth = len(buffers[e.consumer])
                if depth > es.max_depth:
                    es.max_depth = depth
        return emit

    emits = {nid: emitter(nid) for nid in graph.order}
    closed: dict[str, set[int]] = {nid: set() for nid in graph.order}
    drained_flag: dict[str, bool] = {nid: False for nid in graph.order}

    def end_of_stream(nid: str, drained: bool) -> None:
        op, emit = ops[nid], emits[nid]
        op.finish(emit, drained)
        for port in range(len(graph.nodes[nid].outputs)):
            emit(port, _EOS(drained))

    start = time.perf_counter()
    current = None
    try:
        active = []
        for sid in graph.sources:
            active.append((sid, ops[sid].iterate(inputs.get(sid))))
        consumers = [nid for nid in graph.order if graph.nodes[nid].kind != "Source"]
        while True:
            if control is not None:
                control(controller)
            still = []
            for sid, it in active:
                current = sid
                op = ops[sid]
                if controller.stopping:
                    end_of_stream(sid, controller.drain)
                    continue
                t0 = time.perf_counter_ns()
                try:
                    item = next(it)
                except StopIteration:
                    op.stats.busy_ns += time.perf_counter_ns() - t0
                    end_of_stream(sid, False)
                    continue
                op.stats.busy_ns += time.perf_counter_ns() - t0
                emits[sid](0, item)
                still.append((sid, it))
            active = still
            for nid in consumers:
                current = nid
                op, emit = ops[nid], emits[nid]
                n_in = len(graph.nodes[nid].inputs)
                for port in range(n_in):
                    buf = buffers[(nid, port)]
                    while buf:
                        item = buf.popleft()
                        if isinstance(item, _EOS):
                            op.close_port(port, emit)
                            closed[nid].add(port)
                            drained_flag[nid] |= item.drained
                            if len(closed[nid]) == n_in:
                                end_of_stream(nid, drained_flag[nid])
                            continue
                        t0 = time.perf_counter_ns()
                        op.receive(port, item, emit)
                        op.stats.busy_ns += time.perf_counter_ns() - t0
            if not active:
                break
    except Exception as exc:
        raise JobFailedError(current, exc) from exc
    elapsed = time.perf_counter() - start
    state = JobState.STOPPED if controller.stopping else JobState.COMPLETED
    stats = _collect(graph, ops, edge_stats, state.value, "deterministic", elapsed)
    return JobResult(_sink_outputs(graph, ops), stats, state)


# ---------------------------------------------------------------- concurrent mode

class _Inbox:
    """Bounded per-edge FIFOs feeding one processing element."""

    def __init__(self, capacity: int, cancel: threading.Event):
        self.capacity = capacity
        self._cancel = cancel
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self._not_full = threading.Condition(self._lock)
        self._queues: list[deque] = []
        self._targets: list[tuple[str, int]] = []
        self._count = 0
        self._next = 0

    def add_edge(self, target: tuple[str, int]) -> int:
        self._queues.append(deque())
        self._targets.append(target)
        return len(self._queues) - 1

    @property
    def n_edges(self) -> int:
        return len(self._queues)

    def put(self, idx: int, item: Any) -> int:
        q = self._queues[idx]
        with self._not_full:
            while len(q) >= self.capacity:
                if self._cancel.is_set():
                    raise _Cancelled
                self._not_full.wait(0.05)
            q.append(item)
            self._count += 1
            self._not_empty.notify()
            return len(q)

    def get(self, block: bool = True):
        with self._not_empty:
            while self._count == 0:
                if self._cancel.is_set():
                    raise _Cancelled
                if not block:
                    return None
                self._not_empty.wait(0.05)
            n = len(self._queues)
            for step in range(n):
                i = (self._next + step) % n
                if self._queues[i]:
                    self._next = (i + 1) % n
                    item = self._queues[i].popleft()
                    self._count -= 1
                    self._not_full.notify_all()
                    return self._targets[i], item
        raise AssertionError("inbox count out of sync")

    def depth(self) -> int:
        return self._count


def _normalise_fusion(graph: DataflowGraph, plan: Any) -> list[list[str]]:
    if plan is None:
        return [[nid] for nid in graph.order]
    fusion = getattr(plan, "fusion", plan)
    pes = [list(pe) for pe in fusion]
    flat = [n for pe in pes for n in pe]
    if sorted(flat) != sorted(graph.order) or len(flat) != len(set(flat)):
        raise ValueError("placement plan must cover every operator exactly once")
    return pes


def _pe_order(graph: DataflowGraph, pes: list[list[str]]) -> list[int]:
    owner = {n: i for i, pe in enumerate(pes) for n in pe}
    succ: dict[int, set[int]] = {i: set() for i in range(len(pes))}
    indeg = {i: 0 for i in range(len(pes))}
    for e in graph.edges:
        a, b = owner[e.producer[0]], owner[e.consumer[0]]
        if a != b and b not in succ[a]:
            succ[a].add(b)
            indeg[b] += 1
    ready = [i for i in range(len(pes)) if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in sorted(succ[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    if len(order) != len(pes):
        raise ValueError("fusion creates a cycle between processing elements")
    return order


class Job:
    """Handle on a concurrently running job."""

    def __init__(self, graph: DataflowGraph, fusion: list[list[str]], capacity: int,
                 inputs: Mapping[str, Iterable[Tuple]], debug: bool,
                 control: Callable[[Controller], None] | None):
        self.graph = graph
        self.fusion = fusion
        self.capacity = capacity
        self.state = JobState.PENDING
        self.error: BaseException | None = None
        self.diagnostic: str | None = None
        self._inputs = dict(inputs)
        self._debug = debug
        self._control = control
        self._cancel = threading.Event()
        self._lock = threading.Lock()
        self.ops = graph.instantiate_all()
        self.controller = Controller(self.ops)
        ctx = RunContext("concurrent", debug,
                         stop_requested=lambda: self.controller.stopping or self._cancel.is_set())
        for op in self.ops.values():
            op.bind(ctx)
        self._owner = {n: i for i, pe in enumerate(fusion) for n in pe}
        self._inboxes = [_Inbox(capacity, self._cancel) for _ in fusion]
        self._edge_stats = [EdgeStats() for _ in graph.edges]
        self._edge_slot: dict[int, int] = {}
        for i, e in enumerate(graph.edges):
            a, b = self._owner[e.producer[0]], self._owner[e.consumer[0]]
            if a != b:
                self._edge_slot[i] = self._inboxes[b].add_edge(e.consumer)
        self._threads = [
            threading.Thread(target=self._run_pe, args=(i,), name=f"pe-{i}", daemon=True)
            for i in range(len(fusion))
        ]
        self._started = 0.0
        self._elapsed: float | None = None
        self._done = threading.Event()
        self._remaining = len(fusion)

    # -- lifecycle
    def start(self) -> "Job":
        self.state = JobState.RUNNING
        self._started = time.perf_counter()
        if not self._threads:
            self._finish_thread()
        for t in self._threads:
            t.start()
        return self

    def stop(self, drain: bool = True) -> None:
        """Ask the sources to end; with ``drain`` partial aggregates flush."""
        self.controller.stop(drain)

    def cancel(self) -> None:
        with self._lock:
            if self.state is JobState.RUNNING:
                self.state = JobState.STOPPED
        self._cancel.set()

    def wait(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)

    def result(self, timeout: float | None = None) -> JobResult:
        if not self.wait(timeout):
            raise TimeoutError(f"job {self.graph.name!r} still running after {timeout}s")
        return JobResult(_sink_outputs(self.graph, self.ops), self.stats(), self.state,
                         self.error, self.diagnostic)

    def stats(self) -> JobStats:
        elapsed = self._elapsed if self._elapsed is not None else time.perf_counter() - self._started
        return _collect(self.graph, self.ops, self._edge_stats, self.state.value, "concurrent", elapsed)

    def queue_depths(self) -> list[int]:
        return [ib.depth() for ib in self._inboxes]

    def operator_queue_depths(self) -> dict[str, int]:
        """Inbox depth of each operator's PE, keyed by operator id."""
        depths = self.queue_depths()
        return {n: depths[i] for n, i in self._owner.items()}

    @property
    def running(self) -> bool:
        return not self._done.is_set()

    def _fail(self, node: str | None, exc: BaseException) -> None:
        with self._lock:
            if self.state is JobState.FAILED:
                return
            self.state = JobState.FAILED
            self.error = exc
            tb = "".join(traceback.format_exception_only(type(exc), exc)).strip()
            self.diagnostic = f"operator {node!r} in PE {self._owner.get(node, '?')}: {tb}"
        self._cancel.set()

    def _finish_thread(self) -> None:
        with self._lock:
            self._remaining -= 1
            last = self._remaining <= 0
            if last:
                self._elapsed = time.perf_counter() - self._started
                if self.state is JobState.RUNNING:
                    self.state = JobState.STOPPED if self.controller.stopping else JobState.COMPLETED
        if last:
            self._done.set()

    # -- PE body
    def _run_pe(self, pe_index: int) -> None:
        graph, ops = self.graph, self.ops
        members = set(self.fusion[pe_index])
        inbox = self._inboxes[pe_index]
        debug = self._debug
        current: list[str | None] = [None]
        child_ns = [0]
        closed = {nid: set() for nid in members}
        drained = {nid: False for nid in members}
        edge_index = {id(e): i for i, e in enumerate(graph.edges)}

        routes: dict[str, list[list[tuple[Edge, int]]]] = {}
        for nid in members:
            ports = [[] for _ in graph.nodes[nid].outputs]
            for e in graph.out_edges(nid):
                ports[e.producer[1]].append((e, edge_index[id(e)]))
            routes[nid] = ports

        def deliver(target: tuple[str, int], item: Any) -> None:
            nid, port = target
            op = ops[nid]
            if isinstance(item, _EOS):
                op.close_port(port, emits[nid])
                closed[nid].add(port)
                drained[nid] |= item.drained
                if len(closed[nid]) == len(graph.nodes[nid].inputs):
                    end_of_stream(nid, drained[nid])
                return
            saved, prev_node = child_ns[0], current[0]
            child_ns[0] = 0
            current[0] = nid
            t0 = time.perf_counter_ns()
            op.receive(port, item, emits[nid])
            spent = time.perf_counter_ns() - t0
            op.stats.busy_ns += spent - child_ns[0]
            child_ns[0] = saved + spent
            current[0] = prev_node

        def emitter(nid: str):
            stats = ops[nid].stats
            ports = routes[nid]

            def emit(port: int, item: Any) -> None:
                eos = isinstance(item, _EOS)
                if not eos:
                    if item.punct:
                        stats.punct_out += 1
                    else:
                        stats.tuples_out += 1
                size = 0 if eos else item.nbytes
                for e, i in ports[port]:
                    if not eos:
                        if debug:
                            _check_schema(e, item)
                        es = self._edge_stats[i]
                        es.tuples += 1
                        es.bytes += size
                    slot = self._edge_slot.get(i)
                    if slot is None:
                        deliver(e.consumer, item)
                    else:
                        depth = self._inboxes[self._owner[e.consumer[0]]].put(slot, item)
                        es = self._edge_stats[i]
                        if depth > es.max_depth:
                            es.max_depth = depth
            return emit

        emits = {nid: emitter(nid) for nid in members}

        def end_of_stream(nid: str, was_drained: bool) -> None:
            ops[nid].finish(emits[nid], was_drained)
            for port in range(len(graph.nodes[nid].outputs)):
                emits[nid](port, _EOS(was_drained))

        def drain_inbox(block: bool) -> bool:
            got = inbox.get(block)
            if got is None:
                return False
            deliver(*got)
            return True

        try:
            sources = [n for n in graph.order if n in members and graph.nodes[n].kind == "Source"]
            iters = [(s, ops[s].iterate(self._inputs.get(s))) for s in sources]
            while iters:
                if self._control is not None:
                    self._control(self.controller)
                still = []
                for sid, it in iters:
                    current[0] = sid
                    if self.controller.stopping:
                        end_of_stream(sid, self.controller.drain)
                        continue
                    if self._cancel.is_set():
                        raise _Cancelled
                    t0 = time.perf_counter_ns()
                    try:
                        item = next(it)
                    except StopIteration:
                        ops[sid].stats.busy_ns += time.perf_counter_ns() - t0
                        end_of_stream(sid, False)
                        continue
                    ops[sid].stats.busy_ns += time.perf_counter_ns() - t0
                    child_ns[0] = 0
                    emits[sid](0, item)
                    still.append((sid, it))
                iters = still
                while inbox.n_edges and drain_inbox(False):
                    pass
            expected = inbox.n_edges
            while any(len(closed[n]) < len(graph.nodes[n].inputs) for n in members):
                if expected == 0:
                    break
                drain_inbox(True)
        except _Cancelled:
            pass
        except BaseException as exc:  # noqa: BLE001 - any PE failure fails the job
            self._fail(current[0], exc)
        finally:
            self._finish_thread()


def run_concurrent(graph: DataflowGraph, placement: Any = None,
                   queue_capacity: int = DEFAULT_QUEUE_CAPACITY, *,
                   inputs: Mapping[str, Iterable[Tuple]] | None = None, debug: bool = False,
                   control: Callable[[Controller], None] | None = None) -> Job:
    """Start the graph with one thread per processing element and return its :class:`Job`.

    ``placement`` is a plan exposing ``fusion`` (groups of operator ids) or
    ``None`` for one PE per operator.
    """
    if queue_capacity < 1:
        raise ValueError("queue capacity must be at least 1")
    inputs = dict(inputs or {})
    unknown = set(inputs) - set(graph.sources)
    if unknown:
        raise ValueError(f"inputs given for non-source nodes {sorted(unknown)}")
    fusion = _normalise_fusion(graph, placement)
    order = _pe_order(graph, fusion)
    fusion = [sorted(fusion[i], key=graph.order.index) for i in order]
    return Job(graph, fusion, queue_capacity, inputs, debug, control).start()
