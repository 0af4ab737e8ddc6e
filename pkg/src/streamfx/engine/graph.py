"""Declarative pipeline descriptions and validated dataflow graphs.

A description is a mapping with three parts::

    {
        "schemas":   {"RawData": ["data:int16-list"], ...},
        "streams":   {"Antenna": "RawDataChunk", ...},
        "operators": [{"id": "Antenna", "kind": "Source", "outputs": ["Antenna"], ...}, ...],
    }

Streams are first-class: every operator output port names a stream, every
input port names the stream it consumes, and a stream may feed several
consumers.  Keys other than ``id``, ``kind``, ``inputs``, ``outputs`` and
``input-schema`` are passed to the operator as its configuration.
"""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .operators import OPERATOR_KINDS, ConfigError, Operator
from .schema import Schema, SchemaError

_STRUCTURAL_KEYS = {"id", "kind", "inputs", "outputs", "input-schema"}


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str
    node: str | None = None

    def __str__(self) -> str:
        where = f" [{self.node}]" if self.node else ""
        return f"{self.code}{where}: {self.message}"


class GraphValidationError(ValueError):
    """Raised by :func:`build_graph`; ``issues`` lists every problem found."""

    def __init__(self, issues: list[ValidationIssue]):
        self.issues = list(issues)
        super().__init__("invalid pipeline:\n  " + "\n  ".join(str(i) for i in self.issues))


@dataclass
class OperatorNode:
    id: str
    kind: str
    config: dict[str, Any] = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Edge:
    stream: str
    producer: tuple[str, int]
    consumer: tuple[str, int]
    schema: Schema


class DataflowGraph:
    """A validated job: operator nodes joined by schema-typed edges."""

    def __init__(self, nodes: list[OperatorNode], streams: dict[str, Schema], edges: list[Edge],
                 order: list[str], name: str = "job"):
        self.name = name
        self.nodes = {n.id: n for n in nodes}
        self.streams = streams
        self.edges = edges
        self.order = order
        self._out: dict[str, list[Edge]] = {n.id: [] for n in nodes}
        self._in: dict[str, list[Edge]] = {n.id: [] for n in nodes}
        for e in edges:
            self._out[e.producer[0]].append(e)
            self._in[e.consumer[0]].append(e)

    def __len__(self) -> int:
        return len(self.nodes)

    def out_edges(self, node_id: str) -> list[Edge]:
        return self._out[node_id]

    def in_edges(self, node_id: str) -> list[Edge]:
        return self._in[node_id]

    def successors(self, node_id: str) -> list[str]:
        return list(dict.fromkeys(e.consumer[0] for e in self._out[node_id]))

    def predecessors(self, node_id: str) -> list[str]:
        return list(dict.fromkeys(e.producer[0] for e in self._in[node_id]))

    @property
    def sources(self) -> list[str]:
        return [n for n in self.order if self.nodes[n].kind == "Source"]

    @property
    def sinks(self) -> list[str]:
        return [n for n in self.order if self.nodes[n].kind == "Sink"]

    def input_schemas(self, node_id: str) -> list[Schema]:
        return [self.streams[s] for s in self.nodes[node_id].inputs]

    def output_schemas(self, node_id: str) -> list[Schema]:
        return [self.streams[s] for s in self.nodes[node_id].outputs]

    def instantiate(self, node_id: str) -> Operator:
        node = self.nodes[node_id]
        cls = OPERATOR_KINDS[node.kind]
        return cls(node.id, self.input_schemas(node_id), self.output_schemas(node_id), node.config)

    def instantiate_all(self) -> dict[str, Operator]:
        return {nid: self.instantiate(nid) for nid in self.order}

    def __repr__(self) -> str:
        return f"DataflowGraph({self.name!r}, {len(self.nodes)} nodes, {len(self.edges)} edges)"


def _arity_issues(node: OperatorNode) -> list[str]:
    n_in, n_out = len(node.inputs), len(node.outputs)
    k = node.kind
    if k == "Source":
        ok, want = n_in == 0 and n_out == 1, "0 inputs and 1 output"
    elif k == "Sink":
        ok, want = n_in == 1 and n_out == 0, "1 input and 0 outputs"
    elif k == "Barrier":
        ok, want = n_in >= 2 and n_out == 1, "at least 2 inputs and 1 output"
    elif k == "Join":
        ok, want = n_in == 2 and n_out == 1, "2 inputs and 1 output"
    elif k == "Split":
        ok, want = n_in == 1 and n_out >= 2, "1 input and at least 2 outputs"
    else:
        ok, want = n_in == 1 and n_out == 1, "1 input and 1 output"
    return [] if ok else [f"{k} needs {want}, has {n_in} inputs and {n_out} outputs"]


def _as_list(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return list(value)


def build_graph(spec: Mapping[str, Any]) -> DataflowGraph:
    """Validate a pipeline description and return its :class:`DataflowGraph`.

    Raises :class:`GraphValidationError` listing every schema mismatch,
    cycle, dangling port, unknown kind and operator configuration error.
    """
    issues: list[ValidationIssue] = []

    schemas: dict[str, Schema] = {}
    for name, decl in (spec.get("schemas") or {}).items():
        try:
            schemas[name] = decl if isinstance(decl, Schema) else Schema(name, decl)
        except SchemaError as exc:
            issues.append(ValidationIssue("schema", str(exc)))

    def resolve(ref: Any, where: str, node: str | None = None) -> Schema | None:
        if isinstance(ref, Schema):
            return ref
        if isinstance(ref, str) and ref in schemas:
            return schemas[ref]
        issues.append(ValidationIssue("unknown-schema", f"{where} references undeclared schema {ref!r}", node))
        return None

    streams: dict[str, Schema] = {}
    for sname, ref in (spec.get("streams") or {}).items():
        s = resolve(ref, f"stream {sname!r}")
        if s is not None:
            streams[sname] = s

    raw_ops = spec.get("operators", spec.get("operator")) or []
    nodes: list[OperatorNode] = []
    seen: set[str] = set()
    for i, raw in enumerate(raw_ops):
        nid = raw.get("id")
        if not nid:
            issues.append(ValidationIssue("missing-id", f"operator #{i} has no id"))
            continue
        if nid in seen:
            issues.append(ValidationIssue("duplicate-id", f"operator id {nid!r} declared twice", nid))
            continue
        seen.add(nid)
        kind = raw.get("kind")
        config = {k: v for k, v in raw.items() if k not in _STRUCTURAL_KEYS}
        node = OperatorNode(nid, kind, config, _as_list(raw.get("inputs")), _as_list(raw.get("outputs")))
        if kind not in OPERATOR_KINDS:
            issues.append(ValidationIssue(
                "unknown-kind", f"unknown operator kind {kind!r}; expected one of {sorted(OPERATOR_KINDS)}", nid))
            continue
        for msg in _arity_issues(node):
            issues.append(ValidationIssue("port-arity", msg, nid))
        node.config["_input_schema"] = raw.get("input-schema")
        nodes.append(node)

    producers: dict[str, tuple[str, int]] = {}
    for node in nodes:
        for port, s in enumerate(node.outputs):
            if s in producers:
                issues.append(ValidationIssue(
                    "duplicate-stream", f"stream {s!r} produced by both {producers[s][0]!r} and {node.id!r}", node.id))
                continue
            producers[s] = (node.id, port)
            if s not in streams:
                issues.append(ValidationIssue("unknown-stream", f"output stream {s!r} has no declared schema", node.id))

    edges: list[Edge] = []
    consumed: set[str] = set()
    for node in nodes:
        expected = node.config.pop("_input_schema", None)
        expected_list = _as_list(expected) if not isinstance(expected, Schema) else [expected]
        if expected_list and len(expected_list) not in (1, len(node.inputs)):
            issues.append(ValidationIssue("port-arity", "input-schema count does not match inputs", node.id))
        for port, s in enumerate(node.inputs):
            if s not in producers:
                issues.append(ValidationIssue("dangling-port", f"input {port} consumes unknown stream {s!r}", node.id))
                continue
            consumed.add(s)
            schema = streams.get(s)
            if schema is None:
                continue
            if expected_list:
                ref = expected_list[port] if len(expected_list) > 1 else expected_list[0]
                want = resolve(ref, f"input {port}", node.id)
                if want is not None and want != schema:
                    issues.append(ValidationIssue(
                        "schema-mismatch",
                        f"stream {s!r} carries {schema!r} but input {port} expects {want!r}", node.id))
            edges.append(Edge(s, producers[s], (node.id, port), schema))
    for s, (nid, port) in producers.items():
        if s not in consumed:
            issues.append(ValidationIssue("dangling-port", f"output stream {s!r} has no consumer", nid))

    order: list[str] = []
    if not issues:
        rank = {n.id: i for i, n in enumerate(nodes)}
        ts = graphlib.TopologicalSorter({n.id: set() for n in nodes})
        for e in edges:
            ts.add(e.consumer[0], e.producer[0])
        try:
            ts.prepare()
            while ts.is_active():
                ready = sorted(ts.get_ready(), key=rank.__getitem__)
                order.extend(ready)
                ts.done(*ready)
        except graphlib.CycleError as exc:
            cycle = " -> ".join(exc.args[1])
            issues.append(ValidationIssue("cycle", f"cycle detected: {cycle}"))

    if not issues:
        succ: dict[str, set[str]] = {n.id: set() for n in nodes}
        for e in edges:
            succ[e.producer[0]].add(e.consumer[0])
        reached: set[str] = set()
        frontier = [n.id for n in nodes if n.kind == "Source"]
        while frontier:
            nid = frontier.pop()
            if nid not in reached:
                reached.add(nid)
                frontier.extend(succ[nid])
        for n in nodes:
            if n.id not in reached:
                issues.append(ValidationIssue("unreachable", "not reachable from any Source", n.id))

    graph = None
    if not issues:
        name = (spec.get("application") or {}).get("name", "job")
        graph = DataflowGraph(nodes, streams, edges, order, name)
        for nid in order:
            try:
                graph.instantiate(nid)
            except (ConfigError, SchemaError) as exc:
                issues.append(ValidationIssue("config", str(exc), nid))
    if issues:
        raise GraphValidationError(issues)
    return graph


def load_description(path: str | Path) -> dict[str, Any]:
    """Read a TOML pipeline description."""
    from .._toml import load_toml
    return load_toml(path)


class Pipeline:
    """Small fluent helper for assembling descriptions in code."""

    def __init__(self, name: str = "job"):
        self.spec: dict[str, Any] = {"application": {"name": name}, "schemas": {}, "streams": {}, "operators": []}

    def schema(self, schema: Schema) -> "Pipeline":
        self.spec["schemas"][schema.name] = schema
        return self

    def stream(self, name: str, schema: Schema | str) -> "Pipeline":
        if isinstance(schema, Schema):
            self.spec["schemas"].setdefault(schema.name, schema)
        self.spec["streams"][name] = schema
        return self

    def op(self, kind: str, node_id: str, inputs: Iterable[str] | str = (),
           outputs: Iterable[str] | str = (), **config: Any) -> "Pipeline":
        entry = {"id": node_id, "kind": kind, "inputs": _as_list(inputs), "outputs": _as_list(outputs)}
        entry.update({k.replace("_", "-"): v for k, v in config.items()})
        self.spec["operators"].append(entry)
        return self

    def build(self) -> DataflowGraph:
        return build_graph(self.spec)
