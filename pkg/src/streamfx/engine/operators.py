"""Operator state machines.

Every operator is single-threaded: the runtime delivers items one at a time
through :meth:`Operator.receive` and hands it an ``emit(port, tuple)``
callback.  Punctuations travel in-band as :class:`Tuple` markers.

Transform failures inside a Functor or UserOp that raise ``ValueError`` or
``ArithmeticError`` drop the offending tuple and bump the ``errors`` counter;
any other exception escapes and fails the job.
"""

from __future__ import annotations

import inspect
import operator as _op
import re
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .schema import AttrType, Schema, SchemaError, Tuple
from .windows import PUNCTUATION, SLIDING, TUMBLING, WindowBuffer, WindowError, window_from

Emit = Callable[[int, Tuple], None]

DOMAIN_ERRORS = (ValueError, ArithmeticError)


class ConfigError(ValueError):
    """Operator configuration is invalid for the operator's schemas."""


@dataclass
class OperatorStats:
    tuples_in: int = 0
    tuples_out: int = 0
    punct_in: int = 0
    punct_out: int = 0
    errors: int = 0
    dropped: int = 0
    busy_ns: int = 0
    counters: dict[str, float] = field(default_factory=dict)

    def bump(self, name: str, amount: float = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + amount

    def snapshot(self) -> "OperatorStats":
        return OperatorStats(self.tuples_in, self.tuples_out, self.punct_in, self.punct_out,
                             self.errors, self.dropped, self.busy_ns, dict(self.counters))


@dataclass
class RunContext:
    mode: str = "deterministic"
    debug: bool = False
    stop_requested: Callable[[], bool] = lambda: False


class Operator:
    kind = ""

    def __init__(self, node_id: str, in_schemas: Sequence[Schema], out_schemas: Sequence[Schema],
                 config: Mapping[str, Any]):
        self.id = node_id
        self.in_schemas = list(in_schemas)
        self.out_schemas = list(out_schemas)
        self.config = dict(config)
        self.stats = OperatorStats()
        self.ctx = RunContext()
        self.configure()

    def configure(self) -> None:
        """Validate ``self.config``; raise :class:`ConfigError`."""

    def bind(self, ctx: RunContext) -> None:
        self.ctx = ctx

    def receive(self, port: int, item: Tuple, emit: Emit) -> None:
        if item.punct:
            self.stats.punct_in += 1
            self.on_punctuation(port, item, emit)
        else:
            self.stats.tuples_in += 1
            self.process(port, item, emit)

    def process(self, port: int, t: Tuple, emit: Emit) -> None:
        raise NotImplementedError

    def on_punctuation(self, port: int, p: Tuple, emit: Emit) -> None:
        for out in range(len(self.out_schemas)):
            emit(out, p)

    def close_port(self, port: int, emit: Emit) -> None:
        pass

    def finish(self, emit: Emit, drained: bool = False) -> None:
        pass

    def _require(self, key: str) -> Any:
        if key not in self.config:
            raise ConfigError(f"{self.kind} {self.id!r}: missing required parameter {key!r}")
        return self.config[key]

    def _check_keys(self, allowed: Iterable[str]) -> None:
        unknown = set(self.config) - set(allowed) - {"params"}
        if unknown:
            raise ConfigError(f"{self.kind} {self.id!r}: unknown parameters {sorted(unknown)}")


# ---------------------------------------------------------------- registries

TRANSFORMS: dict[str, Callable[..., Callable]] = {}
PREDICATES: dict[str, Callable[..., Callable]] = {}
USER_OPERATORS: dict[str, type] = {}


def register_transform(name: str):
    """Register ``factory(params, in_schema, out_schema) -> transform``."""
    def deco(factory):
        TRANSFORMS[name] = factory
        return factory
    return deco


def register_predicate(name: str):
    def deco(factory):
        PREDICATES[name] = factory
        return factory
    return deco


def register_user_operator(name: str):
    def deco(cls):
        USER_OPERATORS[name] = cls
        return cls
    return deco


def _load_builtins() -> None:
    from .. import pipeline_ops  # noqa: F401  registers the spectrometer kernels


@register_transform("identity")
def _identity(params, in_schema, out_schema):
    if in_schema != out_schema:
        raise ConfigError("identity transform needs matching input and output schemas")
    return lambda t: t


_COMPARISON = re.compile(r"^\s*([A-Za-z_]\w*)\s*(<=|>=|==|!=|<|>)\s*(\S+)\s*$")
_CMP_OPS = {"<": _op.lt, "<=": _op.le, ">": _op.gt, ">=": _op.ge, "==": _op.eq, "!=": _op.ne}


def parse_comparison(text: str, schema: Schema) -> Callable[[Tuple], bool]:
    """Predicate from ``"attr <op> literal"``; the only expression form accepted."""
    m = _COMPARISON.match(text)
    if not m:
        raise ConfigError(f"cannot parse predicate {text!r}; expected 'attr <op> literal'")
    name, sym, literal = m.groups()
    if name not in schema:
        raise ConfigError(f"predicate {text!r}: no attribute {name!r} in {schema!r}")
    attr = schema.attribute(name)
    if attr.type.is_list:
        raise ConfigError(f"predicate {text!r}: cannot compare list attribute {name!r}")
    try:
        if attr.type is AttrType.STRING:
            value: Any = literal.strip("'\"")
        elif attr.type is AttrType.BOOLEAN:
            value = literal.lower() == "true"
        elif attr.type is AttrType.INT32:
            value = int(literal)
        else:
            value = float(literal)
    except ValueError:
        raise ConfigError(f"predicate {text!r}: bad literal {literal!r}") from None
    idx = schema.index(name)
    fn = _CMP_OPS[sym]
    return lambda t: fn(t.values[idx], value)


@register_predicate("every")
def _every(params, schema):
    n = int(params.get("n", 1))
    offset = int(params.get("offset", 0))
    if n <= 0:
        raise ConfigError("'every' predicate needs n > 0")
    return lambda t, index: index % n == offset


def _resolve_callable(spec: Any, registry: Mapping[str, Callable], what: str, *args) -> Callable:
    if callable(spec):
        return spec
    if isinstance(spec, str):
        if spec not in registry:
            _load_builtins()
        if spec in registry:
            return registry[spec](*args)
        raise ConfigError(f"unknown {what} {spec!r}")
    raise ConfigError(f"{what} must be a callable or a registered name, got {type(spec).__name__}")


def _arity(fn: Callable) -> int:
    try:
        params = inspect.signature(fn).parameters.values()
    except (TypeError, ValueError):
        return 1
    positional = [p for p in params if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
    if any(p.kind == p.VAR_POSITIONAL for p in params):
        return 2
    return len(positional)


# ---------------------------------------------------------------- edge adapters

class Source(Operator):
    kind = "Source"

    def configure(self):
        if self.in_schemas:
            raise ConfigError(f"Source {self.id!r} takes no inputs")
        if len(self.out_schemas) != 1:
            raise ConfigError(f"Source {self.id!r} needs exactly one output")
        self._items = self.config.get("items")
        self._counters_src = None
        uri = self.config.get("source")
        if uri is not None and not isinstance(uri, str):
            raise ConfigError(f"Source {self.id!r}: 'source' must be a URI string")
        if uri is not None:
            from ..ingest import IngestError, chunk_source_from_config
            try:
                self._factory = chunk_source_from_config(self.config, self.out_schemas[0])
            except IngestError as exc:
                raise ConfigError(f"Source {self.id!r}: {exc}") from None
        else:
            self._factory = None

    def iterate(self, override: Iterable[Tuple] | None = None) -> Iterator[Tuple]:
        """Yield this source's tuples; ``override`` replaces configured data."""
        if override is not None:
            return iter(override)
        if self._factory is not None:
            src = self._factory()
            self._counters_src = src
            return iter(src)
        items = self._items
        if items is None:
            return iter(())
        if callable(items):
            items = items()
        return iter(items)

    def collect_counters(self) -> None:
        src = self._counters_src
        if src is not None and hasattr(src, "counters"):
            self.stats.counters.update(src.counters())


class Sink(Operator):
    kind = "Sink"

    def configure(self):
        if self.out_schemas:
            raise ConfigError(f"Sink {self.id!r} has no outputs")
        if len(self.in_schemas) != 1:
            raise ConfigError(f"Sink {self.id!r} needs exactly one input")
        self._callback = self.config.get("callback")
        if self._callback is not None and not callable(self._callback):
            raise ConfigError(f"Sink {self.id!r}: callback must be callable")
        self._collect = bool(self.config.get("collect", True))
        self._keep_punct = bool(self.config.get("collect-punctuation", False))
        self.received: list[Tuple] = []

    def process(self, port, t, emit):
        if self._collect:
            self.received.append(t)
        if self._callback is not None:
            self._callback(t)

    def on_punctuation(self, port, p, emit):
        if self._keep_punct:
            self.received.append(p)


# ---------------------------------------------------------------- relational operators

class Functor(Operator):
    kind = "Functor"

    def configure(self):
        self._check_keys({"transform", "filter", "history"})
        _single_io(self)
        in_s, out_s = self.in_schemas[0], self.out_schemas[0]
        params = self.config.get("params", {})
        transform = self.config.get("transform", "identity")
        self._transform = _resolve_callable(transform, TRANSFORMS, "transform", params, in_s, out_s)
        filt = self.config.get("filter")
        if filt is None:
            self._filter = None
        elif isinstance(filt, str) and filt not in PREDICATES:
            self._filter = parse_comparison(filt, in_s)
        else:
            self._filter = _resolve_callable(filt, PREDICATES, "predicate", params, in_s)
        h = self.config.get("history", 0)
        if not isinstance(h, int) or h < 0:
            raise ConfigError(f"Functor {self.id!r}: history must be a non-negative count")
        self._history: deque | None = deque(maxlen=h) if h else None
        self._passthrough = in_s == out_s

    def process(self, port, t, emit):
        try:
            if self._filter is not None and not self._filter(t):
                if self._history is not None:
                    self._history.append(t)
                return
            if self._history is None:
                out = self._transform(t)
            else:
                out = self._transform(t, tuple(self._history))
                self._history.append(t)
            if out is None:
                return
            if not isinstance(out, Tuple):
                out = self.out_schemas[0].make(out) if isinstance(out, Mapping) \
                    else Tuple(self.out_schemas[0], out)
        except SchemaError:
            raise
        except DOMAIN_ERRORS:
            self.stats.errors += 1
            return
        emit(0, out)


class Split(Operator):
    kind = "Split"

    def configure(self):
        self._check_keys({"route"})
        if len(self.in_schemas) != 1 or len(self.out_schemas) < 2:
            raise ConfigError(f"Split {self.id!r} needs one input and at least two outputs")
        route = self._require("route")
        in_s = self.in_schemas[0]
        if route not in in_s or in_s.attribute(route).type is not AttrType.INT32:
            raise ConfigError(f"Split {self.id!r}: route attribute {route!r} must be an int32 of {in_s!r}")
        for s in self.out_schemas:
            if s != in_s:
                raise ConfigError(f"Split {self.id!r}: output {s!r} differs from input {in_s!r}")
        self._route = in_s.index(route)
        self._n = len(self.out_schemas)

    def process(self, port, t, emit):
        k = t.values[self._route]
        if 0 <= k < self._n:
            emit(k, t)
        else:
            self.stats.dropped += 1


_REDUCERS = ("sum", "avg", "min", "max", "count", "list-collect")
_REDUCER_SPEC = re.compile(r"^\s*(sum|avg|min|max|count|list-collect)\s*\(\s*([A-Za-z_]\w*)?\s*\)\s*$", re.I)


@dataclass(frozen=True)
class _Reduction:
    out_index: int
    reducer: str
    in_index: int | None
    out_type: AttrType
    in_type: AttrType | None


def _reduce(red: _Reduction, tuples: list[Tuple]) -> Any:
    if red.reducer == "count":
        return len(tuples)
    vals = [t.values[red.in_index] for t in tuples]
    if red.reducer == "list-collect":
        return np.asarray(vals, dtype=red.out_type.dtype)
    if red.in_type.is_list:
        acc = np.array(vals[0], dtype=np.float64)
        if red.reducer in ("sum", "avg"):
            for v in vals[1:]:
                acc += v
            if red.reducer == "avg":
                acc /= len(vals)
        elif red.reducer == "min":
            for v in vals[1:]:
                np.minimum(acc, v, out=acc)
        else:
            for v in vals[1:]:
                np.maximum(acc, v, out=acc)
        return acc.astype(red.out_type.dtype)
    if red.reducer == "sum":
        total = 0
        for v in vals:
            total += v
        return total
    if red.reducer == "avg":
        return float(np.fsum(vals)) / len(vals) if red.in_type is not AttrType.INT32 \
            else sum(vals) / len(vals)
    return min(vals) if red.reducer == "min" else max(vals)


class Aggregate(Operator):
    kind = "Aggregate"

    def configure(self):
        self._check_keys({"window", "reducers", "flush-on-drain", "emit-partial"})
        _single_io(self)
        in_s, out_s = self.in_schemas[0], self.out_schemas[0]
        try:
            self.window_spec = window_from(self.config.get("window", {}), in_s)
        except WindowError as exc:
            raise ConfigError(f"Aggregate {self.id!r}: {exc}") from None
        reducers = self._require("reducers")
        if not isinstance(reducers, Mapping):
            raise ConfigError(f"Aggregate {self.id!r}: reducers must map output attribute to 'fn(attr)'")
        group = self.window_spec.group_by
        self._group_out = None
        if group is not None and group in out_s and group not in reducers:
            if out_s.attribute(group) != in_s.attribute(group):
                raise ConfigError(f"Aggregate {self.id!r}: group attribute {group!r} type differs on output")
            self._group_out = out_s.index(group)
        reds = []
        for out_name, spec in reducers.items():
            if out_name not in out_s:
                raise ConfigError(f"Aggregate {self.id!r}: output has no attribute {out_name!r}")
            if isinstance(spec, str):
                m = _REDUCER_SPEC.match(spec)
                if not m:
                    raise ConfigError(f"Aggregate {self.id!r}: cannot parse reducer {spec!r}")
                fn, src = m.group(1).lower(), m.group(2)
            else:
                fn, src = spec
            out_attr = out_s.attribute(out_name)
            if fn == "count":
                if out_attr.type is not AttrType.INT32:
                    raise ConfigError(f"Aggregate {self.id!r}: count output {out_name!r} must be int32")
                reds.append(_Reduction(out_s.index(out_name), fn, None, out_attr.type, None))
                continue
            if src is None:
                raise ConfigError(f"Aggregate {self.id!r}: reducer {fn} needs an input attribute")
            if src not in in_s:
                raise ConfigError(f"Aggregate {self.id!r}: input has no attribute {src!r}")
            in_attr = in_s.attribute(src)
            if not in_attr.type.is_numeric:
                raise ConfigError(f"Aggregate {self.id!r}: {fn}({src}) needs a numeric attribute")
            if fn == "list-collect":
                ok = out_attr.type.is_list and not in_attr.type.is_list
            else:
                ok = out_attr.type.is_list == in_attr.type.is_list and out_attr.type.is_numeric
            if not ok:
                raise ConfigError(
                    f"Aggregate {self.id!r}: {fn}({src}) cannot produce {out_attr.type.value} {out_name!r}")
            reds.append(_Reduction(out_s.index(out_name), fn, in_s.index(src), out_attr.type, in_attr.type))
        covered = {r.out_index for r in reds}
        if self._group_out is not None:
            covered.add(self._group_out)
        missing = [a.name for i, a in enumerate(out_s.attributes) if i not in covered]
        if missing:
            raise ConfigError(f"Aggregate {self.id!r}: no reducer for output attributes {missing}")
        self._reductions = reds
        self._flush_on_drain = bool(self.config.get("flush-on-drain", True))
        self._emit_partial = bool(self.config.get("emit-partial", False))
        self._buffer = WindowBuffer(self.window_spec, in_s)
        self._requested_size: int | None = None

    def request_count(self, size: int) -> None:
        """Ask for a new tumbling count; applied at the next window boundary.

        Safe to call from another thread: a single attribute store.
        """
        if self.window_spec.mode != TUMBLING or size <= 0:
            raise ConfigError("only tumbling aggregates accept a positive count change")
        self._requested_size = int(size)

    def _emit_group(self, key, tuples, emit):
        values: list[Any] = [None] * len(self.out_schemas[0])
        if self._group_out is not None:
            values[self._group_out] = key
        for red in self._reductions:
            values[red.out_index] = _reduce(red, tuples)
        emit(0, Tuple(self.out_schemas[0], values))
        self.stats.bump("windows")

    def _apply_resize(self):
        if self._requested_size is not None and self._buffer.pending_count == 0:
            self._buffer.resize(self._requested_size)
            self.window_spec = self._buffer.spec
            self._requested_size = None
            self.stats.bump("resizes")

    def process(self, port, t, emit):
        self._apply_resize()
        for key, tuples in self._buffer.push(t):
            self._emit_group(key, tuples, emit)
        self._apply_resize()

    def on_punctuation(self, port, p, emit):
        if self.window_spec.mode == PUNCTUATION:
            for key, tuples in self._buffer.punctuate():
                self._emit_group(key, tuples, emit)
        emit(0, p)

    def finish(self, emit, drained=False):
        pending = self._buffer.pending_count
        if pending and (self._emit_partial or (drained and self._flush_on_drain)):
            for key, tuples in self._buffer.pending():
                self._emit_group(key, tuples, emit)
            self.stats.bump("partial_windows")
            self.stats.bump("partial_tuples", pending)
        elif pending:
            self.stats.bump("discarded_tuples", pending)
        self._buffer.clear()


class Barrier(Operator):
    """Lock-step synchronisation: one tuple from every input per emission.

    ``mode="concat"`` emits one tuple holding the inputs' values in port
    order.  ``mode="interleave"`` requires identical schemas and forwards the
    matched tuples one after another in port order, which merges round-robin
    branches back into their original order.  With ``on-close="flush"``
    (interleave only) tuples left unmatched at end of stream are forwarded
    in arrival-round order instead of being stranded.
    """

    kind = "Barrier"

    def configure(self):
        self._check_keys({"mode", "on-close", "combine"})
        if len(self.in_schemas) < 2 or len(self.out_schemas) != 1:
            raise ConfigError(f"Barrier {self.id!r} needs at least two inputs and one output")
        self._mode = self.config.get("mode", "concat")
        self._on_close = self.config.get("on-close", "strand")
        out_s = self.out_schemas[0]
        if self._mode == "interleave":
            for s in self.in_schemas:
                if s != out_s:
                    raise ConfigError(f"Barrier {self.id!r}: interleave needs every input to match the output "
                                      f"{out_s!r}, got {s!r}")
        elif self._mode == "concat":
            self._combine = self.config.get("combine")
            if self._combine is None:
                types = [a.type for s in self.in_schemas for a in s.attributes]
                if types != [a.type for a in out_s.attributes]:
                    raise ConfigError(
                        f"Barrier {self.id!r}: output {out_s!r} is not the concatenation of its inputs")
            if self._on_close != "strand":
                raise ConfigError(f"Barrier {self.id!r}: on-close flush needs interleave mode")
        else:
            raise ConfigError(f"Barrier {self.id!r}: unknown mode {self._mode!r}")
        if self._on_close not in ("strand", "flush"):
            raise ConfigError(f"Barrier {self.id!r}: on-close must be 'strand' or 'flush'")
        self._queues = [deque() for _ in self.in_schemas]
        self.rounds = 0

    def process(self, port, t, emit):
        self._queues[port].append(t)
        while all(self._queues):
            batch = [q.popleft() for q in self._queues]
            self.rounds += 1
            if self._mode == "interleave":
                for b in batch:
                    emit(0, b)
            elif self._combine is not None:
                out = self._combine(batch)
                emit(0, out if isinstance(out, Tuple) else Tuple(self.out_schemas[0], out))
            else:
                emit(0, Tuple(self.out_schemas[0], [v for b in batch for v in b.values]))

    def on_punctuation(self, port, p, emit):
        self.stats.bump("punctuations_dropped")

    def finish(self, emit, drained=False):
        left = sum(len(q) for q in self._queues)
        if left and self._on_close == "flush":
            while any(self._queues):
                for q in self._queues:
                    if q:
                        emit(0, q.popleft())
            self.stats.bump("flushed", left)
        elif left:
            self.stats.bump("stranded", left)
            for q in self._queues:
                q.clear()
        self.stats.counters["rounds"] = self.rounds


class Punctor(Operator):
    kind = "Punctor"

    def configure(self):
        self._check_keys({"condition", "position"})
        _single_io(self, same=True)
        cond = self._require("condition")
        in_s = self.in_schemas[0]
        if isinstance(cond, str) and cond not in PREDICATES:
            cmp = parse_comparison(cond, in_s)
            self._cond = lambda t, index: cmp(t)
        else:
            self._cond = _resolve_callable(cond, PREDICATES, "predicate",
                                           self.config.get("params", {}), in_s)
            if _arity(self._cond) < 2:
                one = self._cond
                self._cond = lambda t, index: one(t)
        self._before = self.config.get("position", "after") == "before"
        if self.config.get("position", "after") not in ("before", "after"):
            raise ConfigError(f"Punctor {self.id!r}: position must be 'before' or 'after'")
        self._index = 0

    def process(self, port, t, emit):
        fire = bool(self._cond(t, self._index))
        self._index += 1
        marker = Tuple.punctuation(self.out_schemas[0])
        if fire and self._before:
            emit(0, marker)
        emit(0, t)
        if fire and not self._before:
            emit(0, marker)


class Delay(Operator):
    """Holds each tuple for ``interval`` seconds.

    In deterministic mode time is logical: the delay advances the operator's
    logical clock and the stream passes through unchanged.
    """

    kind = "Delay"

    def configure(self):
        self._check_keys({"interval"})
        _single_io(self, same=True)
        interval = self.config.get("interval", 0.0)
        if not isinstance(interval, (int, float)) or interval < 0:
            raise ConfigError(f"Delay {self.id!r}: interval must be a non-negative duration in seconds")
        self.interval = float(interval)
        self.logical_clock = 0.0

    def process(self, port, t, emit):
        if self.ctx.mode == "deterministic":
            self.logical_clock += self.interval
            self.stats.counters["logical_clock"] = self.logical_clock
            emit(0, t)
            return
        arrival = time.monotonic()
        due = arrival + self.interval
        while True:
            now = time.monotonic()
            if now >= due or self.ctx.stop_requested():
                break
            time.sleep(min(due - now, 0.05))
        slack = time.monotonic() - arrival
        prev = self.stats.counters.get("min_slack")
        self.stats.counters["min_slack"] = slack if prev is None else min(prev, slack)
        emit(0, t)


class Sort(Operator):
    kind = "Sort"

    def configure(self):
        self._check_keys({"window", "key", "order"})
        _single_io(self, same=True)
        in_s = self.in_schemas[0]
        try:
            spec = window_from(self.config.get("window", {"mode": PUNCTUATION}), in_s)
        except WindowError as exc:
            raise ConfigError(f"Sort {self.id!r}: {exc}") from None
        if spec.mode == SLIDING or spec.group_by is not None:
            raise ConfigError(f"Sort {self.id!r}: only ungrouped tumbling or punctuation windows")
        key = self._require("key")
        if key not in in_s or in_s.attribute(key).type.is_list:
            raise ConfigError(f"Sort {self.id!r}: key {key!r} must be a scalar attribute of {in_s!r}")
        order = self.config.get("order", "asc")
        if order not in ("asc", "desc"):
            raise ConfigError(f"Sort {self.id!r}: order must be 'asc' or 'desc'")
        self._key = in_s.index(key)
        self._reverse = order == "desc"
        self._buffer = WindowBuffer(spec, in_s)

    def _flush(self, tuples, emit):
        for t in sorted(tuples, key=lambda t: t.values[self._key], reverse=self._reverse):
            emit(0, t)

    def process(self, port, t, emit):
        for _, tuples in self._buffer.push(t):
            self._flush(tuples, emit)

    def on_punctuation(self, port, p, emit):
        for _, tuples in self._buffer.punctuate():
            self._flush(tuples, emit)
        emit(0, p)

    def finish(self, emit, drained=False):
        for _, tuples in self._buffer.pending():
            self._flush(tuples, emit)
        self._buffer.clear()


class Join(Operator):
    """Equi-join of two windowed streams.

    Output values are the left tuple's values followed by the right tuple's,
    minus the right key when both keys share a name.
    """

    kind = "Join"

    def configure(self):
        self._check_keys({"window", "left-window", "right-window", "key", "left-key", "right-key"})
        if len(self.in_schemas) != 2 or len(self.out_schemas) != 1:
            raise ConfigError(f"Join {self.id!r} needs exactly two inputs and one output")
        left, right = self.in_schemas
        lk = self.config.get("left-key", self.config.get("key"))
        rk = self.config.get("right-key", self.config.get("key"))
        if lk is None or rk is None:
            raise ConfigError(f"Join {self.id!r}: missing required parameter 'key'")
        if lk not in left or rk not in right:
            raise ConfigError(f"Join {self.id!r}: key attributes {lk!r}/{rk!r} missing from inputs")
        default = self.config.get("window", {"mode": SLIDING, "size": 16, "slide": 1})
        self._windows = []
        for side, schema in (("left-window", left), ("right-window", right)):
            try:
                spec = window_from(self.config.get(side, default), schema)
            except WindowError as exc:
                raise ConfigError(f"Join {self.id!r}: {exc}") from None
            if spec.group_by is not None:
                raise ConfigError(f"Join {self.id!r}: grouped join windows are not supported")
            self._windows.append(spec)
        self._keys = (left.index(lk), right.index(rk))
        self._drop_right = right.index(rk) if lk == rk else None
        out_types = [a.type for a in left.attributes] + [
            a.type for i, a in enumerate(right.attributes) if i != self._drop_right]
        if out_types != [a.type for a in self.out_schemas[0].attributes]:
            raise ConfigError(f"Join {self.id!r}: output {self.out_schemas[0]!r} does not match joined layout")
        self._buffers: list[deque] = [deque(), deque()]

    def _combine(self, lt: Tuple, rt: Tuple) -> Tuple:
        rvals = [v for i, v in enumerate(rt.values) if i != self._drop_right]
        return Tuple(self.out_schemas[0], list(lt.values) + rvals)

    def _insert(self, side: int, t: Tuple) -> None:
        spec, buf = self._windows[side], self._buffers[side]
        if spec.mode == TUMBLING and len(buf) >= spec.size:
            buf.clear()
        buf.append(t)
        if spec.mode == SLIDING and len(buf) > spec.size:
            buf.popleft()

    def process(self, port, t, emit):
        other = 1 - port
        key = t.values[self._keys[port]]
        okey = self._keys[other]
        for o in self._buffers[other]:
            if o.values[okey] == key:
                emit(0, self._combine(t, o) if port == 0 else self._combine(o, t))
        self._insert(port, t)

    def on_punctuation(self, port, p, emit):
        if self._windows[port].mode == PUNCTUATION:
            self._buffers[port].clear()


class UserOp(Operator):
    """Host for compile-time plugin operators registered by name."""

    kind = "UserOp"

    def configure(self):
        self._check_keys({"op"})
        _single_io(self)
        spec = self._require("op")
        if isinstance(spec, str):
            if spec not in USER_OPERATORS:
                _load_builtins()
            cls = USER_OPERATORS.get(spec)
            if cls is None:
                raise ConfigError(f"UserOp {self.id!r}: unknown user operator {spec!r}")
        else:
            cls = spec
        self.impl = cls(self.config.get("params", {}), self.in_schemas[0], self.out_schemas[0])

    def process(self, port, t, emit):
        try:
            self.impl.process(t, lambda out: emit(0, out))
        except SchemaError:
            raise
        except DOMAIN_ERRORS:
            self.stats.errors += 1

    def finish(self, emit, drained=False):
        fin = getattr(self.impl, "finish", None)
        if fin is not None:
            fin(lambda out: emit(0, out))


class UserOperator:
    """Base class for plugins hosted by :class:`UserOp`."""

    def __init__(self, params: Mapping[str, Any], in_schema: Schema, out_schema: Schema):
        self.params = dict(params)
        self.in_schema = in_schema
        self.out_schema = out_schema

    def process(self, t: Tuple, emit: Callable[[Tuple], None]) -> None:
        raise NotImplementedError


def _single_io(op: Operator, same: bool = False) -> None:
    if len(op.in_schemas) != 1 or len(op.out_schemas) != 1:
        raise ConfigError(f"{op.kind} {op.id!r} needs exactly one input and one output")
    if same and op.in_schemas[0] != op.out_schemas[0]:
        raise ConfigError(
            f"{op.kind} {op.id!r}: output {op.out_schemas[0]!r} must equal input {op.in_schemas[0]!r}")


OPERATOR_KINDS: dict[str, type[Operator]] = {
    cls.kind: cls
    for cls in (Source, Sink, Functor, Split, Aggregate, Barrier, Punctor, Delay, Sort, Join, UserOp)
}
