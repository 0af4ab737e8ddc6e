"""Count- and punctuation-based windows."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Iterator, Mapping

from .schema import Schema, SchemaError, Tuple


class WindowError(ValueError):
    pass


TUMBLING = "tumbling"
SLIDING = "sliding"
PUNCTUATION = "punctuation"
_MODES = (TUMBLING, SLIDING, PUNCTUATION)


@dataclass(frozen=True)
class WindowSpec:
    mode: str = TUMBLING
    size: int = 1
    slide: int | None = None
    group_by: str | None = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise WindowError(f"unknown window mode {self.mode!r}; expected one of {_MODES}")
        if self.mode != PUNCTUATION and (not isinstance(self.size, int) or self.size <= 0):
            raise WindowError(f"window size must be a positive tuple count, got {self.size!r}")
        if self.mode == SLIDING:
            if self.slide is None or self.slide <= 0:
                raise WindowError("sliding windows need a positive slide")
            if self.slide > self.size:
                raise WindowError(f"slide {self.slide} exceeds window size {self.size}")
        elif self.slide is not None:
            raise WindowError(f"slide only applies to sliding windows, not {self.mode}")

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any] | "WindowSpec") -> "WindowSpec":
        if isinstance(cfg, WindowSpec):
            return cfg
        known = {"mode", "size", "slide", "group-by", "group_by", "count"}
        unknown = set(cfg) - known
        if unknown:
            raise WindowError(f"unknown window keys {sorted(unknown)}")
        size = cfg.get("size", cfg.get("count", 1))
        return cls(
            mode=cfg.get("mode", TUMBLING),
            size=size,
            slide=cfg.get("slide"),
            group_by=cfg.get("group-by", cfg.get("group_by")),
        )

    def check_schema(self, schema: Schema) -> None:
        if self.group_by is not None and self.group_by not in schema:
            raise WindowError(f"group-by attribute {self.group_by!r} not in schema {schema!r}")


class WindowBuffer:
    """Per-group tuple buffers implementing a :class:`WindowSpec`.

    ``push`` returns the groups whose window fired on this arrival as
    ``(key, tuples)`` pairs; ``punctuate`` fires every non-empty group.
    """

    def __init__(self, spec: WindowSpec, schema: Schema | None = None):
        self.spec = spec
        self._group_index = None
        if spec.group_by is not None and schema is not None:
            self._group_index = schema.index(spec.group_by)
        self._groups: dict[Any, deque] = {}
        self._arrivals: dict[Any, int] = {}

    def _key(self, t: Tuple) -> Any:
        if self.spec.group_by is None:
            return None
        if self._group_index is None:
            return t[self.spec.group_by]
        return t.values[self._group_index]

    def resize(self, size: int) -> None:
        """Change the tumbling count; takes effect for the next window."""
        if self.spec.mode != TUMBLING:
            raise WindowError("only tumbling windows can be resized")
        self.spec = WindowSpec(TUMBLING, size, None, self.spec.group_by)

    def push(self, t: Tuple) -> list[tuple[Any, list[Tuple]]]:
        key = self._key(t)
        buf = self._groups.get(key)
        if buf is None:
            buf = self._groups[key] = deque()
            self._arrivals[key] = 0
        buf.append(t)
        self._arrivals[key] += 1
        spec = self.spec
        if spec.mode == TUMBLING:
            if len(buf) >= spec.size:
                out = list(buf)
                buf.clear()
                return [(key, out)]
        elif spec.mode == SLIDING:
            if len(buf) > spec.size:
                buf.popleft()
            n = self._arrivals[key]
            if n >= spec.size and (n - spec.size) % spec.slide == 0:
                return [(key, list(buf))]
        return []

    def punctuate(self) -> list[tuple[Any, list[Tuple]]]:
        fired = [(k, list(b)) for k, b in self._groups.items() if b]
        if self.spec.mode in (TUMBLING, PUNCTUATION):
            for b in self._groups.values():
                b.clear()
        return fired

    def pending(self) -> Iterator[tuple[Any, list[Tuple]]]:
        for k, b in self._groups.items():
            if b:
                yield k, list(b)

    def clear(self) -> None:
        for b in self._groups.values():
            b.clear()

    @property
    def pending_count(self) -> int:
        if self.spec.mode == SLIDING:
            return 0
        return sum(len(b) for b in self._groups.values())


def window_from(cfg: Any, schema: Schema) -> WindowSpec:
    try:
        spec = WindowSpec.from_config(cfg)
        spec.check_schema(schema)
    except SchemaError as exc:
        raise WindowError(str(exc)) from None
    return spec
