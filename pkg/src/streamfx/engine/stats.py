"""Run statistics and the line-oriented ``key=value`` stats report."""

from __future__ import annotations

from dataclasses import dataclass, field

from .operators import OperatorStats


@dataclass
class EdgeStats:
    tuples: int = 0
    bytes: int = 0
    max_depth: int = 0


@dataclass
class JobStats:
    name: str
    mode: str
    state: str
    elapsed_s: float
    kinds: dict[str, str]
    operators: dict[str, OperatorStats]
    edges: dict[str, EdgeStats] = field(default_factory=dict)

    def report(self) -> str:
        lines = [f"job={self.name} mode={self.mode} state={self.state} elapsed_s={self.elapsed_s:.6f}"]
        for nid, s in self.operators.items():
            base = s.tuples_in or s.tuples_out
            mean = s.busy_ns / 1e3 / base if base else 0.0
            parts = [
                f"op={nid}", f"kind={self.kinds.get(nid, '?')}", f"tuples_in={s.tuples_in}",
                f"tuples_out={s.tuples_out}", f"punct_in={s.punct_in}", f"punct_out={s.punct_out}",
                f"errors={s.errors}", f"dropped={s.dropped}", f"busy_us={s.busy_ns / 1e3:.3f}",
                f"mean_cost_us={mean:.3f}",
            ]
            parts += [f"{k}={_fmt(v)}" for k, v in sorted(s.counters.items())]
            lines.append(" ".join(parts))
        for key, e in self.edges.items():
            lines.append(f"edge={key} tuples={e.tuples} bytes={e.bytes} max_depth={e.max_depth}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float) and not v.is_integer():
        return f"{v:.6g}"
    return str(int(v)) if isinstance(v, float) else str(v)


def parse_stats_report(text: str) -> dict[str, list[dict[str, str]]]:
    """Split a report back into ``{"job": [...], "op": [...], "edge": [...]}`` records."""
    out: dict[str, list[dict[str, str]]] = {"job": [], "op": [], "edge": []}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        rec = dict(tok.split("=", 1) for tok in line.split())
        kind = next(iter(rec))
        out.setdefault(kind, []).append(rec)
    return out
