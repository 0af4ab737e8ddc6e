"""VEX-subset provenance records.

Grammar accepted and produced here::

    document   := version-line { block }
    version    := "VEX_rev" "=" value ";"          (first non-comment line)
    block      := "$" NAME ";" { item }
    item       := statement | def
    def        := "def" NAME ";" { item } "enddef" ";"
    statement  := KEY "=" value { ":" value } ";"
    comment    := "*" ... end of line

Values are bare words or double-quoted strings with backslash escapes.
Blocks with names the parser does not know are kept verbatim.  The
``$PROCESSING`` block is this package's own extension: it records the
post-correlation pipeline (fft size, integration, software version, input
source and an FNV-1a hash of the configuration).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Union

from . import __version__

VEX_REVISION = "1.5"
REQUIRED_BLOCKS = ("GLOBAL", "STATION", "MODE", "SCHED", "PROCESSING")
HASH_ALGORITHM = "fnv1a64"
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_BARE = re.compile(r"^[A-Za-z0-9_.+\-/@#%&!?<>~^|,]+$")


class VexSyntaxError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ProvenanceError(ValueError):
    """Configuration lacks a field the provenance record needs."""


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class Statement:
    key: str
    values: tuple[str, ...]

    def __post_init__(self):
        if not self.key:
            raise ValueError("statement key must be non-empty")
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))

    @property
    def value(self) -> str:
        return self.values[0] if self.values else ""


@dataclass(frozen=True)
class Def:
    name: str
    items: tuple["Item", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def get(self, key: str) -> Statement | None:
        return next((i for i in self.items if isinstance(i, Statement) and i.key == key), None)

    def defs(self) -> list["Def"]:
        return [i for i in self.items if isinstance(i, Def)]


Item = Union[Statement, Def]


@dataclass(frozen=True)
class VexBlock:
    name: str
    items: tuple[Item, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def defs(self) -> list[Def]:
        return [i for i in self.items if isinstance(i, Def)]

    def get_def(self, name: str) -> Def | None:
        return next((d for d in self.defs() if d.name == name), None)


@dataclass(frozen=True)
class VexDocument:
    version: str = VEX_REVISION
    blocks: tuple[VexBlock, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def block(self, name: str) -> VexBlock | None:
        return next((b for b in self.blocks if b.name == name), None)

    @property
    def block_names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def lookup(self, block: str, def_name: str, key: str) -> Statement | None:
        b = self.block(block)
        d = b.get_def(def_name) if b else None
        return d.get(key) if d else None

    def dumps(self) -> str:
        return dumps(self)


# ---------------------------------------------------------------- hashing

def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_config_text(config: Mapping[str, Any]) -> str:
    """Stable text form: JSON with sorted keys and no insignificant whitespace."""
    return json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def config_hash(config: Mapping[str, Any]) -> str:
    return f"{fnv1a64(canonical_config_text(config).encode()):016x}"


# ---------------------------------------------------------------- serialisation

def _quote(value: str) -> str:
    if value and _BARE.fullmatch(value):
        return value
    esc = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    esc = esc.replace("\r", "\\r")
    return f'"{esc}"'


def _dump_items(items: Iterable[Item], indent: int, out: list[str]) -> None:
    pad = "  " * indent
    for item in items:
        if isinstance(item, Def):
            out.append(f"{pad}def {item.name};")
            _dump_items(item.items, indent + 1, out)
            out.append(f"{pad}enddef;")
        else:
            vals = " : ".join(_quote(v) for v in item.values)
            out.append(f"{pad}{item.key} = {vals};")


_BLOCK_COMMENTS = {
    "PROCESSING": "* non-standard extension: post-correlation processing record",
}


def dumps(doc: VexDocument) -> str:
    out = [f"VEX_rev = {_quote(doc.version)};"]
    for block in doc.blocks:
        out.append(f"${block.name};")
        if block.name in _BLOCK_COMMENTS:
            out.append(_BLOCK_COMMENTS[block.name])
        _dump_items(block.items, 1, out)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- parsing

def _strip_comment(line: str) -> str:
    in_q = esc = False
    for i, ch in enumerate(line):
        if esc:
            esc = False
        elif ch == "\\" and in_q:
            esc = True
        elif ch == '"':
            in_q = not in_q
        elif ch == "*" and not in_q:
            return line[:i]
    return line


def _split_statements(text: str) -> list[tuple[int, str]]:
    """Cut text into ``;``-terminated statements, each tagged with its first line."""
    out: list[tuple[int, str]] = []
    buf: list[str] = []
    start = None
    # only \n ends a line: str.splitlines would also break on characters legal inside quoted values
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = _strip_comment(raw[:-1] if raw.endswith("\r") else raw)
        in_q = esc = False
        for ch in line:
            if start is None and not ch.isspace():
                start = lineno
            if esc:
                esc = False
                buf.append(ch)
                continue
            if ch == "\\" and in_q:
                esc = True
            elif ch == '"':
                in_q = not in_q
            elif ch == ";" and not in_q:
                out.append((start, "".join(buf).strip()))
                buf, start = [], None
                continue
            buf.append(ch)
        if in_q:
            raise VexSyntaxError("unterminated quoted string", lineno)
        buf.append("\n")
    rest = "".join(buf).strip()
    if rest:
        raise VexSyntaxError(f"statement not terminated by ';': {rest[:40]!r}", start)
    return out


def _parse_values(text: str, lineno: int) -> tuple[str, ...]:
    vals: list[str] = []
    i, n = 0, len(text)
    while True:
        while i < n and text[i].isspace():
            i += 1
        if i < n and text[i] == '"':
            i += 1
            chars = []
            while i < n and text[i] != '"':
                if text[i] == "\\" and i + 1 < n:
                    i += 1
                    chars.append({"n": "\n", "t": "\t", "r": "\r"}.get(text[i], text[i]))
                else:
                    chars.append(text[i])
                i += 1
            if i >= n:
                raise VexSyntaxError("unterminated quoted string", lineno)
            i += 1
            vals.append("".join(chars))
        else:
            j = i
            while j < n and text[j] != ":":
                j += 1
            vals.append(text[i:j].strip())
            i = j
        while i < n and text[i].isspace():
            i += 1
        if i >= n:
            return tuple(vals)
        if text[i] != ":":
            raise VexSyntaxError(f"expected ':' between values, found {text[i]!r}", lineno)
        i += 1


def parse_vex(text: str) -> VexDocument:
    """Parse VEX-subset text into a :class:`VexDocument`."""
    if not text or not text.strip():
        raise VexSyntaxError("empty document", 1)
    stmts = _split_statements(text)
    if not stmts:
        raise VexSyntaxError("missing version line", 1)
    lineno, first = stmts[0]
    m = re.match(r"^VEX_rev\s*=\s*(.+)$", first, re.S)
    if not m:
        raise VexSyntaxError("first statement must be the version line 'VEX_rev = <rev>;'", lineno)
    version = _parse_values(m.group(1), lineno)[0]
    blocks: list[VexBlock] = []
    block_name: str | None = None
    stack: list[tuple[str, list[Item], int]] = []
    top: list[Item] = []

    def close_block():
        if block_name is not None:
            blocks.append(VexBlock(block_name, top))

    for lineno, stmt in stmts[1:]:
        if stmt.startswith("$"):
            if stack:
                raise VexSyntaxError(f"def {stack[-1][0]!r} opened on line {stack[-1][2]} has no enddef", lineno)
            close_block()
            block_name = stmt[1:].strip()
            if not re.match(r"^\w+$", block_name):
                raise VexSyntaxError(f"bad block name {block_name!r}", lineno)
            top = []
            continue
        if block_name is None:
            raise VexSyntaxError(f"statement outside any block: {stmt[:40]!r}", lineno)
        current = stack[-1][1] if stack else top
        words = stmt.split(None, 1)
        if words and words[0] == "def" and len(words) == 2 and "=" not in stmt:
            stack.append((words[1].strip(), [], lineno))
            continue
        if stmt == "enddef":
            if not stack:
                raise VexSyntaxError("enddef without matching def", lineno)
            name, items, _ = stack.pop()
            (stack[-1][1] if stack else top).append(Def(name, items))
            continue
        key, eq, rest = stmt.partition("=")
        if not eq or not key.strip():
            raise VexSyntaxError(f"expected 'key = value', got {stmt[:40]!r}", lineno)
        current.append(Statement(key.strip(), _parse_values(rest, lineno)))
    if stack:
        raise VexSyntaxError(f"def {stack[-1][0]!r} has no matching enddef", stack[-1][2])
    close_block()
    return VexDocument(version, blocks)


# ---------------------------------------------------------------- emission

def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Field:
    """One configuration value recorded in the document."""

    config_key: str
    locations: tuple[tuple[str, str, str], ...]  # (block, def, statement key)
    unit: str | None = None


FIELDS: tuple[Field, ...] = (
    Field("experiment.name", (("GLOBAL", "EXPER", "exper_name"),)),
    Field("experiment.date", (("GLOBAL", "EXPER", "exper_date"),)),
    Field("experiment.description", (("GLOBAL", "EXPER", "exper_description"),)),
    Field("station.antenna", (("STATION", "ANTENNA", "antenna_name"),)),
    Field("station.target", (("STATION", "ANTENNA", "target_source"),)),
    Field("station.sample-rate", (("STATION", "ANTENNA", "sample_rate"),), "Hz"),
    Field("ingest.bits", (("STATION", "ANTENNA", "bits_per_sample"), ("MODE", "SAMPLE_FORMAT", "bits_per_sample"))),
    Field("ingest.encoding", (("MODE", "SAMPLE_FORMAT", "encoding"),)),
    Field("ingest.byte-order", (("MODE", "SAMPLE_FORMAT", "byte_order"),)),
    Field("ingest.block-size", (("MODE", "SAMPLE_FORMAT", "block_size"),), "bytes"),
    Field("observation.start", (("SCHED", "SCAN_1", "start"),)),
    Field("observation.duration", (("SCHED", "SCAN_1", "duration"),), "sec"),
    Field("ingest.fft-size", (("PROCESSING", "PIPELINE", "fft_size"),)),
    Field("ingest.frames-per-chunk", (("PROCESSING", "PIPELINE", "frames_per_chunk"),)),
    Field("integration.count", (("PROCESSING", "PIPELINE", "aggregation_count"),)),
    Field("dsp.window", (("PROCESSING", "PIPELINE", "window"),)),
    Field("dsp.nyquist", (("PROCESSING", "PIPELINE", "nyquist_bin"),)),
    Field("ingest.workers", (("PROCESSING", "PIPELINE", "workers"),)),
    Field("ingest.source", (("PROCESSING", "PIPELINE", "input_source"),)),
    Field("ingest.start-offset", (("PROCESSING", "PIPELINE", "start_offset"),), "bytes"),
)

# keys carrying the record's own bookkeeping rather than configuration values
PROCESSING_FIXED = ("software", "config_hash")

_CAPTURE_KEYS = ("bytes_read", "samples_decoded", "samples_chunked", "dropped_samples", "chunks",
                 "spectra", "partial_spectra")


def _config_get(config: Mapping[str, Any], dotted: str) -> Any:
    section, key = dotted.split(".", 1)
    return (config.get(section) or {}).get(key)


def _config_dict(config: Any) -> dict[str, dict[str, Any]]:
    if hasattr(config, "hashed"):
        return config.hashed()
    return {s: dict(v) for s, v in config.items() if s != "output"}


def emit_provenance(config: Any, capture: Mapping[str, Any] | None = None,
                    processing: Mapping[str, Any] | None = None) -> VexDocument:
    """Build the provenance record of a run.

    ``config`` is a :class:`~streamfx.config.RunConfig` or the equivalent
    nested mapping; ``capture`` holds counters from the source (samples
    decoded etc.); ``processing`` may override the software label.
    """
    cfg = _config_dict(config)
    for required in ("experiment.name", "ingest.source", "station.sample-rate", "ingest.bits", "ingest.fft-size",
                     "ingest.frames-per-chunk", "integration.count"):
        if _config_get(cfg, required) is None:
            raise ProvenanceError(f"missing required config field {required}")
    capture = dict(capture or {})
    processing = dict(processing or {})

    placed: dict[tuple[str, str], list[Statement]] = {}
    for f in FIELDS:
        v = _config_get(cfg, f.config_key)
        if v is None and f.config_key == "observation.duration" and capture.get("samples_decoded") is not None:
            rate = float(_config_get(cfg, "station.sample-rate"))
            placed.setdefault(("SCHED", "SCAN_1"), []).append(
                Statement("duration", (repr(capture["samples_decoded"] / rate), "sec", "derived")))
            continue
        if v is None:
            continue
        for block, def_name, key in f.locations:
            vals = (_fmt(v),) + ((f.unit,) if f.unit else ())
            placed.setdefault((block, def_name), []).append(Statement(key, vals))

    placed.setdefault(("PROCESSING", "PIPELINE"), [])
    placed[("PROCESSING", "PIPELINE")] += [
        Statement("software", (processing.get("software", "streamfx"), processing.get("version", __version__))),
        Statement("config_hash", (HASH_ALGORITHM, config_hash(cfg))),
    ]
    def_order = {"GLOBAL": ["EXPER"], "STATION": ["ANTENNA"], "MODE": ["SAMPLE_FORMAT"], "SCHED": ["SCAN_1"],
                 "PROCESSING": ["PIPELINE"]}
    blocks = []
    for name in REQUIRED_BLOCKS:
        items: list[Item] = []
        for d in def_order[name]:
            items.append(Def(d, placed.get((name, d), [])))
        if name == "MODE":
            items[0] = Def("SAMPLE_FORMAT", list(items[0].items) + [Statement("sub_byte_packing", ("msb-first",))])
        if name == "PROCESSING" and capture:
            items.append(Def("CAPTURE", [Statement(k, (_fmt(capture[k]),)) for k in _CAPTURE_KEYS if k in capture]))
        blocks.append(VexBlock(name, items))
    return VexDocument(VEX_REVISION, blocks)


# ---------------------------------------------------------------- verification

@dataclass(frozen=True)
class FieldMismatch:
    field: str
    expected: str | None
    found: str | None

    def __str__(self) -> str:
        return f"{self.field}: expected {self.expected!r}, found {self.found!r}"


@dataclass
class VerifyReport:
    matches: list[str] = field(default_factory=list)
    mismatches: list[FieldMismatch] = field(default_factory=list)
    hash_expected: str = ""
    hash_found: str | None = None
    informational: dict[str, str] = field(default_factory=dict)

    @property
    def hash_ok(self) -> bool:
        return self.hash_found == self.hash_expected

    @property
    def ok(self) -> bool:
        return self.hash_ok and not self.mismatches

    @property
    def mismatched_fields(self) -> list[str]:
        return [m.field for m in self.mismatches]

    def render(self) -> str:
        lines = [f"match {name}" for name in self.matches]
        lines += [f"MISMATCH {m}" for m in self.mismatches]
        lines.append(f"{'match' if self.hash_ok else 'MISMATCH'} config_hash: expected {self.hash_expected}, "
                     f"found {self.hash_found}")
        lines += [f"info {k} = {v}" for k, v in self.informational.items()]
        lines.append("result: " + ("all fields match" if self.ok else
                                   f"{len(self.mismatches) + (not self.hash_ok)} problem(s)"))
        return "\n".join(lines) + "\n"


def verify_provenance(doc: VexDocument | str, config: Any) -> VerifyReport:
    """Compare a record against a configuration field by field and by hash."""
    if isinstance(doc, str):
        doc = parse_vex(doc)
    cfg = _config_dict(config)
    report = VerifyReport(hash_expected=config_hash(cfg))
    for f in FIELDS:
        v = _config_get(cfg, f.config_key)
        expected = None if v is None else _fmt(v)
        bad = None
        for block, def_name, key in f.locations:
            st = doc.lookup(block, def_name, key)
            derived = st is not None and st.values[-1:] == ("derived",)
            if expected is None and derived:
                report.informational[f.config_key] = " : ".join(st.values)
                continue
            found = st.value if st is not None else None
            if found != expected:
                bad = FieldMismatch(f.config_key, expected, found)
                break
        if bad is None:
            report.matches.append(f.config_key)
        else:
            report.mismatches.append(bad)
    st = doc.lookup("PROCESSING", "PIPELINE", "config_hash")
    if st is not None and len(st.values) == 2 and st.values[0] == HASH_ALGORITHM:
        report.hash_found = st.values[1]
    sw = doc.lookup("PROCESSING", "PIPELINE", "software")
    if sw is not None:
        report.informational["software"] = " : ".join(sw.values)
    proc = doc.block("PROCESSING")
    cap = proc.get_def("CAPTURE") if proc else None
    if cap is not None:
        for st in cap.items:
            if isinstance(st, Statement):
                report.informational[f"capture.{st.key}"] = st.value
    return report


# ---------------------------------------------------------------- lint

@dataclass(frozen=True)
class LintIssue:
    severity: str  # "error" or "warning"
    message: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{self.severity}: {where}{self.message}"


def lint_vex(text: str) -> list[LintIssue]:
    """Structural and provenance-completeness checks; empty list means clean."""
    try:
        doc = parse_vex(text)
    except VexSyntaxError as exc:
        return [LintIssue("error", str(exc).split(": ", 1)[-1], exc.line)]
    issues: list[LintIssue] = []
    seen: set[str] = set()
    for name in doc.block_names:
        if name in seen:
            issues.append(LintIssue("error", f"block ${name} appears more than once"))
        seen.add(name)
    for name in REQUIRED_BLOCKS:
        if name not in seen:
            issues.append(LintIssue("error", f"required block ${name} is missing"))
    for name in doc.block_names:
        if name not in REQUIRED_BLOCKS:
            issues.append(LintIssue("warning", f"unknown block ${name} kept verbatim"))
    if "PROCESSING" in seen:
        for key in ("fft_size", "frames_per_chunk", "aggregation_count", "window", "software", "config_hash"):
            if doc.lookup("PROCESSING", "PIPELINE", key) is None:
                issues.append(LintIssue("error", f"$PROCESSING def PIPELINE lacks {key}"))
        st = doc.lookup("PROCESSING", "PIPELINE", "config_hash")
        if st is not None and (len(st.values) != 2 or st.values[0] != HASH_ALGORITHM
                               or not re.fullmatch(r"[0-9a-f]{16}", st.values[1])):
            issues.append(LintIssue("error", f"config_hash must be '{HASH_ALGORITHM} : <16 hex digits>'"))
    return issues
