"""Assemble and run the autocorrelating spectrometer pipeline.

Graph for ``workers = W`` (W = 2 reproduces the reference deployment)::

    Antenna (Source) -> Distribute (Split on acceleratorID)
        -> FFT_i (UserOp channelize) -> PSD_i (Functor psd)
        -> IntegrateChunk_i (Functor integrate-chunk)        i = 0 .. W-1
    -> Merge (Barrier, interleave) -> Integrate (Aggregate, count K) -> Spectrum (Sink)

With a single worker the Split and Barrier are omitted.  The Barrier puts
the round-robin branches back into chunk order so the final average is
accumulated in the same order in every execution mode.
"""

from __future__ import annotations

import logging
import os
import threading
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .config import RunConfig
from .dsp.spectra import SpectrumFrame
from .engine import Controller, JobFailedError, JobResult, JobState, build_graph, run_concurrent, run_deterministic
from .engine.graph import DataflowGraph
from .engine.schema import CHANNEL_DATA, POWER_SPECTRUM_DATA, RAW_DATA_CHUNK, Schema
from .ingest import IngestError
from .provenance import VexDocument, emit_provenance
from .scheduler import PlacementPlan, ProfileStats, greedy_fuse

log = logging.getLogger(__name__)

INTEGRATED_PSD = Schema("IntegratedPSD", ["psd:float32-list", "n:int32"])
SOURCE_ID, INTEGRATE_ID, SINK_ID = "Antenna", "Integrate", "Spectrum"


class SpectrometerError(RuntimeError):
    """The pipeline failed after it started; ``source_failure`` selects the exit code."""

    def __init__(self, message: str, source_failure: bool = False):
        self.source_failure = source_failure
        super().__init__(message)


def n_bins(cfg: RunConfig) -> int:
    return cfg["ingest.fft-size"] // 2 + (1 if cfg["dsp.nyquist"] else 0)


def build_description(cfg: RunConfig) -> dict[str, Any]:
    """Declarative pipeline description for :func:`~streamfx.engine.build_graph`."""
    workers = cfg["ingest.workers"]
    fft = cfg["ingest.fft-size"]
    frames = cfg["ingest.frames-per-chunk"]
    source = {
        "id": SOURCE_ID, "kind": "Source", "outputs": ["Antenna"],
        "source": cfg["ingest.source"], "bits": cfg["ingest.bits"], "encoding": cfg["ingest.encoding"],
        "byte-order": cfg["ingest.byte-order"], "block-size": cfg["ingest.block-size"], "fft-size": fft,
        "frames-per-chunk": frames, "workers": workers, "start-offset": cfg["ingest.start-offset"],
        "sample-rate": cfg["station.sample-rate"], "timeout": cfg["ingest.timeout"],
    }
    ops: list[dict[str, Any]] = [source]
    streams: dict[str, str] = {"Antenna": "RawDataChunk"}
    if workers > 1:
        branches = [f"Worker{i}" for i in range(workers)]
        ops.append({"id": "Distribute", "kind": "Split", "inputs": ["Antenna"], "outputs": branches,
                    "route": "acceleratorID"})
        streams.update({b: "RawDataChunk" for b in branches})
    else:
        branches = ["Antenna"]
    integrated = []
    for i, branch in enumerate(branches):
        ch, pw, ic = f"Channels{i}", f"Power{i}", f"Integrated{i}"
        streams.update({ch: "ChannelData", pw: "PowerSpectrumData", ic: "PowerSpectrumData"})
        ops += [
            {"id": f"FFT_{i}", "kind": "UserOp", "inputs": [branch], "outputs": [ch], "op": "channelize",
             "params": {"fft-size": fft, "window": cfg["dsp.window"], "nyquist": cfg["dsp.nyquist"]}},
            {"id": f"PSD_{i}", "kind": "Functor", "inputs": [ch], "outputs": [pw], "transform": "psd"},
            {"id": f"IntegrateChunk_{i}", "kind": "Functor", "inputs": [pw], "outputs": [ic],
             "transform": "integrate-chunk", "params": {"frames": frames, "bins": n_bins(cfg)}},
        ]
        integrated.append(ic)
    if workers > 1:
        ops.append({"id": "Merge", "kind": "Barrier", "inputs": integrated, "outputs": ["Merged"],
                    "mode": "interleave", "on-close": "flush"})
        streams["Merged"] = "PowerSpectrumData"
        to_integrate = "Merged"
    else:
        to_integrate = integrated[0]
    ops += [
        {"id": INTEGRATE_ID, "kind": "Aggregate", "inputs": [to_integrate], "outputs": ["Integrated"],
         "window": {"mode": "tumbling", "size": cfg["integration.count"]},
         "reducers": {"psd": "avg(psd)", "n": "count()"}, "emit-partial": cfg["integration.emit-partial"]},
        {"id": SINK_ID, "kind": "Sink", "inputs": ["Integrated"]},
    ]
    streams["Integrated"] = "IntegratedPSD"
    return {
        "application": {"name": cfg["experiment.name"]},
        "schemas": {s.name: s for s in (RAW_DATA_CHUNK, CHANNEL_DATA, POWER_SPECTRUM_DATA, INTEGRATED_PSD)},
        "streams": streams,
        "operators": ops,
    }


def build_spectrometer(cfg: RunConfig) -> DataflowGraph:
    return build_graph(build_description(cfg))


def with_seed(uri: str, seed: int) -> str:
    """Set the seed of a ``synth://`` URI; other schemes are returned unchanged."""
    if not uri.startswith("synth://"):
        return uri
    parts = urllib.parse.urlsplit(uri)
    query = [(k, v) for k, v in urllib.parse.parse_qsl(parts.query, keep_blank_values=True) if k != "seed"]
    query.append(("seed", str(seed)))
    return urllib.parse.urlunsplit(parts._replace(query=urllib.parse.urlencode(query)))


def make_plan(graph: DataflowGraph, cfg: RunConfig, stats: ProfileStats | None = None) -> PlacementPlan:
    caps = [float(cfg["engine.capacity"])] * cfg["engine.nodes"]
    return greedy_fuse(graph, stats or ProfileStats.cold_start(graph), caps)


class ControlFile:
    """Live parameter changes, read at chunk boundaries.

    The file holds ``key=value`` lines: ``count=<n>`` changes the
    integration count from the next window on, ``stop=true`` drains the run.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._stamp: tuple[int, int] | None = None
        self.applied: list[tuple[str, str]] = []

    def read(self) -> dict[str, str] | None:
        try:
            st = os.stat(self.path)
        except OSError:
            return None
        stamp = (st.st_mtime_ns, st.st_size)
        if stamp == self._stamp:
            return None
        self._stamp = stamp
        out = {}
        for line in self.path.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                key, _, value = line.partition("=")
                out[key.strip()] = value.strip()
        return out

    def __call__(self, controller: Controller) -> None:
        changes = self.read()
        if not changes:
            return
        for key, value in changes.items():
            if key == "count":
                try:
                    controller.operators[INTEGRATE_ID].request_count(int(value))
                except (ValueError, KeyError) as exc:
                    log.warning("control file: ignoring count=%r (%s)", value, exc)
                    continue
            elif key == "stop":
                if value.lower() in ("1", "true", "yes"):
                    controller.stop(drain=True)
            else:
                log.warning("control file: unknown key %r", key)
                continue
            self.applied.append((key, value))


@dataclass
class SpectrometerRun:
    frames: list[SpectrumFrame]
    result: JobResult
    plan: PlacementPlan
    counters: dict[str, int]
    provenance: VexDocument
    graph: DataflowGraph
    notes: list[str] = field(default_factory=list)

    @property
    def balanced(self) -> bool:
        return not conservation_issues(self.counters)


def conservation_issues(c: dict[str, int]) -> list[str]:
    issues = []
    if c["samples_decoded"] != c["samples_chunked"] + c["dropped_samples"]:
        issues.append(f"samples decoded {c['samples_decoded']} != chunked {c['samples_chunked']} "
                      f"+ dropped {c['dropped_samples']}")
    if c["chunks"] * c["chunk_samples"] != c["samples_chunked"]:
        issues.append(f"{c['chunks']} chunks do not hold {c['samples_chunked']} samples")
    if c["chunks_integrated"] + c["chunks_discarded"] != c["chunks"]:
        issues.append(f"chunks integrated {c['chunks_integrated']} + discarded {c['chunks_discarded']} "
                      f"!= chunks {c['chunks']}")
    if c["errors"] or c["dropped_tuples"]:
        issues.append(f"{c['errors']} operator errors and {c['dropped_tuples']} dropped tuples")
    return issues


class _Interrupt:
    """Turns SIGINT into a graceful drain at the next chunk boundary."""

    def __init__(self):
        self.event = threading.Event()

    def __call__(self, controller: Controller) -> None:
        if self.event.is_set() and not controller.stopping:
            controller.stop(drain=True)


def run_spectrometer(cfg: RunConfig, *, deterministic: bool | None = None,
                     interrupt: threading.Event | None = None) -> SpectrometerRun:
    deterministic = cfg["engine.deterministic"] if deterministic is None else deterministic
    graph = build_spectrometer(cfg)
    plan = make_plan(graph, cfg)
    hooks = []
    control = ControlFile(cfg["integration.control-file"]) if cfg.get("integration.control-file") else None
    if control is not None:
        hooks.append(control)
    if interrupt is not None:
        stopper = _Interrupt()
        stopper.event = interrupt
        hooks.append(stopper)

    def hook(controller: Controller) -> None:
        for h in hooks:
            h(controller)

    if deterministic:
        try:
            result = run_deterministic(graph, control=hook)
        except JobFailedError as exc:
            raise SpectrometerError(str(exc), isinstance(exc.cause, (IngestError, OSError))) from exc
    else:
        job = run_concurrent(graph, plan, cfg["engine.queue-capacity"], control=hook)
        result = job.result()
    if result.state is JobState.FAILED:
        cause = getattr(result.error, "cause", result.error)
        raise SpectrometerError(result.diagnostic or str(cause), isinstance(cause, (IngestError, OSError)))

    stats = result.stats.operators
    strips = result.outputs.get(SINK_ID, [])
    integ = stats[INTEGRATE_ID].counters
    frames_per_chunk = cfg["ingest.frames-per-chunk"]
    frames = []
    for i, t in enumerate(strips):
        partial = bool(integ.get("partial_windows")) and i == len(strips) - 1
        frames.append(SpectrumFrame(t["psd"], int(t["n"]) * frames_per_chunk, float(cfg["station.sample-rate"]),
                                    cfg["ingest.fft-size"], partial))
    src = stats[SOURCE_ID].counters
    counters = {
        "bytes_read": int(src.get("bytes_read", 0)),
        "samples_decoded": int(src.get("samples_decoded", 0)),
        "samples_chunked": int(src.get("samples_chunked", 0)),
        "dropped_samples": int(src.get("dropped_samples", 0)),
        "chunks": int(src.get("chunks", 0)),
        "chunk_samples": cfg.chunk_samples,
        "chunks_integrated": sum(int(t["n"]) for t in strips),
        "chunks_discarded": int(integ.get("discarded_tuples", 0)),
        "spectra": len(frames),
        "partial_spectra": sum(f.partial for f in frames),
        "errors": sum(s.errors for s in stats.values()),
        "dropped_tuples": sum(s.dropped for s in stats.values()),
    }
    notes = [f"control {k}={v}" for k, v in control.applied] if control is not None else []
    doc = emit_provenance(cfg, capture=counters)
    return SpectrometerRun(frames, result, plan, counters, doc, graph, notes)
