"""Throughput measurement of the spectrometer pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .config import RunConfig
from .dsp.fft import fft_flops
from .spectrometer import run_spectrometer

# published figures for the reference hardware; printed for context only
REFERENCE_GFLOPS = 30.0
REFERENCE_CHUNK_MS = 8.0


@dataclass
class BenchReport:
    mode: str
    fft_size: int
    frames_per_chunk: int
    workers: int
    chunks: int
    samples: int
    elapsed_s: float
    stage_us_per_chunk: dict[str, float]
    fft_busy_s: float

    @property
    def samples_per_s(self) -> float:
        return self.samples / self.elapsed_s if self.elapsed_s > 0 else 0.0

    @property
    def chunks_per_s(self) -> float:
        return self.chunks / self.elapsed_s if self.elapsed_s > 0 else 0.0

    @property
    def fft_mflops(self) -> float:
        flops = fft_flops(self.fft_size) * self.frames_per_chunk * self.chunks
        return flops / self.fft_busy_s / 1e6 if self.fft_busy_s > 0 else 0.0

    def render(self) -> str:
        lines = [
            f"mode={self.mode}" + (" (no concurrency)" if self.mode == "deterministic" else ""),
            f"geometry fft_size={self.fft_size} frames_per_chunk={self.frames_per_chunk} workers={self.workers}",
            f"samples_per_s={self.samples_per_s:.6g}",
            f"chunks_per_s={self.chunks_per_s:.6g}",
        ]
        for stage, us in self.stage_us_per_chunk.items():
            lines.append(f"stage={stage} us_per_chunk={us:.1f}")
        lines.append(f"fft_mflops={self.fft_mflops:.1f} (5 n log2 n flops per n-point FFT)")
        lines.append(f"reference, different hardware: {REFERENCE_GFLOPS:g} Gflops, "
                     f"{REFERENCE_CHUNK_MS:g} ms per 512x8192 chunk")
        return "\n".join(lines) + "\n"


_STAGES = (("ingest", ("Antenna",)), ("distribute", ("Distribute",)), ("fft", ("FFT_",)), ("psd", ("PSD_",)),
           ("integrate_chunk", ("IntegrateChunk_",)), ("merge", ("Merge",)), ("integrate", ("Integrate",)))


def _stage_of(op_id: str) -> str | None:
    for stage, prefixes in _STAGES:
        if any(op_id == p or (p.endswith("_") and op_id.startswith(p)) for p in prefixes):
            return stage
    return None


def bench(cfg: RunConfig, *, deterministic: bool | None = None) -> BenchReport:
    t0 = time.perf_counter()
    run = run_spectrometer(cfg, deterministic=deterministic)
    elapsed = time.perf_counter() - t0
    ops = run.result.stats.operators
    chunks = max(run.counters["chunks"], 1)
    busy: dict[str, float] = {}
    for op_id, s in ops.items():
        stage = _stage_of(op_id)
        if stage is not None:
            busy[stage] = busy.get(stage, 0.0) + s.busy_ns
    stage_us = {k: v / 1e3 / chunks for k, v in busy.items()}
    return BenchReport(run.result.stats.mode, cfg["ingest.fft-size"], cfg["ingest.frames-per-chunk"],
                       cfg["ingest.workers"], run.counters["chunks"], run.counters["samples_decoded"], elapsed,
                       stage_us, busy.get("fft", 0.0) / 1e9)
