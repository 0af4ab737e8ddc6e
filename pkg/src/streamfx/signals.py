"""Seeded synthetic antenna signals.

Every generator produces int16 sample values already quantised to the
target :class:`~streamfx.ingest.SampleFormat` range, streamed block by block
so arbitrarily long captures never have to sit in memory.  Generators are
deterministic functions of (kind, parameters, seed): reading the same
number of samples in any block pattern yields the same values.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .ingest import SampleFormat, decode_samples, encode_samples

SIGNAL_KINDS = ("tone+noise", "noise", "uniform", "delta", "recorded-replay")
_BATCH = 1 << 20


def default_sigma(fmt: SampleFormat) -> float:
    # keeps clipping negligible at 8+ bits while still exercising a few levels at 2 bits
    return max(0.5, fmt.half_range / 8.0) if fmt.bits >= 8 else max(0.5, fmt.half_range / 2.0)


def tone_amplitude(snr: float, sigma: float, fft_size: int) -> float:
    """Sine amplitude whose bin power is ``snr`` times the mean white-noise bin power.

    For an n-point unnormalised DFT the noise bin power is n*sigma^2 and a
    bin-centred tone of amplitude A contributes (A*n/2)^2.
    """
    return float(np.sqrt(4.0 * snr * sigma * sigma / fft_size))


class SignalGenerator:
    """Iterator over int16 sample blocks for one synthetic capture."""

    def __init__(self, kind: str, fmt: SampleFormat, n_samples: int, *, seed: int = 0,
                 fft_size: int = 8192, tone_bin: int | None = None, snr: float = 20.0,
                 sigma: float | None = None, amplitude: float | None = None, position: int = 0,
                 path: str | None = None, source_format: SampleFormat | None = None):
        if kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {kind!r}; expected one of {SIGNAL_KINDS}")
        if n_samples < 0:
            raise ValueError("sample count must be >= 0")
        self.kind = kind
        self.fmt = fmt
        self.n_samples = int(n_samples)
        self.seed = seed
        self.fft_size = fft_size
        self.sigma = default_sigma(fmt) if sigma is None else float(sigma)
        self.tone_bin = tone_bin
        self.snr = snr
        self.position = position
        self._rng = np.random.default_rng(seed)
        self._pos = 0
        self._buf = np.zeros(0, dtype=np.int16)
        self._buf_pos = 0
        self._phase = float(self._rng.uniform(0, 2 * np.pi))
        if kind == "tone+noise":
            if tone_bin is None or not 0 < tone_bin < fft_size // 2:
                raise ValueError(f"tone bin must be in (0, {fft_size // 2}), got {tone_bin!r}")
            self.amplitude = tone_amplitude(snr, self.sigma, fft_size) if amplitude is None else float(amplitude)
            k = (tone_bin * np.arange(fft_size)) % fft_size
            self._tone_period = (self.amplitude * np.cos(2 * np.pi * k / fft_size + self._phase)).astype(np.float32)
        else:
            self.amplitude = float(fmt.max_value if amplitude is None else amplitude)
        self._replay = None
        if kind == "recorded-replay":
            if path is None:
                raise ValueError("recorded-replay needs a path")
            src_fmt = source_format or fmt
            self._replay = decode_samples(Path(path).read_bytes(), src_fmt)
            if self.n_samples == 0:
                self.n_samples = self._replay.size

    @property
    def remaining(self) -> int:
        return self.n_samples - self._pos

    def read(self, n: int) -> np.ndarray:
        """Next ``n`` samples (fewer at the end of the capture)."""
        n = min(n, self.remaining)
        parts = []
        while n > 0:
            if self._buf_pos >= self._buf.size:
                self._buf = self._generate(self._pos, min(_BATCH, self.remaining))
                self._buf_pos = 0
            take = min(n, self._buf.size - self._buf_pos)
            parts.append(self._buf[self._buf_pos:self._buf_pos + take])
            self._buf_pos += take
            self._pos += take
            n -= take
        if not parts:
            return np.zeros(0, dtype=np.int16)
        return parts[0].copy() if len(parts) == 1 else np.concatenate(parts)

    def _generate(self, start: int, n: int) -> np.ndarray:
        # always called with whole batches so the RNG stream never depends on the caller's block size
        if self.kind == "uniform":
            x = self._rng.integers(self.fmt.min_value, self.fmt.max_value + 1, size=n, dtype=np.int16)
            return x
        if self.kind == "delta":
            x = np.zeros(n, dtype=np.int16)
            if start <= self.position < start + n:
                x[self.position - start] = int(np.clip(round(self.amplitude), self.fmt.min_value, self.fmt.max_value))
            return x
        if self.kind == "recorded-replay":
            idx = (start + np.arange(n)) % max(self._replay.size, 1)
            return self._replay[idx] if self._replay.size else np.zeros(n, dtype=np.int16)
        x = self._rng.standard_normal(n, dtype=np.float32) * np.float32(self.sigma)
        if self.kind == "tone+noise":
            # the tone repeats every fft_size samples: repeat one period starting at the right phase
            x += np.resize(np.roll(self._tone_period, -(start % self.fft_size)), n)
        np.rint(x, out=x)
        np.clip(x, self.fmt.min_value, self.fmt.max_value, out=x)
        return x.astype(np.int16)

    def blocks(self, block_samples: int = _BATCH) -> Iterator[np.ndarray]:
        while self.remaining > 0:
            yield self.read(block_samples)


def generate_signal(kind: str, n_samples: int, fmt: SampleFormat | None = None, *, seed: int = 0,
                    out: str | Path | None = None, **params: Any) -> np.ndarray | Path:
    """Generate a capture; write it bit-packed to ``out`` or return the samples.

    ``params`` are passed to :class:`SignalGenerator` (fft_size, tone_bin,
    snr, sigma, amplitude, position, path, source_format).
    """
    fmt = fmt or SampleFormat()
    gen = SignalGenerator(kind, fmt, n_samples, seed=seed, **params)
    if out is None:
        parts = list(gen.blocks())
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int16)
    path = Path(out)
    with open(path, "wb") as fh:
        for block in gen.blocks():
            fh.write(encode_samples(block, fmt))
    return path
