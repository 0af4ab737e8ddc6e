"""Spectrum files.

Binary layout (little-endian), repeated once per spectrum strip::

    offset size  field
    0      4     magic b"PSD1"
    4      4     fft_size           uint32
    8      8     integration_count  uint64
    16     8     sample_rate        float64 (Hz)
    24     4     n_bins             uint32
    28     4     flags              uint32 (bit 0: partial integration)
    32     4*n   power              float32[n_bins]

CSV layout: a ``bin_index,frequency_hz,power`` header line, then for each
strip a ``# strip=<i> integration_count=<n> partial=<0|1>`` comment line
followed by one row per bin.  Floats are written with ``%.9g`` so float32
powers survive the round trip exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .spectra import SpectrumFrame

MAGIC = b"PSD1"
HEADER = struct.Struct("<4sIQdII")
FLAG_PARTIAL = 1
CSV_HEADER = "bin_index,frequency_hz,power"


class SpectrumFileError(ValueError):
    pass


def encode_binary(frames: Iterable[SpectrumFrame]) -> bytes:
    parts = []
    for f in frames:
        fft_size = f.fft_size or 2 * f.n_bins
        flags = FLAG_PARTIAL if f.partial else 0
        parts.append(HEADER.pack(MAGIC, fft_size, f.integration_count, float(f.sample_rate or 0.0), f.n_bins, flags))
        parts.append(f.psd.astype("<f4").tobytes())
    return b"".join(parts)


def decode_binary(data: bytes) -> list[SpectrumFrame]:
    out = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < HEADER.size:
            raise SpectrumFileError(f"truncated header at byte {pos}")
        magic, fft_size, count, rate, n_bins, flags = HEADER.unpack_from(data, pos)
        if magic != MAGIC:
            raise SpectrumFileError(f"bad magic {magic!r} at byte {pos}")
        pos += HEADER.size
        end = pos + 4 * n_bins
        if end > len(data):
            raise SpectrumFileError(f"truncated power vector at byte {pos}")
        psd = np.frombuffer(data, dtype="<f4", count=n_bins, offset=pos).astype(np.float32)
        out.append(SpectrumFrame(psd, int(count), rate or None, int(fft_size), bool(flags & FLAG_PARTIAL)))
        pos = end
    return out


def encode_csv(frames: Iterable[SpectrumFrame]) -> str:
    lines = [CSV_HEADER]
    for i, f in enumerate(frames):
        lines.append(f"# strip={i} integration_count={f.integration_count} partial={int(f.partial)}")
        freqs = f.frequencies()
        for k, (hz, p) in enumerate(zip(freqs, f.psd)):
            lines.append(f"{k},{hz:.9g},{float(p):.9g}")
    return "\n".join(lines) + "\n"


def decode_csv(text: str, sample_rate: float | None = None, fft_size: int | None = None) -> list[SpectrumFrame]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise SpectrumFileError(f"expected header {CSV_HEADER!r}")
    strips: list[tuple[dict, list[float]]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            meta = dict(tok.split("=", 1) for tok in line[1:].split())
            strips.append((meta, []))
            continue
        if not strips:
            strips.append(({}, []))
        try:
            strips[-1][1].append(float(line.split(",")[2]))
        except (IndexError, ValueError):
            raise SpectrumFileError(f"line {lineno}: malformed row {line!r}") from None
    return [
        SpectrumFrame(np.array(vals, dtype=np.float32), int(meta.get("integration_count", 1)),
                      sample_rate, fft_size, meta.get("partial") == "1")
        for meta, vals in strips
    ]


def write_spectrum(path: str | Path, frames: Iterable[SpectrumFrame], fmt: str = "csv") -> Path:
    path = Path(path)
    frames = list(frames)
    if fmt == "csv":
        path.write_text(encode_csv(frames))
    elif fmt == "bin":
        path.write_bytes(encode_binary(frames))
    else:
        raise ValueError(f"unknown spectrum format {fmt!r}; expected 'csv' or 'bin'")
    return path


def read_spectrum(path: str | Path, fmt: str | None = None) -> list[SpectrumFrame]:
    path = Path(path)
    data = path.read_bytes()
    if fmt is None:
        fmt = "bin" if data[:4] == MAGIC else "csv"
    if fmt == "bin":
        return decode_binary(data)
    return decode_csv(data.decode())
