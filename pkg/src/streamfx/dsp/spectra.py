"""Channel frames, power spectra and integration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fft import fft_real


@dataclass(frozen=True)
class ChannelFrame:
    """Complex channelised frame held as separate float32 real/imag vectors."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.real, dtype=np.float32)
        im = np.asarray(self.imag, dtype=np.float32)
        if re.shape != im.shape or re.ndim != 1:
            raise ValueError(f"real/imag must be 1-D of equal length, got {re.shape} and {im.shape}")
        if not (np.isfinite(re).all() and np.isfinite(im).all()):
            raise ValueError("channel frame contains non-finite values")
        object.__setattr__(self, "real", re)
        object.__setattr__(self, "imag", im)

    @property
    def n_bins(self) -> int:
        return self.real.size

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ChannelFrame":
        z = np.asarray(z)
        return cls(z.real, z.imag)

    def to_complex(self) -> np.ndarray:
        return self.real.astype(np.complex64) + 1j * self.imag


@dataclass(frozen=True)
class SpectrumFrame:
    psd: np.ndarray
    integration_count: int = 1
    sample_rate: float | None = None
    fft_size: int | None = None
    partial: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p = np.asarray(self.psd, dtype=np.float32)
        if p.ndim != 1:
            raise ValueError("psd must be 1-D")
        if (p < 0).any() or not np.isfinite(p).all():
            raise ValueError("psd values must be finite and >= 0")
        if self.integration_count < 1:
            raise ValueError("integration count must be >= 1")
        object.__setattr__(self, "psd", p)

    @property
    def n_bins(self) -> int:
        return self.psd.size

    @property
    def bin_width(self) -> float | None:
        if self.sample_rate is None:
            return None
        n = self.fft_size if self.fft_size else 2 * self.n_bins
        return self.sample_rate / n

    def frequencies(self) -> np.ndarray:
        width = self.bin_width
        return np.arange(self.n_bins) * (width if width is not None else 1.0)


def channelize(samples: np.ndarray, fft_size: int, frames: int | None = None, **kw) -> list[ChannelFrame]:
    z = fft_real(samples, fft_size, frames, **kw)
    return [ChannelFrame.from_complex(row) for row in z]


def instantaneous_psd(frame: ChannelFrame | np.ndarray) -> SpectrumFrame:
    """Per-bin power ``re^2 + im^2`` of one channel frame."""
    if isinstance(frame, ChannelFrame):
        re, im = frame.real, frame.imag
    else:
        z = np.asarray(frame)
        re, im = z.real.astype(np.float32), z.imag.astype(np.float32)
    return SpectrumFrame(re * re + im * im)


def power(real: np.ndarray, imag: np.ndarray) -> np.ndarray:
    """Batched squared magnitude in float32."""
    re = np.asarray(real, dtype=np.float32)
    im = np.asarray(imag, dtype=np.float32)
    return re * re + im * im


def mean_frames(psd: np.ndarray) -> np.ndarray:
    """Mean over axis 0, accumulated sequentially in float64 and narrowed to float32."""
    block = np.asarray(psd)
    acc = np.zeros(block.shape[1:], dtype=np.float64)
    for row in block:
        acc += row
    return (acc / block.shape[0]).astype(np.float32)


def integrate_chunk(frames, frames_per_chunk: int) -> SpectrumFrame:
    """Element-wise mean of ``frames_per_chunk`` instantaneous spectra."""
    if isinstance(frames, np.ndarray) and frames.ndim == 2:
        block = frames
    else:
        rows = [f.psd if isinstance(f, SpectrumFrame) else np.asarray(f) for f in frames]
        if not rows:
            raise ValueError("no frames to integrate")
        block = np.stack(rows)
    if block.shape[0] != frames_per_chunk:
        raise ValueError(f"expected {frames_per_chunk} frames, got {block.shape[0]}")
    return SpectrumFrame(mean_frames(block), integration_count=frames_per_chunk)


def fx_psd(x: np.ndarray, precision: str = "double") -> np.ndarray:
    """Full n-bin |DFT|^2 of one real frame (FX path, no truncation)."""
    from .fft import fft
    spec = fft(np.asarray(x, dtype=np.float64 if precision == "double" else np.float32), precision)
    return (spec * np.conj(spec)).real


def xcorr(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    """Linear cross-correlation ``r[tau] = sum_t a[t] b[t + tau]`` for |tau| <= max_lag.

    Out-of-range samples count as zero.  Index 0 of the result is lag -max_lag.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = min(a.size, b.size)
    if max_lag < 0 or max_lag >= n:
        raise ValueError(f"max_lag must be in [0, {n - 1}], got {max_lag}")
    out = np.empty(2 * max_lag + 1)
    for i, tau in enumerate(range(-max_lag, max_lag + 1)):
        if tau >= 0:
            m = min(a.size, b.size - tau)
            out[i] = a[:m] @ b[tau:tau + m]
        else:
            m = min(a.size + tau, b.size)
            out[i] = a[-tau:-tau + m] @ b[:m]
    return out


def circular_xcorr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Circular cross-correlation ``r[tau] = sum_t a[t] b[(t + tau) mod n]`` for tau in [0, n)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("circular correlation needs equal-length 1-D signals")
    return np.array([a @ np.roll(b, -tau) for tau in range(a.size)])


def autocorr(a: np.ndarray, max_lag: int) -> np.ndarray:
    return xcorr(a, a, max_lag)
