"""Batched iterative radix-2 FFT.

The complex kernel is a decimation-in-time transform over the rows of a 2-D
array: bit-reversal permutation followed by log2(n) butterfly passes using a
precomputed twiddle table.  Real input of length n is packed into n/2
complex values (even samples real, odd samples imaginary), transformed, and
separated back into the first n/2 bins of the real signal's spectrum.

The kernels are compiled with numba when it is available; otherwise an
equivalent vectorised numpy implementation runs the same passes.  Both are
unnormalised forward transforms with bin 0 = DC.
"""

from __future__ import annotations

import functools

import numpy as np

MIN_REAL_FFT = 8
MAX_REAL_FFT = 8192

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

_PRECISION = {"single": (np.float32, np.complex64), "double": (np.float64, np.complex128)}


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


@functools.lru_cache(maxsize=None)
def bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.flags.writeable = False
    return rev


@functools.lru_cache(maxsize=None)
def _twiddles(n: int, dtype: str) -> np.ndarray:
    # exp(-2*pi*i*k/n) for k < n/2, evaluated in float64 before narrowing
    w = np.exp(-2j * np.pi * np.arange(max(n // 2, 1)) / n).astype(dtype)
    w.flags.writeable = False
    return w


@functools.lru_cache(maxsize=None)
def _unpack_twiddles(n: int, dtype: str) -> np.ndarray:
    w = np.exp(-2j * np.pi * np.arange(n // 2 + 1) / n).astype(dtype)
    w.flags.writeable = False
    return w


def _fft_rows_numpy(x: np.ndarray, rev: np.ndarray, tw: np.ndarray) -> None:
    b, n = x.shape
    x[:] = x[:, rev]
    m, step = 1, n // 2
    while m < n:
        w = tw[::step][:m]
        v = x.reshape(b, n // (2 * m), 2, m)
        t = v[:, :, 1, :] * w
        e = v[:, :, 0, :].copy()
        np.add(e, t, out=v[:, :, 0, :])
        np.subtract(e, t, out=v[:, :, 1, :])
        m *= 2
        step //= 2


def _unpack_numpy(z: np.ndarray, w: np.ndarray, out: np.ndarray) -> None:
    b, h = z.shape
    nbins = out.shape[1]
    k = np.arange(nbins)
    a = z[:, k % h]
    c = np.conj(z[:, (h - k) % h])
    out[:] = 0.5 * (a + c) - 0.5j * (a - c) * w[:nbins]


if numba is not None:
    @numba.njit(cache=True, nogil=True)
    def _fft_rows(x, rev, tw):  # pragma: no cover - compiled
        b, n = x.shape
        for f in range(b):
            row = x[f]
            for i in range(n):
                j = rev[i]
                if j > i:
                    tmp = row[i]
                    row[i] = row[j]
                    row[j] = tmp
            m = 1
            step = n // 2
            while m < n:
                for start in range(0, n, 2 * m):
                    for k in range(m):
                        w = tw[k * step]
                        a = row[start + k]
                        t = row[start + k + m] * w
                        row[start + k] = a + t
                        row[start + k + m] = a - t
                m *= 2
                step //= 2

    @numba.njit(cache=True, nogil=True)
    def _unpack(z, w, out):  # pragma: no cover - compiled
        b, h = z.shape
        nbins = out.shape[1]
        for f in range(b):
            for k in range(nbins):
                a = z[f, k % h]
                c = z[f, (h - k) % h].conjugate()
                out[f, k] = 0.5 * (a + c) - 0.5j * (a - c) * w[k]
else:  # pragma: no cover
    _fft_rows = _fft_rows_numpy
    _unpack = _unpack_numpy


def _dtypes(precision: str):
    try:
        return _PRECISION[precision]
    except KeyError:
        raise ValueError(f"precision must be 'single' or 'double', got {precision!r}") from None


def fft(x: np.ndarray, precision: str = "double", *, backend: str = "auto") -> np.ndarray:
    """Unnormalised forward DFT of each row of ``x`` (length a power of two)."""
    _, cdtype = _dtypes(precision)
    arr = np.array(x, dtype=cdtype, copy=True, ndmin=1)
    squeeze = arr.ndim == 1
    arr = arr.reshape(-1, arr.shape[-1]) if not squeeze else arr[None, :]
    n = arr.shape[1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    if n > 1:
        kernel = _fft_rows_numpy if backend == "numpy" else _fft_rows
        kernel(arr, bit_reversal(n), _twiddles(n, np.dtype(cdtype).name))
    return arr[0] if squeeze else arr


def fft_real(batch: np.ndarray, fft_size: int, frames: int | None = None, *, precision: str = "single",
             include_nyquist: bool = False, window: str | np.ndarray | None = None,
             backend: str = "auto") -> np.ndarray:
    """Channelise ``frames`` consecutive real frames of ``fft_size`` samples.

    Returns a complex array of shape ``(frames, fft_size // 2)`` holding bins
    0 .. fft_size/2 - 1 of each frame's unnormalised DFT; with
    ``include_nyquist`` the Nyquist bin is appended.
    """
    if not is_power_of_two(fft_size) or not MIN_REAL_FFT <= fft_size <= MAX_REAL_FFT:
        raise ValueError(f"fft size must be a power of two in [{MIN_REAL_FFT}, {MAX_REAL_FFT}], got {fft_size}")
    fdtype, cdtype = _dtypes(precision)
    data = np.asarray(batch)
    if frames is None:
        frames, rem = divmod(data.size, fft_size)
        if rem:
            raise ValueError(f"batch length {data.size} is not a multiple of fft size {fft_size}")
    if data.size != fft_size * frames:
        raise ValueError(f"batch length {data.size} != fft size {fft_size} x frames {frames}")
    x = data.reshape(frames, fft_size).astype(fdtype, copy=False)
    if window is not None:
        x = x * window_coefficients(window, fft_size, fdtype)
    h = fft_size // 2
    z = np.empty((frames, h), dtype=cdtype)
    z.real = x[:, 0::2]
    z.imag = x[:, 1::2]
    numpy_path = backend == "numpy"
    (_fft_rows_numpy if numpy_path else _fft_rows)(z, bit_reversal(h), _twiddles(h, np.dtype(cdtype).name))
    out = np.empty((frames, h + 1 if include_nyquist else h), dtype=cdtype)
    (_unpack_numpy if numpy_path else _unpack)(z, _unpack_twiddles(fft_size, np.dtype(cdtype).name), out)
    return out


def window_coefficients(window: str | np.ndarray, n: int, dtype=np.float64) -> np.ndarray:
    if isinstance(window, np.ndarray):
        if window.shape != (n,):
            raise ValueError(f"window must have shape ({n},)")
        return window.astype(dtype)
    if window in ("rectangular", "none", None):
        return np.ones(n, dtype=dtype)
    if window == "hann":
        return (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)).astype(dtype)
    raise ValueError(f"unknown window {window!r}; expected 'rectangular' or 'hann'")


def fft_flops(fft_size: int) -> float:
    """Flop count convention for one n-point FFT: 5 n log2 n."""
    return 5.0 * fft_size * np.log2(fft_size)
