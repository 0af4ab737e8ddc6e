"""Numerical kernels for the spectrometer."""

from .fft import MAX_REAL_FFT, MIN_REAL_FFT, fft, fft_flops, fft_real, is_power_of_two, window_coefficients
from .geometry import SPEED_OF_LIGHT, BaselineGeometry, baseline_count, geometric_delay
from .io import SpectrumFileError, read_spectrum, write_spectrum
from .spectra import (ChannelFrame, SpectrumFrame, autocorr, channelize, circular_xcorr, fx_psd,
                      instantaneous_psd, integrate_chunk, mean_frames, power, xcorr)

__all__ = [
    "MAX_REAL_FFT", "MIN_REAL_FFT", "fft", "fft_flops", "fft_real", "is_power_of_two", "window_coefficients",
    "SPEED_OF_LIGHT", "BaselineGeometry", "baseline_count", "geometric_delay",
    "SpectrumFileError", "read_spectrum", "write_spectrum",
    "ChannelFrame", "SpectrumFrame", "autocorr", "channelize", "circular_xcorr", "fx_psd",
    "instantaneous_psd", "integrate_chunk", "mean_frames", "power", "xcorr",
]
