"""Spectrometer kernels registered with the engine by name.

* UserOp ``channelize``: RawDataChunk -> ChannelData.  Each chunk of
  ``frames x fft-size`` samples becomes ``frames x bins`` complex values,
  frames concatenated in time order.
* Functor ``psd``: ChannelData -> PowerSpectrumData, ``re^2 + im^2``.
* Functor ``integrate-chunk``: PowerSpectrumData of ``frames x bins`` ->
  PowerSpectrumData of ``bins``, the per-bin mean over the chunk's frames.
"""

from __future__ import annotations

import numpy as np

from .dsp.fft import fft_real
from .dsp.spectra import mean_frames, power
from .engine.operators import ConfigError, UserOperator, register_transform, register_user_operator
from .engine.schema import Tuple


def _param(params, *names, default=None):
    for n in names:
        if n in params:
            return params[n]
    return default


@register_user_operator("channelize")
class Channelize(UserOperator):
    def __init__(self, params, in_schema, out_schema):
        super().__init__(params, in_schema, out_schema)
        if "data" not in in_schema:
            raise ConfigError(f"channelize needs a 'data' list attribute, input is {in_schema!r}")
        if out_schema.names != ("real", "imag"):
            raise ConfigError(f"channelize outputs (real, imag), got {out_schema!r}")
        self.fft_size = int(_param(self.params, "fft-size", "fft_size", default=8192))
        self.window = _param(self.params, "window", default="rectangular")
        self.nyquist = bool(_param(self.params, "nyquist", default=False))
        self.precision = _param(self.params, "precision", default="single")
        try:
            fft_real(np.zeros(self.fft_size, dtype=np.float32), self.fft_size, 1, window=self.window,
                     precision=self.precision)
        except ValueError as exc:
            raise ConfigError(f"channelize: {exc}") from None
        self._data = in_schema.index("data")

    def process(self, t: Tuple, emit) -> None:
        z = fft_real(t.values[self._data], self.fft_size, precision=self.precision,
                     include_nyquist=self.nyquist, window=self.window)
        emit(Tuple(self.out_schema, (z.real.ravel(), z.imag.ravel())))


@register_transform("psd")
def _psd(params, in_schema, out_schema):
    if in_schema.names != ("real", "imag"):
        raise ConfigError(f"psd transform needs (real, imag) input, got {in_schema!r}")
    if len(out_schema.attributes) != 1 or not out_schema.attributes[0].type.is_list:
        raise ConfigError(f"psd transform emits one float list, got {out_schema!r}")

    def transform(t: Tuple):
        return Tuple(out_schema, (power(t.values[0], t.values[1]),))
    return transform


@register_transform("integrate-chunk")
def _integrate_chunk(params, in_schema, out_schema):
    bins = _param(params, "bins")
    frames = _param(params, "frames", "frames-per-chunk")
    if bins is None and frames is None:
        raise ConfigError("integrate-chunk needs 'bins' or 'frames'")
    if len(in_schema.attributes) != 1 or len(out_schema.attributes) != 1:
        raise ConfigError("integrate-chunk maps one float list to one float list")

    def transform(t: Tuple):
        psd = t.values[0]
        n_bins = int(bins) if bins is not None else psd.size // int(frames)
        n_frames = psd.size // n_bins if n_bins else 0
        if n_bins <= 0 or n_frames * n_bins != psd.size or (frames is not None and n_frames != int(frames)):
            raise ValueError(f"chunk of {psd.size} values is not {frames} frames x {bins} bins")
        return Tuple(out_schema, (mean_frames(psd.reshape(n_frames, n_bins)),))
    return transform
