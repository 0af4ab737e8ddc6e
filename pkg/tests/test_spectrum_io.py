import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from streamfx.dsp import SpectrumFrame
from streamfx.dsp.io import (CSV_HEADER, SpectrumFileError, decode_binary, decode_csv, encode_binary,
                             encode_csv, read_spectrum, write_spectrum)


def _frames():
    return [SpectrumFrame(np.array([0.0, 1.5, 2.25, 1e-7], np.float32), 512 * 523, 60e6, 8, False),
            SpectrumFrame(np.array([4.0, 0.0, 3.0, 1e9], np.float32), 512, 60e6, 8, True)]


def test_binary_header_layout():
    data = encode_binary(_frames()[:1])
    assert len(data) == 32 + 4 * 4
    magic, fft_size, count, rate, n_bins, flags = struct.unpack("<4sIQdII", data[:32])
    assert (magic, fft_size, count, rate, n_bins, flags) == (b"PSD1", 8, 512 * 523, 60e6, 4, 0)
    assert np.frombuffer(data[32:], "<f4").tolist() == [0.0, 1.5, 2.25, np.float32(1e-7)]


def test_binary_round_trip():
    back = decode_binary(encode_binary(_frames()))
    for a, b in zip(_frames(), back):
        assert np.array_equal(a.psd, b.psd)
        assert (a.integration_count, a.sample_rate, a.fft_size, a.partial) == \
               (b.integration_count, b.sample_rate, b.fft_size, b.partial)


def test_csv_layout_and_round_trip():
    text = encode_csv(_frames())
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[1] == "# strip=0 integration_count=267776 partial=0"
    assert lines[3] == f"1,{60e6 / 8:.9g},1.5"
    back = decode_csv(text)
    assert [f.partial for f in back] == [False, True]
    for a, b in zip(_frames(), back):
        assert np.array_equal(a.psd, b.psd)


@given(hnp.arrays(np.float32, st.integers(1, 64), elements=st.floats(0, 2.0 ** 100, width=32)))
def test_csv_is_lossless_for_float32(psd):
    back = decode_csv(encode_csv([SpectrumFrame(psd)]))[0]
    assert np.array_equal(back.psd, psd)


def test_corrupt_binary_rejected():
    data = bytearray(encode_binary(_frames()))
    with pytest.raises(SpectrumFileError):
        decode_binary(bytes(data[:40]))
    data[0:4] = b"XXXX"
    with pytest.raises(SpectrumFileError):
        decode_binary(bytes(data))
    with pytest.raises(SpectrumFileError):
        decode_csv("power\n1\n")


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_write_and_read(tmp_path, fmt):
    path = write_spectrum(tmp_path / f"s.{fmt}", _frames(), fmt)
    back = read_spectrum(path)
    assert len(back) == 2 and np.array_equal(back[1].psd, _frames()[1].psd)
    with pytest.raises(ValueError):
        write_spectrum(tmp_path / "x", _frames(), "png")
