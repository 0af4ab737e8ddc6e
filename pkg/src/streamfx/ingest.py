"""Sample decoding, raw-data sources and chunking.

Byte formats
------------
A :class:`SampleFormat` describes b-bit samples, b in {2, 4, 8, 16}:

* ``unsigned-offset`` maps a raw code u to ``u - 2**(b-1)``;
  ``twos-complement`` sign-extends.
* Sub-byte samples are packed most-significant-sample first, so the 2-bit
  byte ``0b00_01_10_11`` holds codes 0, 1, 2, 3 in order.
* 16-bit samples honour ``byte_order``; it is ignored for smaller widths.

Sources cut the byte stream into fixed ``block_size`` blocks (no framing or
length prefix) and emit one ``RawData`` tuple per block.  A short final
block is decoded when it is sample-aligned.
"""

from __future__ import annotations

import logging
import socket
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping

import numpy as np

from .engine.schema import RAW_DATA, RAW_DATA_CHUNK, Schema, Tuple

log = logging.getLogger(__name__)

DEFAULT_PORT = 9932
DEFAULT_BLOCK_SIZE = 8 * 1024
DEFAULT_FFT_SIZE = 8192
DEFAULT_FRAMES_PER_CHUNK = 512
ENCODINGS = ("unsigned-offset", "twos-complement")
BYTE_ORDERS = ("little", "big")


class IngestError(RuntimeError):
    """A source could not be opened or read."""


class SampleFormatError(IngestError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")


@dataclass(frozen=True)
class SampleFormat:
    bits: int = 8
    encoding: str = "unsigned-offset"
    byte_order: str = "little"

    def __post_init__(self):
        if self.bits not in (2, 4, 8, 16):
            raise SampleFormatError(f"bits per sample must be 2, 4, 8 or 16, got {self.bits!r}")
        if self.encoding not in ENCODINGS:
            raise SampleFormatError(f"encoding must be one of {ENCODINGS}, got {self.encoding!r}")
        if self.byte_order not in BYTE_ORDERS:
            raise SampleFormatError(f"byte order must be one of {BYTE_ORDERS}, got {self.byte_order!r}")

    @property
    def half_range(self) -> int:
        return 1 << (self.bits - 1)

    @property
    def min_value(self) -> int:
        return -self.half_range

    @property
    def max_value(self) -> int:
        return self.half_range - 1

    @property
    def samples_per_byte(self) -> int:
        return max(1, 8 // self.bits)

    @property
    def bytes_per_sample(self) -> int:
        return max(1, self.bits // 8)

    def n_samples(self, n_bytes: int) -> int:
        return n_bytes * 8 // self.bits

    def n_bytes(self, n_samples: int) -> int:
        return -(-n_samples * self.bits // 8)

    def aligned(self, n_bytes: int) -> bool:
        return n_bytes % self.bytes_per_sample == 0

    def label(self) -> str:
        bo = f"/{self.byte_order}" if self.bits == 16 else ""
        return f"{self.bits}-bit {self.encoding}{bo}"


def decode_samples(data: bytes | bytearray | memoryview | np.ndarray, fmt: SampleFormat,
                   *, offset: int = 0) -> np.ndarray:
    """Decode raw bytes into int16 samples.

    ``offset`` is the position of ``data`` within the whole stream and only
    affects error messages.
    """
    raw = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data.view(np.uint8).ravel()
    b = fmt.bits
    if b == 16:
        if raw.size % 2:
            raise SampleFormatError("trailing partial 16-bit sample", offset + raw.size - 1)
        dt = np.dtype(np.uint16 if fmt.encoding == "unsigned-offset" else np.int16).newbyteorder(
            "<" if fmt.byte_order == "little" else ">")
        words = raw.view(dt)
        if fmt.encoding == "unsigned-offset":
            return (words.astype(np.int32) - 32768).astype(np.int16)
        return words.astype(np.int16)
    if b == 8:
        if fmt.encoding == "unsigned-offset":
            out = raw.astype(np.int16)
            out -= 128
            return out
        return raw.view(np.int8).astype(np.int16)
    per = 8 // b
    shifts = np.arange(per - 1, -1, -1, dtype=np.uint8) * b
    codes = ((raw[:, None] >> shifts) & ((1 << b) - 1)).ravel().astype(np.int16)
    half = 1 << (b - 1)
    if fmt.encoding == "unsigned-offset":
        codes -= half
    else:
        codes[codes >= half] -= 1 << b
    return codes


def encode_samples(samples: np.ndarray | Iterable[int], fmt: SampleFormat) -> bytes:
    """Inverse of :func:`decode_samples`; samples must fit the format's range."""
    x = np.asarray(samples)
    if x.size == 0:
        return b""
    if x.dtype.kind not in "iu":
        raise SampleFormatError(f"samples must be integers, got {x.dtype}")
    x = x.astype(np.int32).ravel()
    lo, hi = x.min(), x.max()
    if lo < fmt.min_value or hi > fmt.max_value:
        raise SampleFormatError(f"sample out of range [{fmt.min_value}, {fmt.max_value}] for {fmt.label()}")
    b = fmt.bits
    codes = x + fmt.half_range if fmt.encoding == "unsigned-offset" else x & ((1 << b) - 1)
    if b == 16:
        dt = np.dtype(np.uint16).newbyteorder("<" if fmt.byte_order == "little" else ">")
        return codes.astype(dt).tobytes()
    if b == 8:
        return codes.astype(np.uint8).tobytes()
    per = 8 // b
    if x.size % per:
        raise SampleFormatError(f"{x.size} samples do not fill whole bytes at {b} bits per sample")
    shifts = np.arange(per - 1, -1, -1) * b
    packed = (codes.reshape(-1, per) << shifts).sum(axis=1)
    return packed.astype(np.uint8).tobytes()


# ---------------------------------------------------------------- raw sources

@dataclass
class SourceCounters:
    bytes_read: int = 0
    blocks: int = 0
    samples_decoded: int = 0
    disconnected: int = 0
    diagnostic: str = ""

    def as_dict(self) -> dict[str, int]:
        return {"bytes_read": self.bytes_read, "blocks": self.blocks,
                "samples_decoded": self.samples_decoded, "disconnected": self.disconnected}


class _BlockSource:
    """Shared framing: cut a byte stream into blocks and decode each one."""

    label = "source"

    def __init__(self, fmt: SampleFormat, block_size: int = DEFAULT_BLOCK_SIZE, start_offset: int = 0):
        if block_size <= 0 or not fmt.aligned(block_size):
            raise IngestError(f"block size {block_size} must be a positive multiple of {fmt.bytes_per_sample} bytes")
        if start_offset < 0:
            raise IngestError("start offset must be >= 0")
        self.fmt = fmt
        self.block_size = block_size
        self.start_offset = start_offset
        self.stats = SourceCounters()

    def _reader(self) -> Iterator[bytes]:  # pragma: no cover - abstract
        raise NotImplementedError

    def sample_blocks(self) -> Iterator[np.ndarray]:
        for block in self._reader():
            if not block:
                continue
            if len(block) < self.block_size and not self.fmt.aligned(len(block)):
                raise SampleFormatError("misaligned final block", self.start_offset + self.stats.bytes_read + len(block) - 1)
            samples = decode_samples(block, self.fmt, offset=self.start_offset + self.stats.bytes_read)
            self.stats.bytes_read += len(block)
            self.stats.blocks += 1
            self.stats.samples_decoded += samples.size
            yield samples

    def __iter__(self) -> Iterator[Tuple]:
        for samples in self.sample_blocks():
            yield Tuple(RAW_DATA, (samples,))

    def counters(self) -> dict[str, int]:
        return self.stats.as_dict()


class FileSource(_BlockSource):
    label = "file"

    def __init__(self, path: str | Path, fmt: SampleFormat, block_size: int = DEFAULT_BLOCK_SIZE,
                 start_offset: int = 0):
        super().__init__(fmt, block_size, start_offset)
        self.path = Path(path)
        if not self.path.is_file():
            raise IngestError(f"cannot read sample file {str(self.path)!r}")

    def _reader(self) -> Iterator[bytes]:
        try:
            fh = open(self.path, "rb")
        except OSError as exc:
            raise IngestError(f"cannot read sample file {str(self.path)!r}: {exc}") from None
        with fh:
            fh.seek(self.start_offset)
            while True:
                block = fh.read(self.block_size)
                if not block:
                    return
                yield block


class TcpSource(_BlockSource):
    """Raw TCP byte stream.

    ``listen=False`` connects to ``host:port``; ``listen=True`` binds there
    and serves the first client to connect.  A dropped connection ends the
    stream cleanly with ``disconnected = 1`` and a diagnostic.
    """

    label = "tcp"

    def __init__(self, host: str, port: int, fmt: SampleFormat, block_size: int = DEFAULT_BLOCK_SIZE,
                 *, listen: bool = False, timeout: float | None = 10.0, start_offset: int = 0):
        super().__init__(fmt, block_size, start_offset)
        self.host, self.port, self.listen, self.timeout = host, int(port), listen, timeout
        self._server: socket.socket | None = None
        if listen:
            try:
                self._server = socket.create_server((host, self.port))
            except OSError as exc:
                raise IngestError(f"cannot listen on {host}:{port}: {exc}") from None
            self.port = self._server.getsockname()[1]
            if timeout is not None:
                self._server.settimeout(timeout)

    def _connect(self) -> socket.socket:
        if self._server is not None:
            try:
                conn, _ = self._server.accept()
            except OSError as exc:
                raise IngestError(f"no client connected to {self.host}:{self.port}: {exc}") from None
            finally:
                self._server.close()
            conn.settimeout(self.timeout)
            return conn
        try:
            return socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise IngestError(f"cannot connect to tcp://{self.host}:{self.port}: {exc}") from None

    def _recv_block(self, conn: socket.socket) -> tuple[bytes, bool]:
        buf = bytearray()
        while len(buf) < self.block_size:
            try:
                piece = conn.recv(self.block_size - len(buf))
            except OSError as exc:
                self.stats.disconnected = 1
                self.stats.diagnostic = f"connection lost after {self.stats.bytes_read + len(buf)} bytes: {exc}"
                log.warning("%s", self.stats.diagnostic)
                return bytes(buf), True
            if not piece:
                return bytes(buf), True
            buf += piece
        return bytes(buf), False

    def _reader(self) -> Iterator[bytes]:
        conn = self._connect()
        with conn:
            skip = self.start_offset
            while skip > 0:
                piece = conn.recv(min(skip, 1 << 16))
                if not piece:
                    return
                skip -= len(piece)
            while True:
                block, eof = self._recv_block(conn)
                if block:
                    yield block
                if eof:
                    return


class SynthSource(_BlockSource):
    """Seeded synthetic capture, see :mod:`streamfx.signals`."""

    label = "synth"

    def __init__(self, generator, fmt: SampleFormat, block_size: int = DEFAULT_BLOCK_SIZE):
        super().__init__(fmt, block_size)
        self.generator = generator
        self._block_samples = fmt.n_samples(block_size)

    def sample_blocks(self) -> Iterator[np.ndarray]:
        while self.generator.remaining > 0:
            samples = self.generator.read(self._block_samples)
            self.stats.bytes_read += self.fmt.n_bytes(samples.size)
            self.stats.blocks += 1
            self.stats.samples_decoded += samples.size
            yield samples


def file_source(path: str | Path, fmt: SampleFormat, block_size: int = DEFAULT_BLOCK_SIZE) -> FileSource:
    return FileSource(path, fmt, block_size)


def tcp_source(endpoint: str, block_size: int = DEFAULT_BLOCK_SIZE, fmt: SampleFormat | None = None,
               **kw: Any) -> TcpSource:
    """``endpoint`` is ``host:port``, ``tcp://host:port`` or ``stcp://host:port`` (listen)."""
    listen = endpoint.startswith("stcp://")
    if "://" in endpoint:
        endpoint = endpoint.split("://", 1)[1]
    host, _, port = endpoint.rstrip("/").rpartition(":")
    if not host:
        host, port = port or "localhost", ""
    kw.setdefault("listen", listen)
    return TcpSource(_host(host), int(port) if port else DEFAULT_PORT, fmt or SampleFormat(), block_size, **kw)


def _host(h: str) -> str:
    # the original deployments name the local machine "thishost"
    return "localhost" if h in ("thishost", "") else h


# ---------------------------------------------------------------- chunking

@dataclass
class SampleChunk:
    worker_id: int
    samples: np.ndarray
    sequence: int
    meta: dict = field(default_factory=dict)

    def to_tuple(self, schema: Schema = RAW_DATA_CHUNK) -> Tuple:
        return schema.make(acceleratorID=self.worker_id, data=self.samples)


class Chunker:
    """Accumulate samples into fixed-size chunks routed round-robin over workers."""

    def __init__(self, fft_size: int = DEFAULT_FFT_SIZE, frames_per_chunk: int = DEFAULT_FRAMES_PER_CHUNK,
                 n_workers: int = 1, meta: Mapping[str, Any] | None = None):
        if fft_size <= 0 or frames_per_chunk <= 0 or n_workers <= 0:
            raise IngestError("fft size, frames per chunk and worker count must be positive")
        self.chunk_len = fft_size * frames_per_chunk
        self.n_workers = n_workers
        self.meta = dict(meta or {})
        self._buf = np.empty(self.chunk_len, dtype=np.int16)
        self._fill = 0
        self.sequence = 0
        self.samples_in = 0
        self.samples_chunked = 0
        self.dropped_samples = 0
        self.per_worker = [0] * n_workers

    def push(self, samples: np.ndarray) -> list[SampleChunk]:
        samples = np.asarray(samples, dtype=np.int16)
        self.samples_in += samples.size
        out = []
        pos = 0
        while pos < samples.size:
            take = min(self.chunk_len - self._fill, samples.size - pos)
            self._buf[self._fill:self._fill + take] = samples[pos:pos + take]
            self._fill += take
            pos += take
            if self._fill == self.chunk_len:
                out.append(self._emit())
        return out

    def _emit(self) -> SampleChunk:
        w = self.sequence % self.n_workers
        chunk = SampleChunk(w, self._buf, self.sequence, dict(self.meta))
        self._buf = np.empty(self.chunk_len, dtype=np.int16)
        self._fill = 0
        self.sequence += 1
        self.samples_chunked += self.chunk_len
        self.per_worker[w] += 1
        return chunk

    def finish(self) -> int:
        """Drop any partial chunk; returns the number of samples dropped."""
        dropped, self._fill = self._fill, 0
        self.dropped_samples += dropped
        if dropped:
            log.info("dropped %d trailing samples (partial chunk)", dropped)
        return dropped

    def counters(self) -> dict[str, int]:
        return {"samples_chunked": self.samples_chunked, "dropped_samples": self.dropped_samples,
                "chunks": self.sequence}


def chunk_and_route(blocks: Iterable[np.ndarray | Tuple], fft_size: int = DEFAULT_FFT_SIZE,
                    frames_per_chunk: int = DEFAULT_FRAMES_PER_CHUNK, n_workers: int = 1,
                    *, chunker: Chunker | None = None) -> Iterator[SampleChunk]:
    """Turn a stream of sample blocks (or RawData tuples) into :class:`SampleChunk`\\ s."""
    ch = chunker or Chunker(fft_size, frames_per_chunk, n_workers)
    for block in blocks:
        samples = block["data"] if isinstance(block, Tuple) else block
        yield from ch.push(samples)
    ch.finish()


class ChunkedSource:
    """RawDataChunk tuples from a block source; exposes combined counters."""

    def __init__(self, source: _BlockSource, chunker: Chunker, schema: Schema = RAW_DATA_CHUNK):
        self.source = source
        self.chunker = chunker
        self.schema = schema

    def __iter__(self) -> Iterator[Tuple]:
        for chunk in chunk_and_route(self.source.sample_blocks(), chunker=self.chunker):
            yield chunk.to_tuple(self.schema)

    def counters(self) -> dict[str, int]:
        return {**self.source.counters(), **self.chunker.counters()}


# ---------------------------------------------------------------- configuration

SOURCE_KEYS = {"source", "bits", "encoding", "byte-order", "block-size", "fft-size", "frames-per-chunk",
               "workers", "start-offset", "sample-rate", "timeout"}


def format_from_config(config: Mapping[str, Any]) -> SampleFormat:
    return SampleFormat(int(config.get("bits", 8)), config.get("encoding", "unsigned-offset"),
                        config.get("byte-order", "little"))


def open_block_source(uri: str, fmt: SampleFormat, block_size: int = DEFAULT_BLOCK_SIZE,
                      start_offset: int = 0, timeout: float | None = 10.0) -> _BlockSource:
    """Open ``file://path``, ``tcp://host:port``, ``stcp://host:port`` or ``synth://kind?...``."""
    scheme, _, rest = uri.partition("://")
    if not rest:
        scheme, rest = "file", uri
    if scheme == "file":
        return FileSource(rest, fmt, block_size, start_offset)
    if scheme in ("tcp", "stcp"):
        return tcp_source(uri, block_size, fmt, timeout=timeout, start_offset=start_offset)
    if scheme == "synth":
        return SynthSource(synth_generator(uri, fmt), fmt, block_size)
    raise IngestError(f"unsupported source scheme {scheme!r}; expected file, tcp, stcp or synth")


_SYNTH_PARAMS: dict[str, tuple[str, Callable]] = {
    "samples": ("n_samples", int), "seed": ("seed", int), "fft-size": ("fft_size", int),
    "bin": ("tone_bin", int), "snr": ("snr", float), "sigma": ("sigma", float),
    "amplitude": ("amplitude", float), "position": ("position", int), "path": ("path", str),
}


def synth_generator(uri: str, fmt: SampleFormat):
    """Build a signal generator from ``synth://<kind>?samples=N&seed=S&bin=K&snr=R...``."""
    from .signals import SignalGenerator

    parsed = urllib.parse.urlsplit(uri)
    kind = urllib.parse.unquote(parsed.netloc + parsed.path).strip("/")
    kw: dict[str, Any] = {}
    for key, values in urllib.parse.parse_qs(parsed.query, keep_blank_values=True).items():
        if key not in _SYNTH_PARAMS:
            raise IngestError(f"unknown synth parameter {key!r}; expected one of {sorted(_SYNTH_PARAMS)}")
        name, conv = _SYNTH_PARAMS[key]
        try:
            kw[name] = conv(values[-1])
        except ValueError:
            raise IngestError(f"synth parameter {key!r}: bad value {values[-1]!r}") from None
    n = kw.pop("n_samples", None)
    if n is None:
        raise IngestError("synth source needs samples=<count>")
    try:
        return SignalGenerator(kind, fmt, n, **kw)
    except ValueError as exc:
        raise IngestError(f"synth source: {exc}") from None


def chunk_source_from_config(config: Mapping[str, Any], schema: Schema) -> Callable[[], Any]:
    """Factory used by the engine's Source operator for ``source = <uri>``.

    Output schema ``RawData`` yields one tuple per block; ``RawDataChunk``
    (anything carrying an ``acceleratorID``) yields routed chunks.
    """
    try:
        fmt = format_from_config(config)
    except SampleFormatError as exc:
        raise IngestError(str(exc)) from None
    uri = config["source"]
    block_size = int(config.get("block-size", DEFAULT_BLOCK_SIZE))
    start = int(config.get("start-offset", 0))
    timeout = config.get("timeout", 10.0)
    chunked = "acceleratorID" in schema.names
    if not chunked and schema != RAW_DATA:
        raise IngestError(f"source output schema must be RawData or RawDataChunk, got {schema!r}")
    fft_size = int(config.get("fft-size", DEFAULT_FFT_SIZE))
    frames = int(config.get("frames-per-chunk", DEFAULT_FRAMES_PER_CHUNK))
    workers = int(config.get("workers", 1))
    if block_size <= 0 or not fmt.aligned(block_size):
        raise IngestError(f"block size {block_size} is not a whole number of {fmt.bits}-bit samples")
    if chunked and (fft_size <= 0 or frames <= 0 or workers <= 0):
        raise IngestError("fft-size, frames-per-chunk and workers must be positive")
    meta = {"sample_rate": config.get("sample-rate"), "bits": fmt.bits, "source": uri, "start_offset": start}

    def factory():
        src = open_block_source(uri, fmt, block_size, start, timeout)
        if not chunked:
            return src
        return ChunkedSource(src, Chunker(fft_size, frames, workers, meta), schema)

    return factory
