"""Random valid run configurations for provenance properties."""

import random
import string

from streamfx.config import resolve_config
from streamfx.provenance import Def, Statement, VexBlock, VexDocument


def _sample_string(rng: random.Random) -> str:
    alphabet = string.ascii_letters + string.digits + ' _-:;*"\\=$.,/\t\n'
    return "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 20)))


def random_config(seed: int):
    rng = random.Random(seed)
    raw = {
        "experiment": {"name": _sample_string(rng)},
        "station": {"sample-rate": rng.choice([60e6, 32e6, 1e3 * rng.randrange(1, 10 ** 6)])},
        "ingest": {
            "source": rng.choice(["file://", "tcp://h:1/", "synth://noise?samples="]) + _sample_string(rng),
            "bits": rng.choice([2, 4, 8, 16]),
            "encoding": rng.choice(["unsigned-offset", "twos-complement"]),
            "byte-order": rng.choice(["little", "big"]),
            "block-size": 2 * rng.randrange(1, 10000),
            "fft-size": 2 ** rng.randrange(3, 14),
            "frames-per-chunk": rng.randrange(1, 1000),
            "workers": rng.randrange(1, 9),
            "start-offset": rng.randrange(0, 1 << 40),
        },
        "dsp": {"window": rng.choice(["rectangular", "hann"]), "nyquist": rng.random() < 0.5},
        "integration": {"count": rng.randrange(1, 2000)},
    }
    if rng.random() < 0.7:
        raw["experiment"]["date"] = _sample_string(rng)
    if rng.random() < 0.5:
        raw["experiment"]["description"] = _sample_string(rng)
    if rng.random() < 0.7:
        raw["station"]["target"] = _sample_string(rng)
    if rng.random() < 0.5:
        raw["observation"] = {"start": _sample_string(rng), "duration": rng.uniform(0.01, 1e5)}
    return resolve_config(raw)


def mutate_document(doc: VexDocument, location: tuple[str, str, str]) -> VexDocument:
    """Copy of ``doc`` with the first value of one statement altered."""
    block, def_name, key = location
    blocks = []
    for b in doc.blocks:
        if b.name == block:
            items = []
            for d in b.items:
                if isinstance(d, Def) and d.name == def_name:
                    d = Def(d.name, [Statement(s.key, (s.value + "1",) + s.values[1:]) if s.key == key else s
                                     for s in d.items])
                items.append(d)
            b = VexBlock(b.name, items)
        blocks.append(b)
    return VexDocument(doc.version, blocks)


_SWAP = {"unsigned-offset": "twos-complement", "twos-complement": "unsigned-offset", "little": "big",
         "big": "little", "rectangular": "hann", "hann": "rectangular"}


def mutate_config(cfg, key: str):
    """Copy of ``cfg`` with one recorded field changed to another valid value."""
    other = cfg.copy()
    section, k = key.split(".", 1)
    value = cfg[key]
    if key == "ingest.fft-size":
        value = 8 if value != 8 else 16
    elif key == "ingest.bits":
        value = {2: 4, 4: 8, 8: 16, 16: 2}[value]  # block sizes are even, so 16 bits stays valid
    elif isinstance(value, str) and value in _SWAP:
        value = _SWAP[value]
    elif isinstance(value, bool):
        value = not value
    elif isinstance(value, int):
        value += 1
    elif isinstance(value, float):
        value = value * 2 + 1
    else:
        value += "x"
    other.values[section][k] = value
    return other
