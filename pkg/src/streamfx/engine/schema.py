"""Stream schemas and immutable tuples.

A :class:`Schema` is an ordered list of typed attributes.  Schemas compare
structurally: two schemas with different names but the same attribute names,
types and order are equal, so a stream declared as ``RawData`` can feed an
operator expecting any structurally identical schema.

List attributes are carried as read-only numpy arrays so tuples can be handed
between execution units without copying.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class SchemaError(ValueError):
    """A schema declaration or tuple does not conform to its schema."""


class AttrType(enum.Enum):
    INT16_LIST = "int16-list"
    INT32 = "int32"
    FLOAT32 = "float32"
    FLOAT32_LIST = "float32-list"
    FLOAT64 = "float64"
    STRING = "string"
    BOOLEAN = "boolean"

    @property
    def is_list(self) -> bool:
        return self in (AttrType.INT16_LIST, AttrType.FLOAT32_LIST)

    @property
    def is_numeric(self) -> bool:
        return self not in (AttrType.STRING, AttrType.BOOLEAN)

    @property
    def dtype(self) -> np.dtype | None:
        return _LIST_DTYPES.get(self)


_LIST_DTYPES = {
    AttrType.INT16_LIST: np.dtype(np.int16),
    AttrType.FLOAT32_LIST: np.dtype(np.float32),
}

_INT32_MIN, _INT32_MAX = -(2**31), 2**31 - 1
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_ATTR_SPEC = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*([a-z0-9-]+)\s*(?:\[\s*(\d+)\s*\])?\s*$")


@dataclass(frozen=True)
class Attribute:
    name: str
    type: AttrType
    length: int | None = None  # fixed element count for list attributes

    def __post_init__(self):
        if not _IDENT.match(self.name):
            raise SchemaError(f"invalid attribute name {self.name!r}")
        if self.length is not None:
            if not self.type.is_list:
                raise SchemaError(f"attribute {self.name!r}: only list attributes take a length")
            if self.length < 0:
                raise SchemaError(f"attribute {self.name!r}: negative list length")

    def __str__(self) -> str:
        if self.length is None:
            return f"{self.name}:{self.type.value}"
        return f"{self.name}:{self.type.value}[{self.length}]"

    @classmethod
    def parse(cls, text: str) -> "Attribute":
        """Parse ``"name:type"`` or ``"name:type[length]"``."""
        m = _ATTR_SPEC.match(text)
        if not m:
            raise SchemaError(f"cannot parse attribute declaration {text!r}")
        name, type_name, length = m.groups()
        try:
            attr_type = AttrType(type_name)
        except ValueError:
            raise SchemaError(f"unknown attribute type {type_name!r} in {text!r}") from None
        return cls(name, attr_type, None if length is None else int(length))


class Schema:
    """Named, ordered collection of attributes with structural equality."""

    __slots__ = ("name", "attributes", "_index")

    def __init__(self, name: str, attributes: Iterable[Attribute | str | tuple]):
        if not _IDENT.match(name):
            raise SchemaError(f"invalid schema name {name!r}")
        attrs = []
        for a in attributes:
            if isinstance(a, str):
                a = Attribute.parse(a)
            elif isinstance(a, tuple):
                a = Attribute(a[0], AttrType(a[1]), *a[2:])
            attrs.append(a)
        index = {}
        for i, a in enumerate(attrs):
            if a.name in index:
                raise SchemaError(f"schema {name!r}: duplicate attribute {a.name!r}")
            index[a.name] = i
        self.name = name
        self.attributes = tuple(attrs)
        self._index = index

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def __len__(self) -> int:
        return len(self.attributes)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"schema {self.name!r} has no attribute {name!r}") from None

    def attribute(self, name: str) -> Attribute:
        return self.attributes[self.index(name)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Schema):
            return NotImplemented
        return self.attributes == other.attributes

    def __hash__(self) -> int:
        return hash(self.attributes)

    def __repr__(self) -> str:
        return f"{self.name}({', '.join(str(a) for a in self.attributes)})"

    def rename(self, name: str) -> "Schema":
        return Schema(name, self.attributes)

    def extend(self, name: str, *extra: Attribute | str) -> "Schema":
        """New schema with this one's attributes followed by ``extra``
        (the ``schemaFor`` composition used by virtual streams)."""
        return Schema(name, self.attributes + tuple(extra))

    def make(self, *args: Any, **kwargs: Any) -> "Tuple":
        """Build a tuple from positional values, a mapping, or keywords."""
        if args and kwargs:
            raise SchemaError("pass values positionally or by keyword, not both")
        if len(args) == 1 and isinstance(args[0], Mapping):
            kwargs = dict(args[0])
            args = ()
        if kwargs:
            missing = [n for n in self.names if n not in kwargs]
            extra = [k for k in kwargs if k not in self._index]
            if missing or extra:
                raise SchemaError(
                    f"{self.name}: missing attributes {missing}, unexpected {extra}")
            args = tuple(kwargs[n] for n in self.names)
        return Tuple(self, args)


def _coerce(attr: Attribute, value: Any) -> Any:
    t = attr.type
    if t.is_list:
        arr = np.asarray(value)
        if arr.dtype != t.dtype:
            if arr.size and not np.can_cast(arr.dtype, t.dtype, casting="same_kind"):
                raise SchemaError(f"{attr.name}: cannot store {arr.dtype} in {t.value}")
            if t is AttrType.INT16_LIST and arr.size and arr.dtype.kind in "iu":
                if arr.min() < -32768 or arr.max() > 32767:
                    raise SchemaError(f"{attr.name}: value out of int16 range")
            arr = arr.astype(t.dtype)
        if arr.ndim != 1:
            raise SchemaError(f"{attr.name}: list attributes are one-dimensional, got shape {arr.shape}")
        if attr.length is not None and arr.shape[0] != attr.length:
            raise SchemaError(f"{attr.name}: expected {attr.length} elements, got {arr.shape[0]}")
        if arr.flags.writeable:
            arr.flags.writeable = False
        return arr
    if t is AttrType.INT32:
        if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, np.integer)):
            raise SchemaError(f"{attr.name}: expected int32, got {type(value).__name__}")
        value = int(value)
        if not _INT32_MIN <= value <= _INT32_MAX:
            raise SchemaError(f"{attr.name}: {value} out of int32 range")
        return value
    if t in (AttrType.FLOAT32, AttrType.FLOAT64):
        if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, float, np.integer, np.floating)):
            raise SchemaError(f"{attr.name}: expected {t.value}, got {type(value).__name__}")
        return float(np.float32(value)) if t is AttrType.FLOAT32 else float(value)
    if t is AttrType.STRING:
        if not isinstance(value, str):
            raise SchemaError(f"{attr.name}: expected string, got {type(value).__name__}")
        return value
    if not isinstance(value, (bool, np.bool_)):
        raise SchemaError(f"{attr.name}: expected boolean, got {type(value).__name__}")
    return bool(value)


class Tuple:
    """Immutable record flowing on a stream.

    A punctuation tuple is an in-band marker: it keeps its schema reference
    (possibly ``None``) but carries no attribute values.
    """

    __slots__ = ("schema", "values", "punct")

    def __init__(self, schema: Schema | None, values: Sequence[Any] = (), *, punct: bool = False):
        if punct:
            if len(values):
                raise SchemaError("a punctuation carries no attribute values")
            vals: tuple = ()
        else:
            if schema is None:
                raise SchemaError("data tuples need a schema")
            if len(values) != len(schema.attributes):
                raise SchemaError(
                    f"{schema.name}: expected {len(schema.attributes)} values, got {len(values)}")
            vals = tuple(_coerce(a, v) for a, v in zip(schema.attributes, values))
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "punct", punct)

    def __setattr__(self, key, value):
        raise AttributeError("tuples are immutable")

    @classmethod
    def punctuation(cls, schema: Schema | None = None) -> "Tuple":
        return cls(schema, (), punct=True)

    def __getitem__(self, name: str) -> Any:
        if self.punct:
            raise SchemaError("punctuation tuples have no attributes")
        return self.values[self.schema.index(name)]

    def get(self, name: str, default: Any = None) -> Any:
        if self.punct or name not in self.schema:
            return default
        return self.values[self.schema.index(name)]

    def as_dict(self) -> dict[str, Any]:
        if self.punct:
            return {}
        return dict(zip(self.schema.names, self.values))

    def replace(self, **changes: Any) -> "Tuple":
        d = self.as_dict()
        d.update(changes)
        return self.schema.make(d)

    @property
    def nbytes(self) -> int:
        """Approximate wire size, used for edge traffic statistics."""
        total = 0
        for v in self.values:
            if isinstance(v, np.ndarray):
                total += v.nbytes
            elif isinstance(v, str):
                total += len(v.encode())
            else:
                total += 8
        return total

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tuple):
            return NotImplemented
        if self.punct or other.punct:
            return self.punct == other.punct
        if self.schema != other.schema:
            return False
        for a, b in zip(self.values, other.values):
            if isinstance(a, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    def __hash__(self) -> int:
        if self.punct:
            return hash("punct")
        return hash(tuple(v.tobytes() if isinstance(v, np.ndarray) else v for v in self.values))

    def sort_key(self) -> tuple:
        """Total order over tuples of one schema, for multiset comparisons."""
        if self.punct:
            return (1,)
        return (0,) + tuple(v.tobytes() if isinstance(v, np.ndarray) else v for v in self.values)

    def __repr__(self) -> str:
        if self.punct:
            return "Tuple(<punct>)"
        parts = []
        for n, v in zip(self.schema.names, self.values):
            if isinstance(v, np.ndarray) and v.size > 6:
                parts.append(f"{n}=<{v.dtype}[{v.size}]>")
            else:
                parts.append(f"{n}={v!r}")
        return f"{self.schema.name}({', '.join(parts)})"


# The four virtual streams of the autocorrelation spectrometer.
RAW_DATA = Schema("RawData", ["data:int16-list"])
RAW_DATA_CHUNK = Schema("RawDataChunk", ["acceleratorID:int32"] + list(RAW_DATA.attributes))
CHANNEL_DATA = Schema("ChannelData", ["real:float32-list", "imag:float32-list"])
POWER_SPECTRUM_DATA = Schema("PowerSpectrumData", ["psd:float32-list"])
