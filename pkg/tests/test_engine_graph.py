from pathlib import Path

import numpy as np
import pytest

from streamfx.engine import (CHANNEL_DATA, POWER_SPECTRUM_DATA, RAW_DATA, RAW_DATA_CHUNK, GraphValidationError,
                             Pipeline, Schema, SchemaError, Tuple, build_graph, load_description)
from streamfx.engine.schema import Attribute, AttrType

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
X = Schema("X", ["x:int32"])


# ---------------------------------------------------------------- schemas and tuples

def test_reference_schemas_are_expressible():
    assert RAW_DATA.names == ("data",) and RAW_DATA.attribute("data").type is AttrType.INT16_LIST
    assert RAW_DATA_CHUNK.names == ("acceleratorID", "data")
    assert CHANNEL_DATA.names == ("real", "imag")
    assert POWER_SPECTRUM_DATA.attribute("psd").type is AttrType.FLOAT32_LIST


def test_schema_equality_is_structural():
    assert Schema("A", ["x:int32", "y:float64"]) == Schema("B", ["x:int32", "y:float64"])
    assert Schema("A", ["x:int32", "y:float64"]) != Schema("A", ["y:float64", "x:int32"])
    assert Schema("A", ["x:int32"]) != Schema("A", ["x:float64"])


def test_schema_rejects_duplicates_and_bad_types():
    with pytest.raises(SchemaError):
        Schema("A", ["x:int32", "x:float32"])
    with pytest.raises(SchemaError):
        Schema("A", ["x:complex"])
    with pytest.raises(SchemaError):
        Attribute("x", AttrType.INT32, 4)
    assert Attribute.parse("v:float32-list[0]").length == 0


def test_tuple_arity_and_types():
    s = Schema("S", ["n:int32", "v:float32-list", "ok:boolean", "name:string"])
    t = s.make(n=3, v=[1, 2], ok=True, name="a")
    assert t["v"].dtype == np.float32 and not t["v"].flags.writeable
    with pytest.raises(SchemaError):
        Tuple(s, [1, [1.0]])
    with pytest.raises(SchemaError):
        s.make(n="3", v=[1], ok=True, name="a")
    with pytest.raises(SchemaError):
        s.make(n=2 ** 40, v=[1], ok=True, name="a")
    with pytest.raises(AttributeError):
        t.values = ()


def test_fixed_length_list_checked():
    s = Schema("S", ["v:float32-list[4]"])
    s.make(v=np.zeros(4))
    with pytest.raises(SchemaError):
        s.make(v=np.zeros(3))


def test_punctuation_carries_no_values():
    p = Tuple.punctuation(X)
    assert p.punct and p.values == ()
    with pytest.raises(SchemaError):
        Tuple(X, [1], punct=True)


# ---------------------------------------------------------------- build_graph

def test_reference_pipeline_description():
    graph = build_graph(load_description(CONFIGS / "appendix_psd.toml"))
    kinds = sorted(n.kind for n in graph.nodes.values())
    assert len(graph.nodes) == 11
    assert kinds.count("UserOp") == 2 and kinds.count("Functor") == 4 and kinds.count("Split") == 1
    # the two integrate-chunk branches meet in a Barrier before the single-input Aggregate
    assert len(graph.edges) == 11
    assert graph.sources == ["Antenna"] and graph.sinks == ["Sink"]
    agg = next(n for n in graph.nodes.values() if n.kind == "Aggregate")
    assert agg.config["window"]["size"] == 523


def test_minimal_graph():
    g = Pipeline().stream("a", X).op("Source", "src", outputs="a").op("Sink", "sink", "a").build()
    assert len(g.nodes) == 2 and len(g.edges) == 1


def test_schema_mismatch_names_both_schemas():
    y = Schema("Y", ["y:float64"])
    p = (Pipeline().stream("a", X).stream("b", X)
         .op("Source", "src", outputs="a").op("Functor", "f", "a", "b")
         .op("Sink", "sink", "b", input_schema=y))
    with pytest.raises(GraphValidationError) as err:
        p.build()
    msg = str(err.value)
    assert "X(x:int32)" in msg and "Y(y:float64)" in msg
    assert err.value.issues[0].code == "schema-mismatch"


def test_cycle_detected():
    p = (Pipeline().stream("a", X).stream("b", X).stream("c", X).stream("d", X)
         .op("Source", "src", outputs="a")
         .op("Barrier", "m", ["a", "d"], "b", mode="interleave")
         .op("Functor", "f", "b", "c").op("Split", "s", "c", ["d", "e"], route="x")
         .stream("e", X).op("Sink", "sink", "e"))
    with pytest.raises(GraphValidationError) as err:
        p.build()
    assert any(i.code == "cycle" for i in err.value.issues)


def test_dangling_ports_and_unknown_kind():
    p = Pipeline().stream("a", X).stream("b", X).op("Source", "src", outputs="a").op("Sink", "sink", "zzz")
    with pytest.raises(GraphValidationError) as err:
        p.build()
    kinds = {i.code for i in err.value.issues}
    assert "dangling-port" in kinds
    p = Pipeline().stream("a", X).op("Source", "src", outputs="a").op("Teleport", "t", "a")
    with pytest.raises(GraphValidationError) as err:
        p.build()
    assert err.value.issues[0].code == "unknown-kind"


@pytest.mark.parametrize("kind,inputs,outputs", [
    ("Source", ["a"], ["b"]), ("Sink", ["a"], ["b"]), ("Barrier", ["a"], ["b"]),
    ("Join", ["a"], ["b"]), ("Split", ["a"], ["b"]), ("Functor", ["a", "a"], ["b"]),
])
def test_port_arity(kind, inputs, outputs):
    p = (Pipeline().stream("a", X).stream("b", X).op("Source", "src", outputs="a")
         .op(kind, "op", inputs, outputs).op("Sink", "sink", "b"))
    with pytest.raises(GraphValidationError) as err:
        p.build()
    assert any(i.code == "port-arity" for i in err.value.issues)


def test_operator_config_errors_surface_at_build():
    p = (Pipeline().stream("a", X).stream("b", X).op("Source", "src", outputs="a")
         .op("Aggregate", "agg", "a", "b", reducers={"x": "median(x)"}).op("Sink", "sink", "b"))
    with pytest.raises(GraphValidationError) as err:
        p.build()
    assert err.value.issues[0].code == "config" and "median" in str(err.value)


def test_spectrometer_config_validates():
    from streamfx.config import load_config
    from streamfx.spectrometer import build_spectrometer
    g = build_spectrometer(load_config(CONFIGS / "spectrometer.toml"))
    assert [n for n in g.order if n.startswith("FFT_")] == ["FFT_0", "FFT_1"]
