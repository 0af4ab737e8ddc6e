import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from configgen import mutate_config, mutate_document, random_config
from streamfx.config import loads_config
from streamfx.provenance import (FIELDS, REQUIRED_BLOCKS, Def, Statement, VexBlock, VexDocument, VexSyntaxError,
                                 config_hash, dumps, emit_provenance, fnv1a64, lint_vex, parse_vex,
                                 verify_provenance)

MINIMAL = """
[experiment]
name = "x"
[ingest]
source = "file://capture.bin"
"""

MARS = """
[experiment]
name = "mex-8420"
date = "2009-12-02"
[station]
antenna = "ANT1"
target = "MEX"
sample-rate = 60e6
[observation]
start = "2009y336d12h00m00s"
[ingest]
source = "file://mex.bin"
bits = 8
"""


# ---------------------------------------------------------------- emit

def test_station_records_digitisation_and_rate():
    doc = emit_provenance(loads_config(MARS))
    assert doc.lookup("STATION", "ANTENNA", "bits_per_sample").value == "8"
    assert doc.lookup("STATION", "ANTENNA", "sample_rate").values == ("60000000.0", "Hz")
    assert float(doc.lookup("STATION", "ANTENNA", "sample_rate").value) == 60e6
    assert doc.lookup("GLOBAL", "EXPER", "exper_name").value == "mex-8420"
    assert doc.lookup("SCHED", "SCAN_1", "start").value == "2009y336d12h00m00s"


def test_minimal_config_has_exactly_required_blocks():
    doc = emit_provenance(loads_config(MINIMAL))
    assert doc.block_names == list(REQUIRED_BLOCKS) == ["GLOBAL", "STATION", "MODE", "SCHED", "PROCESSING"]
    assert lint_vex(doc.dumps()) == []
    assert doc.dumps().startswith("VEX_rev = 1.5;\n")


def test_processing_block_contents():
    doc = emit_provenance(loads_config(MINIMAL))
    pipe = doc.block("PROCESSING").get_def("PIPELINE")
    for key in ("fft_size", "frames_per_chunk", "aggregation_count", "window", "software", "config_hash"):
        assert pipe.get(key) is not None, key
    assert pipe.get("aggregation_count").value == "523"
    assert pipe.get("config_hash").values[0] == "fnv1a64"
    assert "non-standard extension" in doc.dumps()


def test_fft_size_change_touches_only_processing():
    a = loads_config(MINIMAL)
    b = a.copy()
    b.set("ingest.fft-size", 1024)
    da, db = emit_provenance(a), emit_provenance(b)
    for name in REQUIRED_BLOCKS:
        if name != "PROCESSING":
            assert da.block(name) == db.block(name)
    pa, pb = da.block("PROCESSING").get_def("PIPELINE"), db.block("PROCESSING").get_def("PIPELINE")
    changed = {x.key for x, y in zip(pa.items, pb.items) if x != y}
    assert changed == {"fft_size", "config_hash"}


def test_missing_required_field():
    from streamfx.provenance import ProvenanceError
    with pytest.raises(ProvenanceError, match="experiment.name"):
        emit_provenance({"ingest": {"source": "x"}})


def test_capture_counters_and_derived_duration():
    cfg = loads_config(MINIMAL)
    doc = emit_provenance(cfg, capture={"samples_decoded": 120_000_000, "chunks": 3})
    assert doc.lookup("SCHED", "SCAN_1", "duration").values == ("2.0", "sec", "derived")
    assert doc.lookup("PROCESSING", "CAPTURE", "chunks").value == "3"
    report = verify_provenance(doc, cfg)
    assert report.ok, report.render()
    assert report.informational["observation.duration"].startswith("2.0")


def test_emission_is_deterministic():
    for seed in range(20):
        assert emit_provenance(random_config(seed)).dumps() == emit_provenance(random_config(seed)).dumps()


def test_output_section_not_hashed():
    a = loads_config(MINIMAL)
    b = a.copy()
    b.set("output.spectrum", "/elsewhere.csv")
    assert emit_provenance(a).dumps() == emit_provenance(b).dumps()


def test_fnv1a_vectors():
    # published FNV-1a 64-bit test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8
    assert config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})


# ---------------------------------------------------------------- parse

def test_version_only_document():
    doc = parse_vex("VEX_rev = 1.5;\n")
    assert doc.version == "1.5" and doc.blocks == ()


def test_unmatched_def_names_line():
    text = "VEX_rev = 1.5;\n$GLOBAL;\n  def EXPER;\n    exper_name = x;\n"
    with pytest.raises(VexSyntaxError) as err:
        parse_vex(text)
    assert err.value.line == 3 and "line 3" in str(err.value)
    with pytest.raises(VexSyntaxError) as err:
        parse_vex("VEX_rev = 1.5;\n$GLOBAL;\n\nenddef;\n")
    assert err.value.line == 4
    with pytest.raises(VexSyntaxError) as err:
        parse_vex("VEX_rev = 1.5;\n$A;\ndef X;\n$B;\n")
    assert err.value.line == 4


def test_missing_version_line():
    with pytest.raises(VexSyntaxError) as err:
        parse_vex("* comment\n$GLOBAL;\n")
    assert err.value.line == 2
    with pytest.raises(VexSyntaxError):
        parse_vex("")


def test_statement_outside_block():
    with pytest.raises(VexSyntaxError) as err:
        parse_vex("VEX_rev = 1.5;\nkey = v;\n$GLOBAL;\n")
    assert err.value.line == 2


def test_unknown_block_preserved():
    text = ("VEX_rev = 1.5;\n$GLOBAL;\n$EOP;\n  def EOP1;\n    TAI-UTC = 34 sec;\n    x = a : \"b c\" : ;\n"
            "  enddef;\n  loose = 1;\n")
    doc = parse_vex(text)
    assert doc.block_names == ["GLOBAL", "EOP"]
    eop = doc.block("EOP")
    assert eop.get_def("EOP1").get("TAI-UTC").values == ("34 sec",)
    assert eop.get_def("EOP1").get("x").values == ("a", "b c", "")
    assert eop.items[-1] == Statement("loose", ("1",))
    assert parse_vex(dumps(doc)) == doc


def test_comments_and_multiline_statements():
    text = 'VEX_rev = 1.5; * trailing\n$G; * c\n  k = "a*b;c" :\n    d;\n* all comment\n'
    doc = parse_vex(text)
    assert doc.block("G").items == (Statement("k", ("a*b;c", "d")),)


def test_nested_defs_round_trip():
    doc = VexDocument("1.5", [VexBlock("X", [Def("A", [Def("B", [Statement("k", ["v"])]), Statement("z", ["1"])])])])
    assert parse_vex(doc.dumps()) == doc


@pytest.mark.parametrize("seed", range(200))
def test_parse_emit_identity(seed):
    doc = emit_provenance(random_config(seed), capture={"samples_decoded": seed * 1000, "chunks": seed})
    assert parse_vex(doc.dumps()) == doc
    assert lint_vex(doc.dumps()) == []


@given(st.lists(st.text(st.characters(blacklist_categories=("Cs",)), max_size=12),
                min_size=1, max_size=4))
@settings(max_examples=200)
def test_arbitrary_values_round_trip(values):
    doc = VexDocument("1.5", [VexBlock("B", [Statement("k", values)])])
    assert parse_vex(doc.dumps()) == doc


# ---------------------------------------------------------------- verify

def test_verify_same_config_all_match():
    cfg = loads_config(MARS)
    report = verify_provenance(emit_provenance(cfg).dumps(), cfg)
    assert report.ok and not report.mismatches
    assert "result: all fields match" in report.render()


def test_verify_altered_fft_size():
    cfg = loads_config(MARS)
    doc = emit_provenance(cfg)
    other = cfg.copy()
    other.set("ingest.fft-size", 4096)
    report = verify_provenance(doc, other)
    assert report.mismatched_fields == ["ingest.fft-size"]
    assert not report.hash_ok


def test_verify_corrupted_hash():
    cfg = loads_config(MARS)
    text = emit_provenance(cfg).dumps()
    h = config_hash(cfg.hashed())
    bad = text.replace(h, ("0" if h[0] != "0" else "1") + h[1:])
    report = verify_provenance(bad, cfg)
    assert report.mismatches == [] and not report.hash_ok and not report.ok
    assert "MISMATCH config_hash" in report.render()


@pytest.mark.parametrize("seed", range(50))
def test_single_field_mutation_is_flagged_exactly(seed):
    rng = random.Random(seed)
    cfg = random_config(seed)
    doc = emit_provenance(cfg)
    f = rng.choice([f for f in FIELDS if cfg.get(f.config_key) is not None])
    report = verify_provenance(mutate_document(doc, rng.choice(f.locations)), cfg)
    assert report.mismatched_fields == [f.config_key]
    assert report.hash_ok
    other = mutate_config(cfg, f.config_key)
    report = verify_provenance(doc, other)
    assert report.mismatched_fields == [f.config_key]
    assert not report.hash_ok


# ---------------------------------------------------------------- lint

def test_lint_reports_problems():
    assert any("line 2" in str(i) for i in lint_vex("VEX_rev = 1.5;\nstray = 1;\n"))
    issues = lint_vex("VEX_rev = 1.5;\n$GLOBAL;\n$GLOBAL;\n$EXTRA;\n")
    msgs = [(i.severity, i.message) for i in issues]
    assert ("error", "block $GLOBAL appears more than once") in msgs
    assert ("error", "required block $PROCESSING is missing") in msgs
    assert ("warning", "unknown block $EXTRA kept verbatim") in msgs
    text = emit_provenance(loads_config(MINIMAL)).dumps().replace("fnv1a64 :", "md5 :")
    assert any("config_hash" in i.message for i in lint_vex(text))
