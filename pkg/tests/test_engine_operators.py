import random
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mean64, nested_loop_join, regroup_sums, segment_sums
from streamfx.engine import (CHANNEL_DATA, POWER_SPECTRUM_DATA, GraphValidationError, Pipeline, Schema,
                             run_concurrent, run_deterministic)

X = Schema("X", ["x:int32"])
F = Schema("F", ["x:float64"])
G = Schema("G", ["g:string", "x:int32"])
R = Schema("R", ["acceleratorID:int32", "seq:int32"])


def xs(values, schema=X):
    return [schema.make(x=v) for v in values]


def one_op(kind, items, in_schema=X, out_schema=None, **cfg):
    return (Pipeline().stream("a", in_schema).stream("b", out_schema or in_schema)
            .op("Source", "src", outputs="a", items=items)
            .op(kind, "op", "a", "b", **cfg)
            .op("Sink", "sink", "b", collect_punctuation=True).build())


def run(graph, **kw):
    res = run_deterministic(graph, **kw)
    return res.outputs["sink"], res.stats.operators["op"]


def values(tuples, attr="x"):
    return [None if t.punct else t[attr] for t in tuples]


# ---------------------------------------------------------------- Functor

def test_identity_functor():
    items = xs([5, 6, 7])
    out, _ = run(one_op("Functor", items))
    assert out == items


def test_filter_predicate():
    out, _ = run(one_op("Functor", xs([-1, 2, 0, 3]), filter="x > 0"))
    assert values(out) == [2, 3]


def test_psd_transform():
    g = one_op("Functor", [CHANNEL_DATA.make(real=[3.0], imag=[4.0])], CHANNEL_DATA, POWER_SPECTRUM_DATA,
               transform="psd")
    out, _ = run(g)
    assert out[0]["psd"].tolist() == [25.0]


def test_domain_errors_skip_and_count():
    def inv(t):
        return (1.0 / (t["x"] - 2),) if t["x"] != 2 else 1 // 0
    out, stats = run(one_op("Functor", xs([1, 2, 3]), X, F, transform=inv))
    assert values(out) == [-1.0, 1.0]
    assert stats.errors == 1


def test_bounded_history():
    def running(t, history):
        return (t["x"] + sum(h["x"] for h in history),)
    out, _ = run(one_op("Functor", xs([1, 2, 3, 4, 5]), transform=running, history=2))
    assert values(out) == [1, 3, 6, 9, 12]


def test_transform_bad_output_schema_fails_the_job():
    from streamfx.engine import JobFailedError
    with pytest.raises(JobFailedError):
        run(one_op("Functor", xs([1]), transform=lambda t: ("one",)))


# ---------------------------------------------------------------- Split

def _split(items, n=2):
    branches = [f"b{i}" for i in range(n)]
    p = Pipeline().stream("a", R).op("Source", "src", outputs="a", items=items)
    p.op("Split", "split", "a", branches, route="acceleratorID")
    for b in branches:
        p.stream(b, R).op("Sink", f"sink_{b}", b)
    res = run_deterministic(p.build())
    return [[t["seq"] for t in res.outputs[f"sink_{b}"]] for b in branches], res.stats.operators["split"]


def test_split_round_robin():
    items = [R.make(acceleratorID=(i - 1) % 2, seq=i) for i in range(1, 7)]
    (a, b), _ = _split(items)
    assert a == [1, 3, 5] and b == [2, 4, 6]


def test_split_constant_route():
    (a, b), _ = _split([R.make(acceleratorID=0, seq=i) for i in range(4)])
    assert a == [0, 1, 2, 3] and b == []


def test_split_out_of_range_dropped():
    (a, b), stats = _split([R.make(acceleratorID=2, seq=0), R.make(acceleratorID=1, seq=1)])
    assert stats.dropped == 1 and b == [1]


def test_split_route_must_be_int():
    p = Pipeline().stream("a", F).stream("b", F).stream("c", F)
    p.op("Source", "src", outputs="a").op("Split", "s", "a", ["b", "c"], route="x")
    p.op("Sink", "k1", "b").op("Sink", "k2", "c")
    with pytest.raises(GraphValidationError):
        p.build()


# ---------------------------------------------------------------- Aggregate

def test_tumbling_average():
    out, _ = run(one_op("Aggregate", xs([1, 2, 3, 4, 5, 6]), X, F,
                        window={"mode": "tumbling", "size": 3}, reducers={"x": "avg(x)"}))
    assert values(out) == [2.0, 5.0]


def test_list_average_over_523_frames():
    rng = np.random.default_rng(523)
    frames = rng.exponential(size=(523, 64)).astype(np.float32)
    items = [POWER_SPECTRUM_DATA.make(psd=f) for f in frames]
    out, _ = run(one_op("Aggregate", items, POWER_SPECTRUM_DATA,
                        window={"mode": "tumbling", "size": 523}, reducers={"psd": "avg(psd)"}))
    assert len(out) == 1
    assert np.max(np.abs(out[0]["psd"] - mean64(frames)) / mean64(frames)) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_grouped_sum_matches_regroup_oracle(seed):
    rng = random.Random(seed)
    pairs = [(rng.choice("ab"), rng.randrange(100)) for _ in range(20)]
    out, _ = run(one_op("Aggregate", [G.make(g=g, x=x) for g, x in pairs], G,
                        window={"mode": "tumbling", "size": 2, "group-by": "g"}, reducers={"x": "sum(x)"}))
    assert [(t["g"], t["x"]) for t in out] == regroup_sums(pairs, 2)


def test_all_reducers():
    S = Schema("S", ["lo:int32", "hi:int32", "n:int32", "total:int32", "all:float32-list"])
    g = one_op("Aggregate", xs([4, 1, 3]), X, S, window={"size": 3},
               reducers={"lo": "min(x)", "hi": "max(x)", "n": "count()", "total": "sum(x)",
                         "all": "list-collect(x)"})
    out, _ = run(g)
    t = out[0]
    assert (t["lo"], t["hi"], t["n"], t["total"], t["all"].tolist()) == (1, 4, 3, 8, [4.0, 1.0, 3.0])


def test_sliding_window():
    out, _ = run(one_op("Aggregate", xs(range(1, 7)), window={"mode": "sliding", "size": 3, "slide": 2},
                        reducers={"x": "sum(x)"}))
    assert values(out) == [1 + 2 + 3, 3 + 4 + 5]


def test_partial_window_policy():
    cfg = dict(window={"size": 4}, reducers={"x": "sum(x)"})
    out, stats = run(one_op("Aggregate", xs(range(6)), **cfg))
    assert values(out) == [6] and stats.counters["discarded_tuples"] == 2
    out, stats = run(one_op("Aggregate", xs(range(6)), emit_partial=True, **cfg))
    assert values(out) == [6, 9] and stats.counters["partial_windows"] == 1


def test_empty_windows_emit_nothing():
    out, _ = run(one_op("Aggregate", [], window={"size": 2}, reducers={"x": "sum(x)"}))
    assert out == []


def test_window_validation():
    with pytest.raises(GraphValidationError):
        one_op("Aggregate", [], window={"mode": "sliding", "size": 2, "slide": 3}, reducers={"x": "sum(x)"})
    with pytest.raises(GraphValidationError):
        one_op("Aggregate", [], window={"size": 2, "group-by": "nope"}, reducers={"x": "sum(x)"})


# ---------------------------------------------------------------- Barrier

def _barrier(a, b, **cfg):
    out_schema = cfg.pop("out_schema", Schema("AB", ["x:int32", "y:int32"]))
    p = (Pipeline().stream("a", X).stream("b", X).stream("c", out_schema)
         .op("Source", "sa", outputs="a", items=xs(a)).op("Source", "sb", outputs="b", items=xs(b))
         .op("Barrier", "op", ["a", "b"], "c", **cfg).op("Sink", "sink", "c"))
    return run(p.build())


def test_barrier_lock_step():
    out, stats = _barrier([1, 2], [10])
    assert [t.values for t in out] == [(1, 10)]
    assert stats.counters["stranded"] == 1


def test_barrier_equal_lengths():
    out, _ = _barrier(range(7), range(7))
    assert len(out) == 7


def test_barrier_one_side_empty():
    out, stats = _barrier([1], [])
    assert out == [] and stats.counters["stranded"] == 1


def test_barrier_interleave_flush():
    out, stats = _barrier([1, 2, 3], [10], out_schema=X, mode="interleave", **{"on-close": "flush"})
    assert values(out) == [1, 10, 2, 3] and stats.counters["flushed"] == 2


@given(st.integers(0, 30), st.integers(0, 30))
@settings(max_examples=30)
def test_barrier_conservation(na, nb):
    out, _ = _barrier(range(na), range(nb))
    assert len(out) == min(na, nb)


# ---------------------------------------------------------------- Punctor

def test_punctor_after_even_indices():
    out, _ = run(one_op("Punctor", xs(range(6)), condition=lambda t, i: i % 2 == 0, position="after"))
    assert values(out) == [0, None, 1, 2, None, 3, 4, None, 5]


def test_punctor_before():
    out, _ = run(one_op("Punctor", xs([1, 5]), condition="x > 2", position="before"))
    assert values(out) == [1, None, 5]


def test_punctor_never_true_is_identity():
    items = xs(range(5))
    out, _ = run(one_op("Punctor", items, condition="x > 100"))
    assert out == items


@pytest.mark.parametrize("seed", range(5))
def test_punctuation_aggregate_matches_segmentation(seed):
    rng = random.Random(seed)
    vals = [rng.randrange(50) for _ in range(30)]
    marks = {i for i in range(30) if rng.random() < 0.3}
    p = (Pipeline().stream("a", X).stream("b", X).stream("c", X)
         .op("Source", "src", outputs="a", items=xs(vals))
         .op("Punctor", "p", "a", "b", condition=lambda t, i: i in marks)
         .op("Aggregate", "op", "b", "c", window={"mode": "punctuation"}, reducers={"x": "sum(x)"})
         .op("Sink", "sink", "c"))
    out, stats = run(p.build())
    sums, tail = segment_sums(vals, marks)
    assert values(out) == sums
    assert stats.counters.get("discarded_tuples", 0) == len(tail)


# ---------------------------------------------------------------- Delay

def test_delay_deterministic_is_logical():
    items = xs([1, 2, 3])
    out, stats = run(one_op("Delay", items, interval=0.05))
    assert out == items and stats.counters["logical_clock"] == pytest.approx(0.15)


def test_delay_wall_clock():
    arrivals = []
    g = (Pipeline().stream("a", X).stream("b", X)
         .op("Source", "src", outputs="a", items=xs([1, 2, 3]))
         .op("Delay", "op", "a", "b", interval=0.05)
         .op("Sink", "sink", "b", callback=lambda t: arrivals.append(time.monotonic())).build())
    t0 = time.monotonic()
    res = run_concurrent(g).result(timeout=10)
    assert values(res.outputs["sink"]) == [1, 2, 3]
    assert res.stats.operators["op"].counters["min_slack"] >= 0.05
    assert arrivals[0] - t0 >= 0.05


def test_delay_zero_passes_through():
    items = xs(range(10))
    res = run_concurrent(one_op("Delay", items, interval=0)).result(timeout=10)
    assert res.outputs["sink"] == items


# ---------------------------------------------------------------- Sort

K = Schema("K", ["x:int32", "seq:int32"])


def test_sort_window():
    out, _ = run(one_op("Sort", xs([3, 1, 2]), key="x", window={"size": 3}))
    assert values(out) == [1, 2, 3]


def test_sort_is_stable():
    items = [K.make(x=x, seq=i) for i, x in enumerate([2, 1, 2, 1])]
    out, _ = run(one_op("Sort", items, K, key="x", window={"size": 4}))
    assert [t["seq"] for t in out] == [1, 3, 0, 2]


@pytest.mark.parametrize("order", ["asc", "desc"])
def test_sort_matches_reference(order):
    rng = random.Random(50)
    items = [K.make(x=rng.randrange(10), seq=i) for i in range(50)]
    out, _ = run(one_op("Sort", items, K, key="x", window={"size": 50}, order=order))
    ref = sorted(items, key=lambda t: t["x"], reverse=order == "desc")
    assert out == ref


# ---------------------------------------------------------------- Join

LEFT = Schema("L", ["k:int32", "a:int32"])
RIGHT = Schema("RR", ["k:int32", "b:int32"])
JOINED = Schema("J", ["k:int32", "a:int32", "b:int32"])


def _join(left, right, size=16):
    p = (Pipeline().stream("l", LEFT).stream("r", RIGHT).stream("j", JOINED)
         .op("Source", "sl", outputs="l", items=[LEFT.make(k=k, a=a) for k, a in left])
         .op("Source", "sr", outputs="r", items=[RIGHT.make(k=k, b=b) for k, b in right])
         .op("Join", "op", ["l", "r"], "j", key="k", window={"mode": "sliding", "size": size, "slide": 1})
         .op("Sink", "sink", "j"))
    return run(p.build())[0]


def test_join_single_match():
    assert [t.values for t in _join([(1, 10)], [(1, 20)])] == [(1, 10, 20)]


def test_join_disjoint_keys():
    assert _join([(1, 0), (2, 0)], [(3, 0), (4, 0)]) == []


@pytest.mark.parametrize("seed", range(8))
def test_join_matches_nested_loop_oracle(seed):
    rng = random.Random(seed)
    nl, nr, size = rng.randrange(1, 15), rng.randrange(1, 15), rng.randrange(1, 5)
    left = [(rng.randrange(4), i) for i in range(nl)]
    right = [(rng.randrange(4), 100 + i) for i in range(nr)]
    # deterministic sweeps deliver one tuple per source in turn, left first
    events = []
    for i in range(max(nl, nr)):
        if i < nl:
            events.append((0, *left[i]))
        if i < nr:
            events.append((1, *right[i]))
    out = _join(left, right, size)
    assert sorted((t["a"], t["b"]) for t in out) == nested_loop_join(events, size)


# ---------------------------------------------------------------- UserOp

def test_user_operator_plugin():
    from streamfx.engine import UserOperator

    class Twice(UserOperator):
        def process(self, t, emit):
            emit(t)
            emit(t)

    out, _ = run(one_op("UserOp", xs([1, 2]), op=Twice))
    assert values(out) == [1, 1, 2, 2]


def test_channelize_user_operator():
    from streamfx.engine import RAW_DATA_CHUNK
    n = 16
    samples = np.round(10 * np.cos(2 * np.pi * 3 * np.arange(2 * n) / n)).astype(np.int16)
    g = one_op("UserOp", [RAW_DATA_CHUNK.make(acceleratorID=0, data=samples)], RAW_DATA_CHUNK, CHANNEL_DATA,
               op="channelize", params={"fft-size": n})
    out, _ = run(g)
    z = out[0]["real"] + 1j * out[0]["imag"]
    assert z.size == 2 * (n // 2)
    assert np.argmax(np.abs(z[: n // 2])) == 3


def test_unknown_user_operator():
    with pytest.raises(GraphValidationError):
        one_op("UserOp", [], op="does-not-exist")
