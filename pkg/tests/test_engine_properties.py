import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphgen import random_pipeline
from streamfx.engine import Pipeline, Schema, run_concurrent, run_deterministic
from streamfx.scheduler import OpProfile, ProfileStats, greedy_fuse, topology

K = Schema("K", ["acceleratorID:int32", "seq:int32", "x:int32"])


def _items(xs):
    return [K.make(acceleratorID=0, seq=i, x=x) for i, x in enumerate(xs)]


@given(st.lists(st.integers(-50, 50), max_size=60), st.integers(0, 3))
@settings(max_examples=60)
def test_order_preservation_single_io(xs, which):
    kind, cfg = [("Functor", {}), ("Functor", {"filter": "x > 0"}), ("Delay", {"interval": 0}),
                 ("Punctor", {"condition": "x > 10"})][which]
    g = (Pipeline().stream("a", K).stream("b", K).op("Source", "src", outputs="a", items=_items(xs))
         .op(kind, "op", "a", "b", **cfg).op("Sink", "sink", "b").build())
    seqs = [t["seq"] for t in run_deterministic(g).outputs["sink"]]
    assert seqs == sorted(seqs)


@given(st.integers(0, 200), st.integers(1, 20))
@settings(max_examples=60)
def test_tumbling_window_partition(n, w):
    C = Schema("C", ["n:int32", "first:int32", "last:int32"])
    g = (Pipeline().stream("a", K).stream("b", C)
         .op("Source", "src", outputs="a", items=_items(range(n)))
         .op("Aggregate", "agg", "a", "b", window={"size": w},
             reducers={"n": "count()", "first": "min(seq)", "last": "max(seq)"})
         .op("Sink", "sink", "b").build())
    res = run_deterministic(g)
    out = res.outputs["sink"]
    assert len(out) == n // w
    covered = [i for t in out for i in range(t["first"], t["last"] + 1)]
    assert covered == list(range(len(out) * w))
    assert all(t["n"] == w for t in out)
    assert res.stats.operators["agg"].counters.get("discarded_tuples", 0) == n % w


@given(st.integers(2, 5), st.integers(0, 12))
@settings(max_examples=40)
def test_split_round_robin_fairness(n, k):
    items = [K.make(acceleratorID=i % n, seq=i, x=0) for i in range(k * n)]
    p = Pipeline().stream("a", K).op("Source", "src", outputs="a", items=items)
    p.op("Split", "split", "a", [f"b{i}" for i in range(n)], route="acceleratorID")
    for i in range(n):
        p.stream(f"b{i}", K).op("Sink", f"sink{i}", f"b{i}")
    res = run_deterministic(p.build())
    for i in range(n):
        seqs = [t["seq"] for t in res.outputs[f"sink{i}"]]
        assert len(seqs) == k and seqs == sorted(seqs)


def _multiset(ts):
    return sorted(t.sort_key() for t in ts)


@pytest.mark.parametrize("seed", range(30))
def test_concurrent_matches_deterministic(seed):
    graph, inputs = random_pipeline(seed)
    det = run_deterministic(graph, inputs).outputs["sink"]
    con = run_concurrent(graph, None, 1 + seed % 4, inputs=inputs).result(timeout=30)
    assert con.ok
    assert _multiset(con.outputs["sink"]) == _multiset(det)


@pytest.mark.parametrize("seed", range(30, 45))
def test_fused_execution_matches_deterministic(seed):
    graph, inputs = random_pipeline(seed)
    rng = random.Random(seed)
    topo = topology(graph)
    stats = ProfileStats({o: OpProfile(rng.uniform(1, 100), 1, rng.uniform(1, 100)) for o in topo.ops},
                         {e: rng.uniform(0, 1e4) for e in topo.edges})
    plan = greedy_fuse(graph, stats, [1e6, 1e6])
    det = run_deterministic(graph, inputs).outputs["sink"]
    con = run_concurrent(graph, plan, 2, inputs=inputs).result(timeout=30)
    assert _multiset(con.outputs["sink"]) == _multiset(det)


@pytest.mark.parametrize("seed", range(5))
def test_determinism_over_seeds(seed):
    graph, inputs = random_pipeline(seed + 100)
    a = run_deterministic(graph, inputs).outputs["sink"]
    b = run_deterministic(graph, inputs).outputs["sink"]
    assert [t.values for t in a] == [t.values for t in b]
