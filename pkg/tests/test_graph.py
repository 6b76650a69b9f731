import pytest
from hypothesis import given, settings, strategies as st

from conftest import E, R, build, edge, ent
from csts.graph import (
    SIGNATURES,
    CanonicalEntity,
    GraphDelta,
    IllegalTransition,
    LifecycleState,
    Merge,
    SignatureViolation,
    StaleTimestamp,
    SubstrateGraph,
    TemporalMisalignment,
    TransitionOp,
    OutOfOrderDelta,
    TypeMismatch,
    UnknownEntity,
    export_jsonl,
    import_jsonl,
    replay,
    signature_admits,
    transition_lifecycle,
    validate_entity,
)

L = LifecycleState


def test_validate_entity_examples():
    assert validate_entity(ent("h:ws01", E.HOST)).ok
    bad = ent("h:x", E.HOST, 100, 50)
    assert "inverted validity interval" in validate_entity(bad).codes()
    u = ent("user:alice", E.USER, logon_count="abc")
    assert "type mismatch" in validate_entity(u).codes()
    assert "unknown attribute" in validate_entity(ent("user:a", E.USER, color="red")).codes()
    naked = CanonicalEntity("user:b", E.USER)
    assert "missing provenance" in validate_entity(naked).codes()


def test_insert_edge_examples():
    g = build([ent("user:u1", E.USER), ent("host:h1", E.HOST)], [])
    g.insert_edge(edge("user:u1", "host:h1", R.AUTHENTICATES_TO, 50))
    assert len(g.edges) == 1

    g = build([ent("user:u1", E.USER, 0, 100), ent("host:h1", E.HOST, 60, 100)], [])
    with pytest.raises(TemporalMisalignment):
        g.insert_edge(edge("user:u1", "host:h1", R.AUTHENTICATES_TO, 50))

    g = build([ent("proc:p", E.PROCESS), ent("host:h1", E.HOST)], [])
    with pytest.raises(SignatureViolation):
        g.insert_edge(edge("proc:p", "host:h1", R.AUTHENTICATES_TO, 5))
    with pytest.raises(UnknownEntity):
        g.insert_edge(edge("proc:zz", "host:h1", R.CONNECTS_TO, 5))


def test_apply_delta_examples():
    g = SubstrateGraph()
    g.apply(GraphDelta(0))
    assert len(g.delta_log) == 1 and not g.entities

    d = GraphDelta(1, [ent("user:a", E.USER), ent("host:b", E.HOST)],
                   edge_inserts=[edge("user:a", "host:b", R.AUTHENTICATES_TO, 1)])
    g.apply(d)
    assert len(g.entities) == 2 and len(g.edges) == 1

    before = (dict(g.entities), list(g.edges), len(g.delta_log))
    good = [edge("user:a", "host:b", R.AUTHENTICATES_TO, 2 + i) for i in range(5)]
    bad = edge("host:b", "user:a", R.AUTHENTICATES_TO, 3)
    with pytest.raises(SignatureViolation):
        g.apply(GraphDelta(3, edge_inserts=good[:2] + [bad] + good[2:]))
    assert (g.entities, g.edges, len(g.delta_log)) == before

    with pytest.raises(OutOfOrderDelta):
        g.apply(GraphDelta(0))


def test_upsert_type_mismatch_is_atomic():
    g = build([ent("x:1", E.USER)], [])
    with pytest.raises(TypeMismatch):
        g.apply(GraphDelta(1, [ent("host:new", E.HOST), ent("x:1", E.HOST)]))
    assert "host:new" not in g.entities


def test_lifecycle_examples():
    e = ent("user:a", E.USER)
    transition_lifecycle(e, L.ACTIVE, 1)
    with pytest.raises(IllegalTransition):
        transition_lifecycle(e, L.CREATED, 2)
    f = ent("user:b", E.USER)
    with pytest.raises(IllegalTransition):
        transition_lifecycle(f, L.DORMANT, 1)
    transition_lifecycle(e, L.DORMANT, 5)
    with pytest.raises(StaleTimestamp):
        transition_lifecycle(e, L.RETIRED, 4)
    transition_lifecycle(e, L.RETIRED, 9)
    assert e.valid_to == 9


def test_snapshot_examples():
    g = build([ent("user:a", E.USER, 10), ent("host:b", E.HOST, 10)],
              [edge("user:a", "host:b", R.AUTHENTICATES_TO, 20)], at=10)
    assert not g.snapshot_at(5).entities
    assert g.snapshot_at(10**9) == g
    mid = g.snapshot_at(15)
    assert len(mid.entities) == 2 and not mid.edges


def test_neighborhood_examples():
    ents = [ent("user:u", E.USER)] + [ent(f"host:h{i}", E.HOST) for i in (1, 2, 3)]
    g = build(ents, [edge("user:u", f"host:h{i}", R.AUTHENTICATES_TO, i) for i in (1, 2, 3)])
    n = g.neighborhood("user:u", 1)
    assert len(n.nodes) == 4 and len(n.edges) == 3
    n2 = g.neighborhood("user:u", 1, max_nodes=2)
    assert n2.nodes == ("user:u", "host:h1")

    g = build([ent("user:u", E.USER), ent("host:h1", E.HOST), ent("proc:p1", E.PROCESS)],
              [edge("user:u", "host:h1", R.AUTHENTICATES_TO, 1), edge("host:h1", "proc:p1", R.EXECUTES, 2)])
    n = g.neighborhood("user:u", 2, type_filter={R.AUTHENTICATES_TO})
    assert set(n.nodes) == {"user:u", "host:h1"}
    assert [r.rel_type for _, r in n.edges] == [R.AUTHENTICATES_TO]
    assert len(g.neighborhood("user:u", 2).nodes) == 3
    assert len(g.neighborhood("user:u", 2, window=(0, 1)).nodes) == 2


def test_merge_examples():
    g = build([ent("host:a", E.HOST), ent("host:b", E.HOST), ent("user:u", E.USER)],
              [edge("user:u", "host:a", R.AUTHENTICATES_TO, 1), edge("user:u", "host:b", R.AUTHENTICATES_TO, 2)])
    g.apply(GraphDelta(3, merges=[Merge("host:a", "host:b")]))
    assert sum(1 for r in g.edges if r.dst == "host:a") == 2
    assert g.entities["host:b"].lifecycle.state is L.RETIRED
    assert g.entities["host:b"].valid_to == 3
    assert any("merge:host:b->host:a" in r.provenance.lineage for r in g.edges)
    with pytest.raises(TypeMismatch):
        g.apply(GraphDelta(4, merges=[Merge("host:a", "user:u")]))


def test_jsonl_roundtrip(tmp_path):
    g = build([ent("user:u", E.USER, community="c1"), ent("host:h", E.HOST)],
              [edge("user:u", "host:h", R.AUTHENTICATES_TO, 1, event_id="e1"),
               edge("user:u", "host:h", R.AUTHENTICATES_TO, (2, 5))])
    p = tmp_path / "g.jsonl"
    export_jsonl(g, p)
    assert import_jsonl(p) == g


# ---------------------------------------------------------------- property suite

ENTITY_POOL = [
    ("user:u0", E.USER), ("user:u1", E.USER), ("host:h0", E.HOST), ("host:h1", E.HOST),
    ("proc:p0", E.PROCESS), ("file:f0", E.FILE), ("ext:x0", E.EXTERNAL_ENTITY), ("cred:c0", E.CREDENTIAL),
]

op_strategy = st.lists(
    st.tuples(
        st.integers(0, len(ENTITY_POOL) - 1),
        st.integers(0, len(ENTITY_POOL) - 1),
        st.sampled_from(list(R)),
        st.integers(0, 3),  # time step
        st.integers(0, 2),  # interval length (0 means point)
    ),
    max_size=25,
)


def _random_graph(ops, validity):
    """Apply random edge inserts; returns the graph and the number of rejected ones."""
    ents = [ent(eid, t, *validity.get(eid, (0, None))) for eid, t in ENTITY_POOL]
    g = SubstrateGraph()
    g.apply(GraphDelta(0, ents, [TransitionOp(e.id, L.ACTIVE, 0) for e in ents]))
    t = 0
    rejected = 0
    for si, di, rel, dt, length in ops:
        t += dt
        src, dst = ENTITY_POOL[si][0], ENTITY_POOL[di][0]
        r = edge(src, dst, rel, (t, t + length) if length else t)
        try:
            g.apply(GraphDelta(t, edge_inserts=[r]))
        except (SignatureViolation, TemporalMisalignment):
            rejected += 1
    return g, rejected


validity_strategy = st.dictionaries(
    st.sampled_from([e for e, _ in ENTITY_POOL]),
    st.tuples(st.integers(0, 20), st.integers(20, 80)),
    max_size=4,
)


@settings(max_examples=2000, deadline=None)
@given(op_strategy, validity_strategy)
def test_replay_determinism(ops, validity):
    g, _ = _random_graph(ops, validity)
    assert replay(g.delta_log) == g
    assert replay(g.delta_log) == replay(g.delta_log)


@settings(max_examples=2000, deadline=None)
@given(op_strategy)
def test_signature_soundness(ops):
    g, rejected = _random_graph(ops, {})
    types = dict(ENTITY_POOL)
    for r in g.edges:
        assert signature_admits(r.rel_type, types[r.src], types[r.dst])
    admissible = sum(
        signature_admits(rel, ENTITY_POOL[s][1], ENTITY_POOL[d][1]) for s, d, rel, _, _ in ops
    )
    assert len(g.edges) == admissible and rejected == len(ops) - admissible


@settings(max_examples=2000, deadline=None)
@given(op_strategy, validity_strategy)
def test_temporal_containment(ops, validity):
    g, _ = _random_graph(ops, validity)
    for r in g.edges:
        for eid in (r.src, r.dst):
            e = g.entities[eid]
            assert e.valid_from <= r.start
            assert e.valid_to is None or r.end <= e.valid_to


@settings(max_examples=2000, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(L)), st.integers(0, 5)), max_size=8))
def test_lifecycle_monotonicity(steps):
    chain = [L.CREATED, L.ACTIVE, L.DORMANT, L.RETIRED]
    e = ent("user:z", E.USER)
    t = 0
    for to, dt in steps:
        t += dt
        try:
            transition_lifecycle(e, to, t)
        except (IllegalTransition, StaleTimestamp):
            pass
    tr = e.lifecycle.transitions
    walked = [L.CREATED] + [x.to_state for x in tr]
    assert walked == chain[: len(walked)]
    assert all(a.at <= b.at for a, b in zip(tr, tr[1:]))
    assert e.lifecycle.state is walked[-1]


@settings(max_examples=1000, deadline=None)
@given(st.sampled_from([k for k in SIGNATURES]), st.integers(0, 50), st.integers(1, 50))
def test_parallel_edge_preservation(rel, t1, gap):
    src_t = sorted(SIGNATURES[rel][0], key=lambda x: x.value)[0]
    dst_t = sorted(SIGNATURES[rel][1], key=lambda x: x.value)[0]
    g = build([ent("a:src", src_t), ent("a:dst", dst_t)], [])
    g.insert_edge(edge("a:src", "a:dst", rel, t1))
    g.insert_edge(edge("a:src", "a:dst", rel, t1 + gap))
    assert len(g.edges) == 2 and g.edges[0].key() == g.edges[1].key()


@settings(max_examples=1500, deadline=None)
@given(op_strategy, st.sampled_from([("user:u0", "user:u1"), ("host:h0", "host:h1")]))
def test_merge_conservation(ops, pair):
    g, _ = _random_graph(ops, {})
    n_edges = len(g.edges)
    touching = sum(1 for r in g.edges if pair[1] in (r.src, r.dst))
    keep, absorb = pair
    g.apply(GraphDelta(g.last_at, merges=[Merge(keep, absorb)]))
    assert len(g.edges) == n_edges
    assert not any(absorb in (r.src, r.dst) for r in g.edges)
    assert sum(1 for r in g.edges if any(s.startswith("merge:") for s in r.provenance.lineage)) == touching
    assert g.entities[absorb].lifecycle.state is L.RETIRED
    assert replay(g.delta_log) == g
