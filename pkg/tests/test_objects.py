from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import E, R, build, edge, ent
from csts.graph import signature_admits
from csts.objects import (
    AUTH_FANOUT,
    FILE_WRITE_CASCADE,
    ConstructionPolicy,
    EdgeQuery,
    EmptySupport,
    EntityQuery,
    InsufficientObjects,
    InvalidView,
    MotifQuery,
    MotifTemplate,
    UnknownFocal,
    ViewTransform,
    apply_view,
    check_containment,
    composition,
    construct,
    match_motif,
    pair_policy,
    summary_vector,
    validate_view,
    write_jsonl,
)

TAU = (0, 10_000)


def star_graph(n_hosts=5, extra=True):
    ents = [ent("user:u", E.USER), ent("proc:p", E.PROCESS)] + [ent(f"host:h{i}", E.HOST) for i in range(n_hosts)]
    edges = [edge("user:u", f"host:h{i}", R.AUTHENTICATES_TO, 10 + i) for i in range(n_hosts)]
    if extra:
        edges.append(edge("user:u", "proc:p", R.EXECUTES, 50))
    return build(ents, edges)


# ---------------------------------------------------------------- construction


def test_isolated_entity_h0():
    g = build([ent("host:lonely", E.HOST)], [])
    o = construct(g, EntityQuery("host:lonely"), TAU, ConstructionPolicy(hops=0))
    assert o.kind == "entity-state" and o.entities == ("host:lonely",) and o.edges == ()


def test_interaction_query_context():
    ents = [ent("user:u", E.USER), ent("host:h", E.HOST), ent("host:x", E.HOST), ent("user:v", E.USER),
            ent("host:far", E.HOST)]
    g = build(ents, [
        edge("user:u", "host:h", R.AUTHENTICATES_TO, 10),
        edge("user:u", "host:x", R.AUTHENTICATES_TO, 11),
        edge("user:v", "host:h", R.AUTHENTICATES_TO, 12),
        edge("user:v", "host:far", R.AUTHENTICATES_TO, 13),
        edge("user:u", "host:far", R.AUTHENTICATES_TO, 9000),
    ])
    o = construct(g, EdgeQuery(0), (0, 100), ConstructionPolicy(hops=1))
    assert o.kind == "interaction-state"
    assert set(o.entities) == {"user:u", "host:h", "host:x", "user:v"}
    assert 4 not in o.edge_ids
    with pytest.raises(EmptySupport):
        construct(g, EdgeQuery(4), (0, 100))
    with pytest.raises(UnknownFocal):
        construct(g, EntityQuery("user:nobody"), TAU)
    with pytest.raises(UnknownFocal):
        construct(g, EdgeQuery(99), TAU)


def test_twelve_write_burst_binds_thirteen_nodes():
    files = [ent(f"file:f{i}", E.FILE) for i in range(14)]
    ents = [ent("proc:w", E.PROCESS), ent("proc:q", E.PROCESS)] + files
    edges = [edge("proc:w", f"file:f{i}", R.WRITES, 100 + 20 * i) for i in range(12)]
    edges += [edge("proc:w", "file:f13", R.WRITES, 5000), edge("proc:q", "file:f0", R.READS, 120)]
    edges += [edge("proc:q", f"file:f{i}", R.WRITES, 2000 + i) for i in range(5)]
    g = build(ents, edges)
    assert len(g.edges) <= 30
    o = construct(g, MotifQuery(FILE_WRITE_CASCADE), TAU)
    assert o.kind == "motif-state" and len(o.entities) == 13
    assert len(match_motif(g, FILE_WRITE_CASCADE)) == 1
    with pytest.raises(EmptySupport):
        construct(g, MotifQuery(FILE_WRITE_CASCADE), (0, 50))


def test_construction_deterministic():
    g = star_graph()
    a = construct(g, EntityQuery("user:u"), TAU, ConstructionPolicy(hops=2))
    b = construct(g, EntityQuery("user:u"), TAU, ConstructionPolicy(hops=2))
    assert a.to_json() == b.to_json()
    assert construct(g, EntityQuery("user:u"), TAU, ConstructionPolicy(hops=1, max_nodes=3)).entities == (
        "host:h0", "host:h1", "user:u")


def test_policy_validation():
    with pytest.raises(ValueError):
        ConstructionPolicy(max_nodes=0)
    with pytest.raises(ValueError):
        ConstructionPolicy(modalities=frozenset())
    with pytest.raises(ValueError):
        MotifTemplate("bad", E.FILE, {R.SPAWNS}, E.HOST)


POOL = [("user:a", E.USER), ("user:b", E.USER), ("host:a", E.HOST), ("host:b", E.HOST), ("host:c", E.HOST),
        ("proc:a", E.PROCESS), ("proc:b", E.PROCESS), ("file:a", E.FILE), ("file:b", E.FILE),
        ("ext:a", E.EXTERNAL_ENTITY)]
ADMISSIBLE = [(s, d, r) for s, st_ in POOL for d, dt in POOL for r in R if s != d and signature_admits(r, st_, dt)]


@settings(max_examples=400, deadline=None)
@given(st.lists(st.tuples(st.integers(0, len(ADMISSIBLE) - 1), st.integers(0, 200)), max_size=30),
       st.integers(0, len(POOL) - 1), st.integers(0, 2), st.integers(1, 8), st.integers(0, 200), st.integers(0, 200))
def test_containment_on_random_graphs(picks, focal, hops, k, t0, width):
    g = build([ent(e, t) for e, t in POOL], [edge(*ADMISSIBLE[i][:2], ADMISSIBLE[i][2], t) for i, t in picks])
    tau = (t0, t0 + width)
    eta = ConstructionPolicy(hops=hops, max_nodes=k)
    o = construct(g, EntityQuery(POOL[focal][0]), tau, eta)
    assert check_containment(o, g) == []
    assert len(o.entities) <= k
    if g.edges:
        idx = 0
        r = g.edges[idx]
        if tau[0] <= r.start and r.end <= tau[1]:
            o = construct(g, EdgeQuery(idx), tau, eta)
            assert check_containment(o, g) == []
            assert idx in o.edge_ids


# ---------------------------------------------------------------- motifs vs oracle

MOTIF_POOL = [("proc:p0", E.PROCESS), ("proc:p1", E.PROCESS), ("proc:p2", E.PROCESS)] + [
    (f"file:f{i}", E.FILE) for i in range(6)] + [("host:h0", E.HOST)]
MOTIF_EDGES = [(s, d, r) for s, st_ in MOTIF_POOL for d, dt in MOTIF_POOL
               for r in (R.WRITES, R.MODIFIES, R.READS, R.EXECUTES, R.SPAWNS) if s != d and signature_admits(r, st_, dt)]


@settings(max_examples=400, deadline=None)
@given(st.lists(st.tuples(st.integers(0, len(MOTIF_EDGES) - 1), st.integers(0, 60), st.integers(0, 3)),
                max_size=14),
       st.integers(1, 4), st.integers(1, 4), st.sampled_from([None, 5, 20]))
def test_motif_bindings_match_bruteforce(picks, fanout, targets, dur):
    ents = [ent(e, t) for e, t in MOTIF_POOL]
    rels = [edge(MOTIF_EDGES[i][0], MOTIF_EDGES[i][1], MOTIF_EDGES[i][2], (t, t + L) if L else t) for i, t, L in picks]
    g = build(ents, rels)
    tmpl = MotifTemplate("w", E.PROCESS, {R.WRITES, R.MODIFIES}, E.FILE, min_fanout=fanout,
                         min_distinct_targets=targets, max_duration=dur)
    got = {(b.center, b.edges) for b in match_motif(g, tmpl)}
    rows = [(i, r.src, r.dst, r.rel_type, r.start, r.end) for i, r in enumerate(g.edges)]
    want = oracles.star_bindings(rows, dict(MOTIF_POOL), E.PROCESS, {R.WRITES, R.MODIFIES}, E.FILE,
                                 fanout, targets, dur)
    assert got == want


# ---------------------------------------------------------------- views


def test_view_examples():
    g = star_graph()
    o = construct(g, EntityQuery("user:u"), TAU)
    m = apply_view(o, ViewTransform("attribute-mask", {"attributes": ["focal_out"]}))
    assert (m.entities, m.edges, m.support) == (o.entities, o.edges, o.support)
    assert m.features["tabular"]["focal_out"] is None and "focal_out" in m.masked
    with pytest.raises(ValueError):
        apply_view(o, ViewTransform("attribute-mask", {"attributes": ["n_edges"]}))

    s = apply_view(o, ViewTransform("neighborhood-subsample", {"keep": 2}), seed=3)
    assert "user:u" in s.entities and len(s.entities) <= 4

    p = apply_view(o, ViewTransform("modality-projection", {"modalities": ["graph"]}))
    assert "tabular" not in p.features and p.edges == o.edges

    t = apply_view(o, ViewTransform("temporal-offset", {"lo": 10, "hi": 60}))
    assert validate_view(o, t).ok and t.edges == o.edges


def test_subsample_keeps_defining_relation():
    g = star_graph()
    o = construct(g, EntityQuery("user:u"), TAU)
    for seed in range(20):
        v = apply_view(o, ViewTransform("neighborhood-subsample", {"keep": 0}), seed=seed)
        assert any(r.rel_type is R.AUTHENTICATES_TO for _, r in v.edges)


def _codes(result):
    return {v.code for v in result.violations}


def test_single_violation_fixtures():
    g = star_graph()
    o = construct(g, EntityQuery("user:u"), TAU)

    swapped = replace(o, focal=("entity", "host:h0"))
    assert _codes(validate_view(o, swapped)) == {"focal-identity"}

    ex_i = next(i for i, r in o.edges if r.rel_type is R.EXECUTES)
    retyped = replace(o, edges=tuple((i, replace(r, rel_type=R.SPAWNS) if i == ex_i else r) for i, r in o.edges))
    assert _codes(validate_view(o, retyped)) == {"signature"}

    widened = replace(o, support=(TAU[0], TAU[1] + 1))
    assert _codes(validate_view(o, widened)) == {"temporal-support"}

    lost = replace(o, entity_lineage={**o.entity_lineage, "host:h1": ()})
    assert _codes(validate_view(o, lost)) == {"provenance"}

    ents = [ent("user:u", E.USER), ent("host:h", E.HOST), ent("proc:p", E.PROCESS)]
    g2 = build(ents, [edge("user:u", "host:h", R.AUTHENTICATES_TO, 1, confidence=0.4),
                      edge("user:u", "proc:p", R.EXECUTES, 2)])
    oi = construct(g2, EdgeQuery(0), TAU)
    with pytest.raises(InvalidView) as err:
        apply_view(oi, ViewTransform("confidence-prune", {"min_confidence": 0.5}))
    assert _codes(err.value.result) == {"semantic-admissibility"}


def test_admissible_views_validate():
    g = star_graph()
    o = construct(g, EntityQuery("user:u"), TAU)
    for v in [ViewTransform("attribute-mask", {"n": 2}), ViewTransform("neighborhood-subsample", {"keep": 3}),
              ViewTransform("temporal-offset", {"lo": 0, "hi": 5000}), ViewTransform("source-omission", {"source": "other"}),
              ViewTransform("modality-projection", {"modalities": ["graph", "tabular"]}),
              ViewTransform("confidence-prune", {"min_confidence": 0.5})]:
        assert validate_view(o, apply_view(o, v, seed=1)).ok


# ---------------------------------------------------------------- pairs


def test_pair_policy_examples(tmp_path):
    g = star_graph()
    o = construct(g, EntityQuery("user:u"), TAU)
    a = apply_view(o, ViewTransform("attribute-mask", {"attributes": ["focal_in"]}))
    b = apply_view(o, ViewTransform("modality-projection", {"modalities": ["graph", "tabular"]}))
    pos = pair_policy([a, b], policy="positive")
    assert len(pos) == 1 and pos[0].kind == "positive"
    with pytest.raises(InsufficientObjects):
        pair_policy([o], policy="negative")
    write_jsonl(tmp_path / "p.jsonl", pos)
    assert len((tmp_path / "p.jsonl").read_text().splitlines()) == 1


def _twenty_objects():
    ents, edges = [], []
    t = 0
    for k in range(1, 19):
        ents.append(ent(f"user:f{k}", E.USER))
        for j in range(k):
            ents.append(ent(f"host:f{k}_{j}", E.HOST))
            t += 1
            edges.append(edge(f"user:f{k}", f"host:f{k}_{j}", R.AUTHENTICATES_TO, t))
    ents.append(ent("user:a", E.USER))
    ents.append(ent("proc:b", E.PROCESS))
    for j in range(25):
        ents += [ent(f"host:a{j}", E.HOST), ent(f"file:b{j}", E.FILE)]
        t += 1
        edges += [edge("user:a", f"host:a{j}", R.AUTHENTICATES_TO, t), edge("proc:b", f"file:b{j}", R.WRITES, t)]
    g = build(ents, edges)
    foci = [f"user:f{k}" for k in range(1, 19)] + ["user:a", "proc:b"]
    return [construct(g, EntityQuery(f), (0, 10**6), ConstructionPolicy(hops=1, max_nodes=100)) for f in foci]


def test_planted_hard_negative_recovered():
    objs = _twenty_objects()
    assert len(objs) == 20
    pairs = pair_policy(objs, policy="hard-negative")
    fps = [o.fingerprint for o in objs]
    got = {(fps.index(p.a), fps.index(p.b)) for p in pairs}
    assert (18, 19) in got
    summaries = [list(summary_vector(o)) for o in objs]
    want = oracles.hard_negative_pairs(summaries, [composition(o) for o in objs], [o.focal_entities for o in objs])
    assert got == want
