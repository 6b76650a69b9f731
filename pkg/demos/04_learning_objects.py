"""Learning objects over an ingested environment.

Build entity, interaction and motif objects, derive views, check the
validity constraints and emit contrastive pairs.
"""

import tempfile
from pathlib import Path

from csts.experiment import ExperimentConfig, ingest_env, synth_stage
from csts.objects import (
    AUTH_FANOUT,
    ConstructionPolicy,
    EdgeQuery,
    EntityQuery,
    InvalidView,
    MotifQuery,
    ViewTransform,
    apply_view,
    check_containment,
    construct,
    match_motif,
    motif_objects,
    pair_policy,
    write_jsonl,
)

out = Path(tempfile.mkdtemp())
cfg = ExperimentConfig(duration_hours=72.0, tasks=["LM"])
synth_stage(cfg, out)
g, _ = ingest_env(out, "LM", "EnvA")
lo, hi = g.edges[0].start, g.edges[-1].end
print(f"graph: {len(g.entities)} entities, {len(g.edges)} edges, support [{lo}, {hi}]")

eta = ConstructionPolicy(hops=1, max_nodes=20)
user = sorted(e for e in g.entities if e.startswith("user:"))[0]
o_ent = construct(g, EntityQuery(user), (lo, hi), eta)
print(f"\n{o_ent.kind} for {user}: {len(o_ent.entities)} entities, {len(o_ent.edges)} edges")
print("  tabular:", o_ent.features["tabular"])
print("  containment problems:", check_containment(o_ent, g))

o_edge = construct(g, EdgeQuery(0), (lo, hi), eta)
print(f"{o_edge.kind} around edge 0: focal={o_edge.focal}")

bindings = match_motif(g, AUTH_FANOUT, (lo, hi))
print(f"\n{len(bindings)} auth-fanout bindings (>=3 distinct hosts within 15 min)")
if bindings:
    b = bindings[0]
    print(f"  first: center={b.center} leaves={b.leaves} span={b.end - b.start}s")
    o_motif = construct(g, MotifQuery(AUTH_FANOUT), (lo, hi))
    print(f"  motif-state object: {len(o_motif.entities)} nodes")

views = [
    apply_view(o_ent, ViewTransform("attribute-mask", {"attributes": ["max_degree"]})),
    apply_view(o_ent, ViewTransform("neighborhood-subsample", {"keep": 2}), seed=1),
    apply_view(o_ent, ViewTransform("modality-projection", {"modalities": ["graph", "tabular"]})),
]
for v in views:
    print(f"view {v.view:24} entities={len(v.entities):3d} edges={len(v.edges):3d} derived_from={v.derived_from}")

try:
    apply_view(o_edge, ViewTransform("confidence-prune", {"min_confidence": 1.5}))
except InvalidView as exc:
    print("rejected view:", [v.code for v in exc.result.violations])

objs = [construct(g, EntityQuery(u), (lo, hi), eta) for u in sorted(e for e in g.entities if e.startswith("user:"))]
objs += motif_objects(g, AUTH_FANOUT, (lo, hi))
pos = pair_policy(views, policy="positive")
hard = pair_policy(objs, policy="hard-negative")
print(f"\n{len(pos)} positive pairs among views, {len(hard)} hard negatives among {len(objs)} objects")
write_jsonl(out / "pairs.jsonl", pos + hard)
print("pairs written to", out / "pairs.jsonl")
