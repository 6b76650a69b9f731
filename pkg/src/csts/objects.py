"""Learning objects: bounded, time-supported views over the substrate.

``construct`` realizes the construction operator Ψ(G, q, τ, η). Objects
hold edge references (indices into the source graph's edge list) together
with the edge payloads so that views can be validated without the graph.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from .graph import (
    CanonicalRelationship,
    EntityType,
    RelationshipType,
    SubstrateGraph,
    ValidationResult,
    Violation,
    edge_to_dict,
    signature_admits,
    time_bounds,
)

MODALITIES = frozenset({"tabular", "temporal", "graph", "provenance"})
VIEW_KINDS = (
    "attribute-mask", "neighborhood-subsample", "temporal-offset", "source-omission",
    "modality-projection", "confidence-prune",
)
CORE_TABULAR = frozenset({"n_entities", "n_edges"})


class UnknownFocal(Exception):
    pass


class EmptySupport(Exception):
    pass


class InvalidView(Exception):
    def __init__(self, result: ValidationResult):
        self.result = result
        super().__init__("; ".join(v.code for v in result.violations))


class InsufficientObjects(Exception):
    pass


# --------------------------------------------------------------------------- queries and policy


@dataclass(frozen=True)
class EntityQuery:
    entity_id: str


@dataclass(frozen=True)
class EdgeQuery:
    edge_index: int


@dataclass(frozen=True)
class MotifTemplate:
    """Typed star pattern: one center, ``rel_types`` edges to leaves of ``leaf_type``.

    Side constraints: ``min_fanout`` bound edges, ``min_distinct_targets``
    distinct leaves, and a ``max_duration`` (seconds) over the bound edges.
    """

    name: str
    center_type: EntityType
    rel_types: frozenset
    leaf_type: Optional[EntityType] = None
    direction: str = "out"
    min_fanout: int = 1
    min_distinct_targets: int = 1
    max_duration: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "rel_types", frozenset(self.rel_types))
        if not self.rel_types:
            raise ValueError("motif needs at least one relationship type")
        if self.direction not in ("out", "in"):
            raise ValueError("direction must be 'out' or 'in'")
        leaves = [self.leaf_type] if self.leaf_type else list(EntityType)
        admitted = any(
            signature_admits(rt, self.center_type, lt) if self.direction == "out" else signature_admits(rt, lt, self.center_type)
            for rt in self.rel_types for lt in leaves
        )
        if not admitted:
            raise ValueError(f"motif {self.name}: no admissible typed edge between center and leaf")

    def admits(self, r: CanonicalRelationship, center: str, types: dict) -> Optional[str]:
        """Leaf id when ``r`` is a pattern edge for ``center``, else None."""
        if r.rel_type not in self.rel_types:
            return None
        if self.direction == "out":
            if r.src != center:
                return None
            leaf = r.dst
        else:
            if r.dst != center:
                return None
            leaf = r.src
        if leaf == center:
            return None
        if self.leaf_type is not None and types.get(leaf) is not self.leaf_type:
            return None
        return leaf


FILE_WRITE_CASCADE = MotifTemplate(
    "file-write-cascade", EntityType.PROCESS, frozenset({RelationshipType.WRITES, RelationshipType.MODIFIES}),
    EntityType.FILE, min_fanout=10, min_distinct_targets=10, max_duration=300,
)
AUTH_FANOUT = MotifTemplate(
    "auth-fanout", EntityType.USER, frozenset({RelationshipType.AUTHENTICATES_TO}), EntityType.HOST,
    min_fanout=3, min_distinct_targets=3, max_duration=900,
)


@dataclass(frozen=True)
class MotifBinding:
    template: str
    center: str
    edges: tuple[int, ...]
    leaves: tuple[str, ...]
    start: int
    end: int


@dataclass(frozen=True)
class MotifQuery:
    template: MotifTemplate
    binding_index: int = 0


FocalQuery = Union[EntityQuery, EdgeQuery, MotifQuery]


@dataclass(frozen=True)
class ConstructionPolicy:
    hops: int = 1
    max_nodes: int = 50
    entity_types: Optional[frozenset] = None
    rel_types: Optional[frozenset] = None
    modalities: frozenset = MODALITIES
    min_confidence: float = 0.0

    def __post_init__(self):
        if self.max_nodes < 1:
            raise ValueError("neighborhood bound k must be >= 1")
        if not self.modalities or not set(self.modalities) <= MODALITIES:
            raise ValueError(f"modalities must be a non-empty subset of {sorted(MODALITIES)}")
        if not 0 <= self.hops <= 2:
            raise ValueError("hop depth must be 0, 1 or 2")

    def admits_edge(self, r: CanonicalRelationship) -> bool:
        if self.rel_types is not None and r.rel_type not in self.rel_types:
            return False
        return r.provenance.confidence >= self.min_confidence


# --------------------------------------------------------------------------- objects


@dataclass(frozen=True)
class LearningObject:
    kind: str  # entity-state | interaction-state | subgraph-state | motif-state
    focal: tuple  # ("entity", id) | ("edge", idx) | ("motif", template, center, edge idxs)
    entities: tuple[str, ...]
    entity_types: dict
    entity_lineage: dict  # id -> tuple of source strings
    edges: tuple[tuple[int, CanonicalRelationship], ...]
    support: tuple[int, int]
    features: dict  # modality -> name -> value
    provenance: tuple[str, ...]
    derived_from: Optional[str] = None
    view: Optional[str] = None
    masked: tuple[str, ...] = ()

    @property
    def edge_ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.edges)

    @property
    def focal_entities(self) -> tuple[str, ...]:
        if self.focal[0] == "entity":
            return (self.focal[1],)
        if self.focal[0] == "edge":
            return tuple(self.focal[2:4])
        return (self.focal[2],)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "focal": list(self.focal),
            "entities": list(self.entities),
            "entity_types": {k: v.value for k, v in sorted(self.entity_types.items())},
            "entity_lineage": {k: list(v) for k, v in sorted(self.entity_lineage.items())},
            "edges": [{"ref": i, **edge_to_dict(r)} for i, r in self.edges],
            "support": list(self.support),
            "features": self.features,
            "provenance": list(self.provenance),
            "derived_from": self.derived_from,
            "view": self.view,
            "masked": list(self.masked),
        }

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=_jsonable)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> str:
        return json.dumps({"fingerprint": self.fingerprint, **self.to_dict()}, sort_keys=True,
                          separators=(",", ":"), default=_jsonable)


ViewedObject = LearningObject


def _jsonable(v):
    if isinstance(v, (frozenset, set, tuple)):
        return sorted(v) if not isinstance(v, tuple) else list(v)
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if hasattr(v, "value"):
        return v.value
    raise TypeError(type(v))


def _within(r: CanonicalRelationship, tau: tuple[int, int]) -> bool:
    lo, hi = time_bounds(r.time)
    return tau[0] <= lo and hi <= tau[1]


def _summaries(focal_ids: Sequence[str], entities: Sequence[str], edges, support, modalities) -> dict:
    focal = focal_ids[0] if focal_ids else None
    rels = [r for _, r in edges]
    comp = Counter(r.rel_type.value for r in rels)
    deg: Counter = Counter()
    for r in rels:
        deg[r.src] += 1
        if r.dst != r.src:
            deg[r.dst] += 1
    feats: dict[str, Any] = {}
    if "tabular" in modalities:
        feats["tabular"] = {
            "n_entities": float(len(entities)),
            "n_edges": float(len(rels)),
            "focal_out": float(sum(1 for r in rels if r.src == focal)),
            "focal_in": float(sum(1 for r in rels if r.dst == focal)),
            "distinct_neighbors": float(len({r.dst if r.src == focal else r.src for r in rels
                                             if focal in (r.src, r.dst)})),
            "max_degree": float(max(deg.values(), default=0)),
        }
    if "temporal" in modalities:
        times = sorted(time_bounds(r.time)[0] for r in rels)
        gaps = np.diff(times) if len(times) > 1 else np.zeros(0)
        feats["temporal"] = {
            "first": times[0] if times else None,
            "last": times[-1] if times else None,
            "mean_interarrival": float(gaps.mean()) if len(gaps) else 0.0,
            "support_width": support[1] - support[0],
        }
    if "graph" in modalities:
        feats["graph"] = {"composition": dict(sorted(comp.items()))}
    if "provenance" in modalities:
        feats["provenance"] = {
            "sources": sorted({r.provenance.source_system for r in rels}),
            "mean_confidence": float(np.mean([r.provenance.confidence for r in rels])) if rels else 0.0,
        }
    return feats


def _expand(g: SubstrateGraph, seeds: Sequence[str], hops: int, tau, eta: ConstructionPolicy) -> list[str]:
    """Multi-source typed BFS; each ring is admitted in lexicographic order until k is reached.

    Seeds are always kept, so an edge focal keeps both endpoints even when k = 1.
    """
    selected = list(dict.fromkeys(seeds))
    seen = set(selected)
    frontier = list(selected)
    for _ in range(hops):
        ring = set()
        for node in frontier:
            for i in g._adj.get(node, ()):
                r = g.edges[i]
                if not (eta.admits_edge(r) and _within(r, tau)):
                    continue
                other = r.dst if r.src == node else r.src
                if other in seen:
                    continue
                if eta.entity_types is not None and g.entities[other].entity_type not in eta.entity_types:
                    continue
                ring.add(other)
        frontier = []
        for node in sorted(ring):
            if len(selected) >= eta.max_nodes:
                break
            seen.add(node)
            selected.append(node)
            frontier.append(node)
    return selected


def _induced(g: SubstrateGraph, nodes: Iterable[str], tau, eta: ConstructionPolicy):
    members = set(nodes)
    idxs = sorted({i for n in members for i in g._adj.get(n, ())})
    out = []
    for i in idxs:
        r = g.edges[i]
        if r.src in members and r.dst in members and eta.admits_edge(r) and _within(r, tau):
            out.append((i, r))
    return out


def _build(g: SubstrateGraph, kind: str, focal: tuple, focal_ids, nodes, edges, tau, eta) -> LearningObject:
    ents = tuple(sorted(nodes))
    types = {e: g.entities[e].entity_type for e in ents}
    lineage = {
        e: tuple(sorted({f"{s.source_system}|{s.adapter}|{s.note}" for s in g.entities[e].source_meta}))
        for e in ents
    }
    prov = sorted({f"{r.provenance.source_system}|{'>'.join(r.provenance.lineage)}" for _, r in edges})
    return LearningObject(
        kind, focal, ents, types, lineage, tuple(edges), (int(tau[0]), int(tau[1])),
        _summaries(focal_ids, ents, edges, tau, eta.modalities), tuple(prov),
    )


def construct(g: SubstrateGraph, q: FocalQuery, tau: tuple[int, int],
              eta: ConstructionPolicy = ConstructionPolicy()) -> LearningObject:
    if tau[0] > tau[1]:
        raise ValueError(f"support interval {tau} is inverted")
    if isinstance(q, EntityQuery):
        if q.entity_id not in g.entities:
            raise UnknownFocal(q.entity_id)
        nodes = _expand(g, [q.entity_id], eta.hops, tau, eta)
        edges = _induced(g, nodes, tau, eta)
        kind = "entity-state" if eta.hops == 0 else "subgraph-state"
        return _build(g, kind, ("entity", q.entity_id), [q.entity_id], nodes, edges, tau, eta)
    if isinstance(q, EdgeQuery):
        if not 0 <= q.edge_index < len(g.edges):
            raise UnknownFocal(f"edge {q.edge_index}")
        r = g.edges[q.edge_index]
        if not _within(r, tau):
            raise EmptySupport(f"focal edge {q.edge_index} lies outside {tau}")
        nodes = _expand(g, [r.src, r.dst], eta.hops, tau, eta)
        edges = _induced(g, nodes, tau, eta)
        if q.edge_index not in {i for i, _ in edges}:
            edges = sorted(edges + [(q.edge_index, r)], key=lambda x: x[0])
        focal = ("edge", q.edge_index, r.src, r.dst, r.rel_type.value)
        return _build(g, "interaction-state", focal, [r.src, r.dst], nodes, edges, tau, eta)
    if isinstance(q, MotifQuery):
        bindings = match_motif(g, q.template, tau, eta)
        if not bindings:
            raise EmptySupport(f"no {q.template.name} binding within {tau}")
        if q.binding_index >= len(bindings):
            raise UnknownFocal(f"binding {q.binding_index} of {len(bindings)}")
        return motif_object(g, bindings[q.binding_index], tau, eta)
    raise TypeError(f"unsupported focal query {q!r}")


def motif_object(g: SubstrateGraph, b: MotifBinding, tau, eta: ConstructionPolicy = ConstructionPolicy()) -> LearningObject:
    leaves = sorted(b.leaves)[: max(0, eta.max_nodes - 1)]
    keep = set(leaves) | {b.center}
    edges = [(i, g.edges[i]) for i in b.edges if {g.edges[i].src, g.edges[i].dst} <= keep]
    focal = ("motif", b.template, b.center, tuple(i for i, _ in edges))
    return _build(g, "motif-state", focal, [b.center], [b.center, *leaves], edges, tau, eta)


def motif_objects(g: SubstrateGraph, template: MotifTemplate, tau, eta: ConstructionPolicy = ConstructionPolicy()):
    return [motif_object(g, b, tau, eta) for b in match_motif(g, template, tau, eta)]


# --------------------------------------------------------------------------- motif matching


def _candidates(g: SubstrateGraph, t: MotifTemplate, center: str, tau, eta) -> list[tuple[int, str]]:
    types = {}
    out = []
    for i in g._adj.get(center, ()):
        r = g.edges[i]
        if tau is not None and not _within(r, tau):
            continue
        if eta is not None and not eta.admits_edge(r):
            continue
        other = r.dst if r.src == center else r.src
        types[other] = g.entities[other].entity_type
        leaf = t.admits(r, center, types)
        if leaf is not None:
            out.append((i, leaf))
    return sorted(set(out))


def _qualifies(t: MotifTemplate, group: Sequence[tuple[int, str]]) -> bool:
    return len(group) >= t.min_fanout and len({leaf for _, leaf in group}) >= t.min_distinct_targets


def match_motif(g: SubstrateGraph, t: MotifTemplate, tau=None,
                eta: Optional[ConstructionPolicy] = None) -> list[MotifBinding]:
    """Maximal bindings of a star template.

    With a duration bound, the candidate groups are, for every pattern edge
    e, the edges starting no earlier than e and ending within e.start + D.
    Every maximal duration-feasible edge set is one of these groups, so
    keeping the qualifying groups not strictly contained in another gives
    exactly the maximal bindings.
    """
    out = []
    for center in sorted(e for e, ent in g.entities.items() if ent.entity_type is t.center_type):
        cand = _candidates(g, t, center, tau, eta)
        if not cand:
            continue
        if t.max_duration is None:
            groups = [tuple(cand)]
        else:
            groups = []
            for i, _ in cand:
                t0 = g.edges[i].start
                grp = tuple(c for c in cand if g.edges[c[0]].start >= t0 and g.edges[c[0]].end <= t0 + t.max_duration)
                groups.append(grp)
        groups = sorted({grp for grp in groups if _qualifies(t, grp)})
        sets = [frozenset(grp) for grp in groups]
        for grp, s in zip(groups, sets):
            if any(s < other for other in sets):
                continue
            idxs = tuple(sorted(i for i, _ in grp))
            out.append(MotifBinding(
                t.name, center, idxs, tuple(sorted({leaf for _, leaf in grp})),
                min(g.edges[i].start for i in idxs), max(g.edges[i].end for i in idxs),
            ))
    return sorted(out, key=lambda b: (b.center, b.start, b.edges))


# --------------------------------------------------------------------------- views


@dataclass(frozen=True)
class ViewTransform:
    kind: str
    params: dict = field(default_factory=dict)
    derived_from: Optional[str] = None

    def __post_init__(self):
        if self.kind not in VIEW_KINDS:
            raise ValueError(f"unknown view kind {self.kind!r}")


def _defining_type(o: LearningObject) -> Optional[str]:
    """Relationship type that carries the focal's meaning in ``o``."""
    if o.focal[0] == "edge":
        return o.focal[4]
    focal = o.focal_entities[0]
    counts = Counter(r.rel_type.value for _, r in o.edges if focal in (r.src, r.dst))
    if not counts:
        return None
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]


def _with_edges(o: LearningObject, edges, **kw) -> LearningObject:
    return replace(o, edges=tuple(edges), **kw)


def apply_view(o: LearningObject, v: ViewTransform, seed: int = 0) -> LearningObject:
    """Apply ``v`` and validate the result; an inadmissible view raises InvalidView."""
    rng = np.random.default_rng(seed)
    p = v.params
    base = dict(derived_from=o.fingerprint, view=v.kind)
    if v.kind == "attribute-mask":
        tab = dict(o.features.get("tabular", {}))
        names = list(p.get("attributes", ()))
        if not names and p.get("n"):
            pool = sorted(k for k in tab if k not in CORE_TABULAR)
            names = sorted(rng.choice(pool, size=min(int(p["n"]), len(pool)), replace=False).tolist())
        for name in names:
            if name in CORE_TABULAR:
                raise ValueError(f"{name} is a core attribute and cannot be masked")
            if name in tab:
                tab[name] = None
        feats = {**o.features, "tabular": tab} if "tabular" in o.features else dict(o.features)
        cand = replace(o, features=feats, masked=tuple(sorted(set(o.masked) | set(names))), **base)
    elif v.kind == "neighborhood-subsample":
        focal = set(o.focal_entities)
        others = [e for e in o.entities if e not in focal]
        k = min(int(p.get("keep", len(others))), len(others))
        keep = set(rng.choice(others, size=k, replace=False).tolist()) if k else set()
        dtype = _defining_type(o)
        nodes = focal | keep
        edges = [(i, r) for i, r in o.edges if r.src in nodes and r.dst in nodes]
        if dtype and not any(r.rel_type.value == dtype for _, r in edges):
            # keep the essential relation: admit the first neighbor reached by it
            for i, r in o.edges:
                if r.rel_type.value == dtype and (r.src in focal or r.dst in focal):
                    nodes |= {r.src, r.dst}
                    break
            edges = [(i, r) for i, r in o.edges if r.src in nodes and r.dst in nodes]
        ents = tuple(e for e in o.entities if e in nodes)
        cand = replace(
            o, entities=ents, entity_types={e: o.entity_types[e] for e in ents},
            entity_lineage={e: o.entity_lineage[e] for e in ents}, edges=tuple(edges), **base,
        )
    elif v.kind == "temporal-offset":
        lo, hi = int(p.get("lo", o.support[0])), int(p.get("hi", o.support[1]))
        edges = [(i, r) for i, r in o.edges if _within(r, (lo, hi))]
        cand = _with_edges(o, edges, support=(lo, hi), **base)
    elif v.kind == "source-omission":
        src = p["source"]
        edges = [(i, r) for i, r in o.edges if r.provenance.source_system != src]
        prov = tuple(x for x in o.provenance if not x.startswith(f"{src}|"))
        cand = _with_edges(o, edges, provenance=prov, **base)
    elif v.kind == "modality-projection":
        mods = set(p.get("modalities", ()))
        if not mods or not mods <= MODALITIES:
            raise ValueError(f"projection needs a non-empty subset of {sorted(MODALITIES)}")
        cand = replace(o, features={k: val for k, val in o.features.items() if k in mods}, **base)
    else:  # confidence-prune
        thr = float(p.get("min_confidence", 0.0))
        cand = _with_edges(o, [(i, r) for i, r in o.edges if r.provenance.confidence >= thr], **base)
    result = validate_view(o, cand)
    if not result.ok:
        raise InvalidView(result)
    return cand


def validate_view(original: LearningObject, cand: LearningObject) -> ValidationResult:
    """Check the five view-validity constraints; violations are returned as data.

    Codes: ``focal-identity``, ``signature``, ``temporal-support``,
    ``provenance``, ``semantic-admissibility``.
    """
    vs: list[Violation] = []
    if cand.derived_from is not None and cand.derived_from != original.fingerprint:
        vs.append(Violation("derived-from", "candidate does not derive from this object"))
    # (1) focal identity
    if cand.focal != original.focal or not set(original.focal_entities) <= set(cand.entities):
        vs.append(Violation("focal-identity", f"focal {cand.focal} vs {original.focal}"))
    # (2) typed relationship semantics
    orig_edges = dict(original.edges)
    for i, r in cand.edges:
        src_t, dst_t = cand.entity_types.get(r.src), cand.entity_types.get(r.dst)
        if src_t is None or dst_t is None or not signature_admits(r.rel_type, src_t, dst_t):
            vs.append(Violation("signature", f"edge {i} {r.rel_type.value}({src_t}, {dst_t})"))
        elif i in orig_edges and orig_edges[i].rel_type is not r.rel_type:
            vs.append(Violation("signature", f"edge {i} retyped"))
    # (3) temporal coherence
    lo, hi = cand.support
    olo, ohi = original.support
    if lo > hi or lo < olo or hi > ohi or not all(_within(r, cand.support) for _, r in cand.edges):
        vs.append(Violation("temporal-support", f"support {cand.support} within {original.support}"))
    # (4) provenance recoverable
    for i, r in cand.edges:
        if not r.provenance.source_system or not r.provenance.lineage:
            vs.append(Violation("provenance", f"edge {i} has no lineage"))
            break
    else:
        for e in cand.entities:
            if not cand.entity_lineage.get(e):
                vs.append(Violation("provenance", f"entity {e} has no lineage"))
                break
    # (5) semantic admissibility proxy
    dtype = _defining_type(original)
    if dtype is not None:
        focal = set(original.focal_entities)
        if not any(r.rel_type.value == dtype and (r.src in focal or r.dst in focal) for _, r in cand.edges):
            vs.append(Violation("semantic-admissibility", f"no {dtype} edge at the focal remains"))
    return ValidationResult(vs)


def check_containment(o: LearningObject, g: SubstrateGraph) -> list[str]:
    """Containment invariants of a constructed object against its source graph."""
    problems = []
    ents = set(o.entities)
    if not ents <= set(g.entities):
        problems.append("entity outside source graph")
    for i, r in o.edges:
        if not (0 <= i < len(g.edges)) or g.edges[i] != r:
            problems.append(f"edge {i} not in source graph")
        if r.src not in ents or r.dst not in ents:
            problems.append(f"edge {i} endpoint outside object")
        if not _within(r, o.support):
            problems.append(f"edge {i} outside support")
    if not set(o.focal_entities) <= ents:
        problems.append("focal outside object")
    return problems


# --------------------------------------------------------------------------- pairs


@dataclass(frozen=True)
class Pair:
    a: str
    b: str
    kind: str

    def to_json(self) -> str:
        return json.dumps({"a": self.a, "b": self.b, "kind": self.kind}, sort_keys=True, separators=(",", ":"))


SUMMARY_KEYS = ("n_entities", "n_edges", "focal_out", "focal_in", "distinct_neighbors", "max_degree")


def summary_vector(o: LearningObject) -> np.ndarray:
    tab = o.features.get("tabular", {})
    return np.array([float(tab.get(k) or 0.0) for k in SUMMARY_KEYS])


def composition(o: LearningObject) -> dict[str, float]:
    c = Counter(r.rel_type.value for _, r in o.edges)
    n = sum(c.values())
    return {k: v / n for k, v in c.items()} if n else {}


def _root(o: LearningObject) -> str:
    return o.derived_from or o.fingerprint


def _adjacent(a: LearningObject, b: LearningObject) -> bool:
    return a.support[1] in (b.support[0], b.support[0] - 1) or b.support[1] in (a.support[0], a.support[0] - 1)


def pair_policy(objects: Sequence[LearningObject], labels: Optional[Sequence[int]] = None,
                policy: str = "positive") -> list[Pair]:
    if len(objects) < 2:
        raise InsufficientObjects(f"{policy} pairs need at least two objects")
    if labels is not None and len(labels) != len(objects):
        raise ValueError("labels must align with objects")
    fps = [o.fingerprint for o in objects]
    n = len(objects)
    if policy == "positive":
        out = []
        for i in range(n):
            for j in range(i + 1, n):
                a, b = objects[i], objects[j]
                same_view_root = (a.derived_from or b.derived_from) and _root(a) == _root(b)
                adjacent = (a.view is None and b.view is None and a.kind == b.kind and a.focal == b.focal
                            and _adjacent(a, b))
                if same_view_root or adjacent:
                    out.append(Pair(fps[i], fps[j], "positive"))
        return out
    neg = []
    for i in range(n):
        for j in range(i + 1, n):
            if set(objects[i].focal_entities) == set(objects[j].focal_entities):
                continue
            if labels is not None and labels[i] == labels[j]:
                continue
            neg.append((i, j))
    if policy == "negative":
        return [Pair(fps[i], fps[j], "negative") for i, j in neg]
    if policy != "hard-negative":
        raise ValueError(f"unknown pair policy {policy!r}")
    if not neg:
        return []
    X = np.stack([summary_vector(o) for o in objects])
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - X.mean(axis=0)) / sd
    comps = [composition(o) for o in objects]
    d_tab = np.array([float(np.linalg.norm(Z[i] - Z[j])) for i, j in neg])
    d_comp = np.array([
        sum(abs(comps[i].get(k, 0.0) - comps[j].get(k, 0.0)) for k in set(comps[i]) | set(comps[j]))
        for i, j in neg
    ])
    tab_cut = np.quantile(d_tab, 0.10)
    comp_cut = np.median(d_comp)
    return [
        Pair(fps[i], fps[j], "hard-negative")
        for (i, j), dt, dc in zip(neg, d_tab, d_comp)
        if dt <= tab_cut and dc > comp_cut
    ]


def write_jsonl(path, items) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for it in items:
            fh.write(it.to_json())
            fh.write("\n")
