"""Canonical multigraph: entity/relationship types, invariants and delta log.

The graph only ever changes through :class:`GraphDelta` objects. Every
accepted delta is appended to ``delta_log`` so that folding the log over an
empty graph reproduces the live graph exactly.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence, Union

SCHEMA_VERSION = "1.1"


class EntityType(str, Enum):
    HOST = "Host"
    USER = "User"
    PROCESS = "Process"
    FILE = "File"
    NETWORK_FLOW = "NetworkFlow"
    CLOUD_RESOURCE = "CloudResource"
    CREDENTIAL = "Credential"
    EXTERNAL_ENTITY = "ExternalEntity"

    @classmethod
    def parse(cls, name: str) -> "EntityType":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown entity type {name!r}") from None


class RelationshipType(str, Enum):
    AUTHENTICATES_TO = "AUTHENTICATES_TO"
    EXECUTES = "EXECUTES"
    CONNECTS_TO = "CONNECTS_TO"
    READS = "READS"
    WRITES = "WRITES"
    MODIFIES = "MODIFIES"
    SPAWNS = "SPAWNS"
    OWNS = "OWNS"
    ASSOCIATED_WITH = "ASSOCIATED_WITH"

    @classmethod
    def parse(cls, name: str) -> "RelationshipType":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown relationship type {name!r}") from None


E = EntityType
_ANY = frozenset(EntityType)

# (allowed source types, allowed target types); ASSOCIATED_WITH is the untyped escape hatch
SIGNATURES: dict[RelationshipType, tuple[frozenset, frozenset]] = {
    RelationshipType.AUTHENTICATES_TO: (frozenset({E.USER, E.CREDENTIAL}), frozenset({E.HOST})),
    RelationshipType.EXECUTES: (frozenset({E.USER, E.HOST}), frozenset({E.PROCESS})),
    RelationshipType.SPAWNS: (frozenset({E.PROCESS}), frozenset({E.PROCESS})),
    RelationshipType.CONNECTS_TO: (
        frozenset({E.HOST, E.PROCESS}),
        frozenset({E.HOST, E.EXTERNAL_ENTITY}),
    ),
    RelationshipType.READS: (frozenset({E.PROCESS}), frozenset({E.FILE})),
    RelationshipType.WRITES: (frozenset({E.PROCESS}), frozenset({E.FILE})),
    RelationshipType.MODIFIES: (frozenset({E.PROCESS}), frozenset({E.FILE})),
    RelationshipType.OWNS: (
        frozenset({E.USER}),
        frozenset({E.CREDENTIAL, E.CLOUD_RESOURCE, E.HOST}),
    ),
    RelationshipType.ASSOCIATED_WITH: (_ANY, _ANY),
}


def signature_admits(rel_type: RelationshipType, src_type: EntityType, dst_type: EntityType) -> bool:
    sources, targets = SIGNATURES[rel_type]
    return src_type in sources and dst_type in targets


class LifecycleState(str, Enum):
    CREATED = "Created"
    ACTIVE = "Active"
    DORMANT = "Dormant"
    RETIRED = "Retired"


LIFECYCLE_CHAIN = (
    LifecycleState.CREATED,
    LifecycleState.ACTIVE,
    LifecycleState.DORMANT,
    LifecycleState.RETIRED,
)


class ScalarType(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    FLOAT = "float"
    TIMESTAMP = "timestamp"
    BOOLEAN = "boolean"


def scalar_conforms(value: Any, kind: ScalarType) -> bool:
    if kind is ScalarType.STRING:
        return isinstance(value, str)
    if kind is ScalarType.BOOLEAN:
        return isinstance(value, bool)
    if kind in (ScalarType.INTEGER, ScalarType.TIMESTAMP):
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, (int, float)) and not isinstance(value, bool)


AttributeSchema = Mapping[EntityType, Mapping[str, ScalarType]]

S = ScalarType
DEFAULT_ATTRIBUTE_SCHEMA: dict[EntityType, dict[str, ScalarType]] = {
    E.HOST: {"community": S.STRING, "os": S.STRING, "last_seen": S.TIMESTAMP},
    E.USER: {"community": S.STRING, "logon_count": S.INTEGER, "is_service": S.BOOLEAN},
    E.PROCESS: {"image": S.STRING, "integrity": S.STRING},
    E.FILE: {"path": S.STRING, "size": S.INTEGER},
    E.NETWORK_FLOW: {"bytes": S.INTEGER, "duration": S.FLOAT, "port": S.INTEGER},
    E.CLOUD_RESOURCE: {"provider": S.STRING, "region": S.STRING},
    E.CREDENTIAL: {"kind": S.STRING, "privileged": S.BOOLEAN},
    E.EXTERNAL_ENTITY: {"port": S.INTEGER, "asn": S.INTEGER, "reputation": S.FLOAT},
}


# --------------------------------------------------------------------------- errors


class GraphError(Exception):
    """Base class for substrate invariant failures."""


class UnknownEntity(GraphError):
    pass


class SignatureViolation(GraphError):
    pass


class TemporalMisalignment(GraphError):
    pass


class OutOfOrderDelta(GraphError):
    pass


class IllegalTransition(GraphError):
    pass


class StaleTimestamp(GraphError):
    pass


class TypeMismatch(GraphError):
    pass


class InvalidEntity(GraphError):
    def __init__(self, entity_id: str, violations: Sequence["Violation"]):
        self.entity_id = entity_id
        self.violations = list(violations)
        detail = "; ".join(v.code for v in self.violations)
        super().__init__(f"entity {entity_id!r} rejected: {detail}")


# --------------------------------------------------------------------------- domain types


@dataclass(frozen=True)
class Transition:
    from_state: LifecycleState
    to_state: LifecycleState
    at: int


@dataclass
class Lifecycle:
    state: LifecycleState = LifecycleState.CREATED
    transitions: list[Transition] = field(default_factory=list)

    def copy(self) -> "Lifecycle":
        return Lifecycle(self.state, list(self.transitions))


@dataclass(frozen=True)
class SourceLineage:
    source_system: str
    adapter: str
    note: str = ""


@dataclass
class CanonicalEntity:
    id: str
    entity_type: EntityType
    attributes: dict[str, Any] = field(default_factory=dict)
    source_meta: list[SourceLineage] = field(default_factory=list)
    valid_from: int = 0
    valid_to: Optional[int] = None  # None means the interval is still open
    lifecycle: Lifecycle = field(default_factory=Lifecycle)

    def copy(self) -> "CanonicalEntity":
        return CanonicalEntity(
            self.id,
            self.entity_type,
            dict(self.attributes),
            list(self.source_meta),
            self.valid_from,
            self.valid_to,
            self.lifecycle.copy(),
        )

    def covers(self, lo: int, hi: int) -> bool:
        return self.valid_from <= lo and (self.valid_to is None or hi <= self.valid_to)


@dataclass(frozen=True)
class Provenance:
    source_system: str
    ingestion_time: int
    valid_time: Union[int, tuple[int, int]]
    confidence: float = 1.0
    lineage: tuple[str, ...] = ()


TimeSpec = Union[int, tuple[int, int]]


def time_bounds(t: TimeSpec) -> tuple[int, int]:
    if isinstance(t, tuple):
        return t
    return t, t


@dataclass(frozen=True)
class CanonicalRelationship:
    src: str
    dst: str
    rel_type: RelationshipType
    time: TimeSpec
    provenance: Provenance
    attributes: Mapping[str, Any] = field(default_factory=dict)

    @property
    def start(self) -> int:
        return time_bounds(self.time)[0]

    @property
    def end(self) -> int:
        return time_bounds(self.time)[1]

    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.rel_type.value)


@dataclass(frozen=True)
class TransitionOp:
    entity_id: str
    to_state: LifecycleState
    at: int


@dataclass(frozen=True)
class Merge:
    keep: str
    absorb: str


@dataclass
class GraphDelta:
    at: int
    entity_upserts: list[CanonicalEntity] = field(default_factory=list)
    lifecycle_transitions: list[TransitionOp] = field(default_factory=list)
    edge_inserts: list[CanonicalRelationship] = field(default_factory=list)
    merges: list[Merge] = field(default_factory=list)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""


@dataclass
class ValidationResult:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def validate_entity(
    e: CanonicalEntity, schema: AttributeSchema = DEFAULT_ATTRIBUTE_SCHEMA
) -> ValidationResult:
    """Check entity invariants; violations are returned, never raised."""
    out = []
    if not e.id:
        out.append(Violation("empty id"))
    if e.valid_to is not None and e.valid_to < e.valid_from:
        out.append(Violation("inverted validity interval", f"{e.valid_from} > {e.valid_to}"))
    if not e.source_meta:
        out.append(Violation("missing provenance"))
    declared = schema.get(e.entity_type, {})
    for name, value in e.attributes.items():
        kind = declared.get(name)
        if kind is None:
            out.append(Violation("unknown attribute", name))
        elif not scalar_conforms(value, kind):
            out.append(Violation("type mismatch", f"{name}: expected {kind.value}, got {value!r}"))
    return ValidationResult(out)


def transition_lifecycle(e: CanonicalEntity, to: LifecycleState, at: int) -> CanonicalEntity:
    """Advance ``e`` one step along the forward lifecycle chain, in place."""
    to = LifecycleState(to)
    cur = e.lifecycle.state
    idx = LIFECYCLE_CHAIN.index(cur)
    if idx + 1 >= len(LIFECYCLE_CHAIN) or LIFECYCLE_CHAIN[idx + 1] is not to:
        raise IllegalTransition(f"{e.id}: {cur.value} -> {to.value}")
    if e.lifecycle.transitions and at < e.lifecycle.transitions[-1].at:
        raise StaleTimestamp(f"{e.id}: transition at {at} precedes {e.lifecycle.transitions[-1].at}")
    e.lifecycle.transitions.append(Transition(cur, to, at))
    e.lifecycle.state = to
    if to is LifecycleState.RETIRED and e.valid_to is None:
        e.valid_to = at
    return e


@dataclass(frozen=True)
class Neighborhood:
    focal: str
    nodes: tuple[str, ...]
    edges: tuple[tuple[int, CanonicalRelationship], ...]


class SubstrateGraph:
    """Time-indexed attributed multigraph with an append-only delta log.

    Writes are serialized through :meth:`apply`; reads (snapshots,
    neighborhoods) never mutate the graph.
    """

    def __init__(
        self,
        schema: AttributeSchema = DEFAULT_ATTRIBUTE_SCHEMA,
        schema_version: str = SCHEMA_VERSION,
    ):
        self.entities: dict[str, CanonicalEntity] = {}
        self.edges: list[CanonicalRelationship] = []
        self.delta_log: list[GraphDelta] = []
        self.schema = schema
        self.schema_version = schema_version
        self._adj: dict[str, list[int]] = defaultdict(list)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SubstrateGraph):
            return NotImplemented
        return (
            self.schema_version == other.schema_version
            and self.entities == other.entities
            and self.edges == other.edges
            and self.delta_log == other.delta_log
        )

    def __repr__(self) -> str:
        return (
            f"SubstrateGraph(|V|={len(self.entities)}, |E|={len(self.edges)}, "
            f"deltas={len(self.delta_log)})"
        )

    @property
    def last_at(self) -> Optional[int]:
        return self.delta_log[-1].at if self.delta_log else None

    def entity_type(self, eid: str) -> EntityType:
        try:
            return self.entities[eid].entity_type
        except KeyError:
            raise UnknownEntity(eid) from None

    def incident(self, eid: str) -> list[int]:
        return self._adj.get(eid, [])

    # ------------------------------------------------------------------ writes

    def apply(self, d: GraphDelta) -> "SubstrateGraph":
        """Validate ``d`` against a staging overlay, then commit it whole."""
        if self.delta_log and d.at < self.delta_log[-1].at:
            raise OutOfOrderDelta(f"delta at {d.at} precedes {self.delta_log[-1].at}")

        staged: dict[str, CanonicalEntity] = {}

        def current(eid: str) -> CanonicalEntity:
            if eid in staged:
                return staged[eid]
            if eid not in self.entities:
                raise UnknownEntity(eid)
            staged[eid] = self.entities[eid].copy()
            return staged[eid]

        for u in d.entity_upserts:
            result = validate_entity(u, self.schema)
            if not result.ok:
                raise InvalidEntity(u.id, result.violations)
            if u.id not in staged and u.id in self.entities:
                e0 = self.entities[u.id]
                if (
                    e0.entity_type is u.entity_type
                    and e0.valid_from <= u.valid_from
                    and all(e0.attributes.get(k) == v for k, v in u.attributes.items())
                    and all(s in e0.source_meta for s in u.source_meta)
                ):
                    continue  # no-op upsert; skip the staging copy
            if u.id in staged or u.id in self.entities:
                e = current(u.id)
                if e.entity_type is not u.entity_type:
                    raise TypeMismatch(
                        f"{u.id}: {e.entity_type.value} upserted as {u.entity_type.value}"
                    )
                e.attributes.update(u.attributes)
                for s in u.source_meta:
                    if s not in e.source_meta:
                        e.source_meta.append(s)
                e.valid_from = min(e.valid_from, u.valid_from)
            else:
                staged[u.id] = u.copy()

        for op in d.lifecycle_transitions:
            transition_lifecycle(current(op.entity_id), op.to_state, op.at)

        edges = self.edges
        if d.merges:
            edges = list(self.edges)
            for m in d.merges:
                self._stage_merge(m, d.at, current, edges)

        for r in d.edge_inserts:
            self._check_edge(r, staged)

        # commit
        if d.merges:
            self.edges = edges
            self.entities.update(staged)
            self._rebuild_adjacency()
        else:
            self.entities.update(staged)
        for r in d.edge_inserts:
            idx = len(self.edges)
            self.edges.append(r)
            self._adj[r.src].append(idx)
            if r.dst != r.src:
                self._adj[r.dst].append(idx)
        self.delta_log.append(d)
        return self

    def _check_edge(self, r: CanonicalRelationship, staged: Mapping[str, CanonicalEntity]) -> None:
        src = staged.get(r.src) or self.entities.get(r.src)
        dst = staged.get(r.dst) or self.entities.get(r.dst)
        if src is None or dst is None:
            raise UnknownEntity(r.src if src is None else r.dst)
        if not signature_admits(r.rel_type, src.entity_type, dst.entity_type):
            raise SignatureViolation(
                f"{r.rel_type.value}({src.entity_type.value}, {dst.entity_type.value})"
            )
        lo, hi = time_bounds(r.time)
        if lo > hi:
            raise TemporalMisalignment(f"inverted edge interval [{lo}, {hi}]")
        if not (src.covers(lo, hi) and dst.covers(lo, hi)):
            raise TemporalMisalignment(
                f"edge time [{lo}, {hi}] outside validity of {r.src} or {r.dst}"
            )
        if not 0.0 <= r.provenance.confidence <= 1.0:
            raise GraphError(f"confidence {r.provenance.confidence} outside [0, 1]")

    def _stage_merge(self, m: Merge, at: int, current, edges: list[CanonicalRelationship]) -> None:
        keep, absorb = current(m.keep), current(m.absorb)
        if m.keep == m.absorb:
            raise GraphError("cannot merge an entity into itself")
        if keep.entity_type is not absorb.entity_type:
            raise TypeMismatch(
                f"{m.keep} is {keep.entity_type.value}, {m.absorb} is {absorb.entity_type.value}"
            )
        keep.valid_from = min(keep.valid_from, absorb.valid_from)
        keep.source_meta.append(SourceLineage("substrate", "merge", f"absorbed {m.absorb}"))
        absorb.source_meta.append(SourceLineage("substrate", "merge", f"merged into {m.keep}"))
        step = f"merge:{m.absorb}->{m.keep}"
        for i, r in enumerate(edges):
            if r.src == m.absorb or r.dst == m.absorb:
                prov = replace(r.provenance, lineage=r.provenance.lineage + (step,))
                edges[i] = replace(
                    r,
                    src=m.keep if r.src == m.absorb else r.src,
                    dst=m.keep if r.dst == m.absorb else r.dst,
                    provenance=prov,
                )
                lo, hi = time_bounds(r.time)
                if not keep.covers(lo, hi):
                    raise TemporalMisalignment(f"re-pointed edge [{lo}, {hi}] outside {m.keep}")
        idx = LIFECYCLE_CHAIN.index(absorb.lifecycle.state)
        for nxt in LIFECYCLE_CHAIN[idx + 1 :]:
            transition_lifecycle(absorb, nxt, at)
        absorb.valid_to = min(absorb.valid_to, at) if absorb.valid_to is not None else at

    def _rebuild_adjacency(self) -> None:
        self._adj = defaultdict(list)
        for i, r in enumerate(self.edges):
            self._adj[r.src].append(i)
            if r.dst != r.src:
                self._adj[r.dst].append(i)

    def insert_edge(self, r: CanonicalRelationship) -> "SubstrateGraph":
        at = r.start if self.last_at is None else max(self.last_at, r.start)
        return self.apply(GraphDelta(at=at, edge_inserts=[r]))

    # ------------------------------------------------------------------ reads

    def snapshot_at(self, t: int) -> "SubstrateGraph":
        return replay((d for d in self.delta_log if d.at <= t), self.schema, self.schema_version)

    def neighborhood(
        self,
        focal: str,
        hops: int = 1,
        window: Optional[tuple[int, int]] = None,
        type_filter: Optional[Iterable[RelationshipType]] = None,
        max_nodes: int = 50,
    ) -> Neighborhood:
        if focal not in self.entities:
            raise UnknownEntity(focal)
        if max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        types = frozenset(type_filter) if type_filter else None

        def admitted(r: CanonicalRelationship) -> bool:
            if types is not None and r.rel_type not in types:
                return False
            if window is not None:
                lo, hi = time_bounds(r.time)
                return window[0] <= lo and hi <= window[1]
            return True

        selected = [focal]
        seen = {focal}
        frontier = [focal]
        for _ in range(hops):
            nxt = set()
            for node in frontier:
                for i in self._adj.get(node, ()):
                    r = self.edges[i]
                    if not admitted(r):
                        continue
                    other = r.dst if r.src == node else r.src
                    if other not in seen:
                        nxt.add(other)
            frontier = []
            for node in sorted(nxt):
                if len(selected) >= max_nodes:
                    break
                seen.add(node)
                selected.append(node)
                frontier.append(node)
            if len(selected) >= max_nodes:
                break
        members = set(selected)
        idxs = sorted(
            {
                i
                for n in selected
                for i in self._adj.get(n, ())
                if self.edges[i].src in members
                and self.edges[i].dst in members
                and admitted(self.edges[i])
            }
        )
        return Neighborhood(focal, tuple(selected), tuple((i, self.edges[i]) for i in idxs))

    def edges_between(self, lo: int, hi: int) -> Iterator[tuple[int, CanonicalRelationship]]:
        """Edges whose start lies in the half-open range [lo, hi)."""
        for i, r in enumerate(self.edges):
            if lo <= r.start < hi:
                yield i, r


def replay(
    deltas: Iterable[GraphDelta],
    schema: AttributeSchema = DEFAULT_ATTRIBUTE_SCHEMA,
    schema_version: str = SCHEMA_VERSION,
) -> SubstrateGraph:
    g = SubstrateGraph(schema, schema_version)
    for d in deltas:
        g.apply(d)
    return g


# module-level aliases matching the operation names used elsewhere
def apply_delta(g: SubstrateGraph, d: GraphDelta) -> SubstrateGraph:
    return g.apply(d)


def insert_edge(g: SubstrateGraph, r: CanonicalRelationship) -> SubstrateGraph:
    return g.insert_edge(r)


def snapshot_at(g: SubstrateGraph, t: int) -> SubstrateGraph:
    return g.snapshot_at(t)


def neighborhood(g: SubstrateGraph, focal: str, hops: int = 1, window=None, type_filter=None, max_nodes: int = 50):
    return g.neighborhood(focal, hops, window, type_filter, max_nodes)


# --------------------------------------------------------------------------- JSONL


def _time_to_json(t: TimeSpec):
    return list(t) if isinstance(t, tuple) else t


def _time_from_json(v) -> TimeSpec:
    return (int(v[0]), int(v[1])) if isinstance(v, list) else int(v)


def entity_to_dict(e: CanonicalEntity) -> dict:
    return {
        "id": e.id,
        "type": e.entity_type.value,
        "attributes": e.attributes,
        "source_meta": [[s.source_system, s.adapter, s.note] for s in e.source_meta],
        "valid": [e.valid_from, e.valid_to],
        "lifecycle": {
            "state": e.lifecycle.state.value,
            "transitions": [[t.from_state.value, t.to_state.value, t.at] for t in e.lifecycle.transitions],
        },
    }


def entity_from_dict(d: Mapping) -> CanonicalEntity:
    lc = d.get("lifecycle", {})
    return CanonicalEntity(
        id=d["id"],
        entity_type=EntityType.parse(d["type"]),
        attributes=dict(d.get("attributes", {})),
        source_meta=[SourceLineage(*s) for s in d.get("source_meta", [])],
        valid_from=d["valid"][0],
        valid_to=d["valid"][1],
        lifecycle=Lifecycle(
            LifecycleState(lc.get("state", "Created")),
            [
                Transition(LifecycleState(a), LifecycleState(b), at)
                for a, b, at in lc.get("transitions", [])
            ],
        ),
    )


def edge_to_dict(r: CanonicalRelationship) -> dict:
    p = r.provenance
    return {
        "src": r.src,
        "dst": r.dst,
        "type": r.rel_type.value,
        "time": _time_to_json(r.time),
        "attributes": dict(r.attributes),
        "provenance": {
            "source_system": p.source_system,
            "ingestion_time": p.ingestion_time,
            "valid_time": _time_to_json(p.valid_time),
            "confidence": p.confidence,
            "lineage": list(p.lineage),
        },
    }


def edge_from_dict(d: Mapping) -> CanonicalRelationship:
    p = d["provenance"]
    return CanonicalRelationship(
        src=d["src"],
        dst=d["dst"],
        rel_type=RelationshipType.parse(d["type"]),
        time=_time_from_json(d["time"]),
        provenance=Provenance(
            p["source_system"],
            p["ingestion_time"],
            _time_from_json(p["valid_time"]),
            p["confidence"],
            tuple(p["lineage"]),
        ),
        attributes=dict(d.get("attributes", {})),
    )


def delta_to_dict(d: GraphDelta) -> dict:
    out = {
        "at": d.at,
        "entities": [entity_to_dict(e) for e in d.entity_upserts],
        "transitions": [[t.entity_id, t.to_state.value, t.at] for t in d.lifecycle_transitions],
        "edges": [edge_to_dict(r) for r in d.edge_inserts],
    }
    if d.merges:
        out["merges"] = [[m.keep, m.absorb] for m in d.merges]
    return out


def delta_from_dict(d: Mapping) -> GraphDelta:
    return GraphDelta(
        at=d["at"],
        entity_upserts=[entity_from_dict(e) for e in d.get("entities", [])],
        lifecycle_transitions=[
            TransitionOp(eid, LifecycleState(s), at) for eid, s, at in d.get("transitions", [])
        ],
        edge_inserts=[edge_from_dict(r) for r in d.get("edges", [])],
        merges=[Merge(k, a) for k, a in d.get("merges", [])],
    )


def dumps_delta(d: GraphDelta) -> str:
    return json.dumps(delta_to_dict(d), sort_keys=True, separators=(",", ":"))


def export_jsonl(g: SubstrateGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in g.delta_log:
            fh.write(dumps_delta(d))
            fh.write("\n")


def import_jsonl(path, schema: AttributeSchema = DEFAULT_ATTRIBUTE_SCHEMA) -> SubstrateGraph:
    def deltas():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield delta_from_dict(json.loads(line))

    return replay(deltas(), schema)
