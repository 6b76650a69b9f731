"""Thin telemetry adapters: raw CSV/JSONL records to canonical graph deltas.

All vendor variability lives here. Raw field names are recovered through
ordered alias lists, identifiers go through :mod:`csts.identity`, and every
record either yields one :class:`~csts.graph.GraphDelta` or a categorized
:class:`Skipped`.
"""

from __future__ import annotations

import calendar
import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Union

from .graph import (
    CanonicalEntity,
    CanonicalRelationship,
    EntityType,
    GraphDelta,
    LifecycleState,
    Provenance,
    RelationshipType,
    SourceLineage,
    SubstrateGraph,
    TransitionOp,
    signature_admits,
)
from .identity import RawObservation, ResolutionPolicy, UnresolvableObservation, resolve

log = logging.getLogger(__name__)

# logical fields each substrate schema version requires an adapter to provide
SCHEMA_REQUIREMENTS = {
    "1.0": {"event_id", "ts", "event", "user", "src_host", "dst_host", "process", "file_path", "dst_ip"},
    "1.1": {"event_id", "ts", "event", "user", "src_host", "dst_host", "process", "file_path", "dst_ip"},
}

SKIP_REASONS = (
    "malformed",
    "timestamp",
    "unknown event kind",
    "unresolvable src",
    "unresolvable dst",
)


class AdapterError(Exception):
    pass


class UnknownFormat(AdapterError):
    pass


class IoFailure(AdapterError):
    pass


class SchemaGovernanceError(AdapterError):
    pass


class _Missing:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "Missing"

    def __bool__(self) -> bool:
        return False


Missing = _Missing()


@dataclass(frozen=True)
class TelemetryRecord:
    producer: str
    raw_fields: Mapping[str, str]
    t_e: int
    t_i: int
    line_no: int


@dataclass(frozen=True)
class Skipped:
    line_no: int
    reason: str
    detail: str = ""


@dataclass(frozen=True)
class Endpoint:
    field: str
    entity_type: EntityType
    attrs: Mapping[str, tuple[str, str]] = field(default_factory=dict)  # attr -> (logical, scalar)


@dataclass(frozen=True)
class EventKind:
    rel_type: RelationshipType
    src: Endpoint
    dst: Endpoint
    edge_attrs: Mapping[str, tuple[str, str]] = field(default_factory=dict)


@dataclass
class AdapterSpec:
    name: str
    producer: str
    schema_version: str
    logical_fields: dict[str, list[str]]
    event_kind_map: dict[str, EventKind]
    timestamp_formats: list[str]
    kind_inference: list[tuple[str, str]] = field(default_factory=list)
    deprecated_fields: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AdapterSpec":
        def endpoint(cfg) -> Endpoint:
            return Endpoint(
                cfg["field"],
                EntityType.parse(cfg["type"]),
                {k: (v[0], v[1]) for k, v in cfg.get("attrs", {}).items()},
            )

        kinds = {}
        for label, cfg in d["event_kind_map"].items():
            kinds[label] = EventKind(
                RelationshipType.parse(cfg["rel"]),
                endpoint(cfg["src"]),
                endpoint(cfg["dst"]),
                {k: (v[0], v[1]) for k, v in cfg.get("edge_attrs", {}).items()},
            )
        spec = cls(
            name=d["name"],
            producer=d["producer"],
            schema_version=d["schema_version"],
            logical_fields={k: list(v) for k, v in d["logical_fields"].items()},
            event_kind_map=kinds,
            timestamp_formats=list(d.get("timestamp_formats", ["epoch"])),
            kind_inference=[(a, b) for a, b in d.get("kind_inference", [])],
            deprecated_fields=dict(d.get("deprecated_fields", {})),
        )
        spec.check()
        return spec

    @classmethod
    def load(cls, path) -> "AdapterSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def check(self) -> None:
        """Load-time governance gate."""
        required = SCHEMA_REQUIREMENTS.get(self.schema_version)
        if required is None:
            known = ", ".join(sorted(SCHEMA_REQUIREMENTS))
            raise SchemaGovernanceError(
                f"{self.name}: schema version {self.schema_version} not among {known}"
            )
        missing = sorted(f for f in required if f not in self.logical_fields and f not in self.deprecated_fields)
        if missing:
            raise SchemaGovernanceError(
                f"{self.name}: required logical fields removed without deprecation: {missing}"
            )
        for label, k in self.event_kind_map.items():
            if not signature_admits(k.rel_type, k.src.entity_type, k.dst.entity_type):
                raise SchemaGovernanceError(
                    f"{self.name}: {label} maps to {k.rel_type.value}"
                    f"({k.src.entity_type.value}, {k.dst.entity_type.value})"
                )
            refs = [k.src.field, k.dst.field]
            refs += [v[0] for v in k.src.attrs.values()]
            refs += [v[0] for v in k.dst.attrs.values()]
            refs += [v[0] for v in k.edge_attrs.values()]
            for ref in refs:
                if ref not in self.logical_fields:
                    raise SchemaGovernanceError(f"{self.name}: {label} references undeclared field {ref!r}")
        for logical, label in self.kind_inference:
            if logical not in self.logical_fields or label not in self.event_kind_map:
                raise SchemaGovernanceError(f"{self.name}: bad kind inference rule {logical!r}->{label!r}")


def builtin_spec(name: str) -> AdapterSpec:
    """Shipped vendor flavors: ``"enva"`` and ``"envb"``."""
    text = resources.files("csts.data").joinpath(f"adapter_{name}.json").read_text(encoding="utf-8")
    return AdapterSpec.from_dict(json.loads(text))


def builtin_policy(name: str) -> ResolutionPolicy:
    text = resources.files("csts.data").joinpath(f"policy_{name}.json").read_text(encoding="utf-8")
    return ResolutionPolicy.from_dict(json.loads(text))


# --------------------------------------------------------------------------- timestamps


def parse_timestamp(value: str, formats: Iterable[str]) -> Optional[int]:
    value = value.strip()
    for fmt in formats:
        try:
            if fmt == "epoch":
                return int(float(value)) if value.replace(".", "", 1).isdigit() else int(value)
            if fmt == "iso8601":
                dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
                if dt.tzinfo is None:
                    return calendar.timegm(dt.timetuple())
                return calendar.timegm(dt.utctimetuple())
            if fmt.startswith("strptime:"):
                return calendar.timegm(datetime.strptime(value, fmt[9:]).timetuple())
        except ValueError:
            continue
    return None


def format_iso8601(epoch: int) -> str:
    return datetime.utcfromtimestamp(epoch).strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------- parsing


def _detect_format(path: Path, fmt: Optional[str]) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = {".csv": "csv", ".jsonl": "jsonl", ".json": "jsonl"}.get(path.suffix.lower(), "")
    if fmt not in ("csv", "jsonl"):
        raise UnknownFormat(f"{path}: cannot infer format (got {fmt!r})")
    return fmt


def _raw_rows(path: Path, fmt: str) -> Iterator[Union[dict, Skipped]]:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    with fh:
        if fmt == "csv":
            reader = csv.DictReader(fh)
            for i, row in enumerate(reader, start=1):
                if None in row or any(v is None for v in row.values()):
                    yield Skipped(i, "malformed", "column count mismatch")
                    continue
                yield row
        else:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    yield Skipped(i, "malformed", "blank line")
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    yield Skipped(i, "malformed", str(exc))
                    continue
                if not isinstance(obj, dict):
                    yield Skipped(i, "malformed", "not an object")
                    continue
                yield {k: ("" if v is None else str(v)) for k, v in obj.items()}


def parse_records(path, spec: AdapterSpec, fmt: Optional[str] = None) -> Iterator[Union[TelemetryRecord, Skipped]]:
    """Yield records in file order; bad lines come out as :class:`Skipped`."""
    path = Path(path)
    fmt = _detect_format(path, fmt)
    ts_aliases = spec.logical_fields.get("ts", ["ts"])
    line_no = 0
    for item in _raw_rows(path, fmt):
        line_no += 1
        if isinstance(item, Skipped):
            yield item
            continue
        fields = {k: v for k, v in item.items() if v != ""}
        raw_ts = next((fields[a] for a in ts_aliases if a in fields), None)
        t_e = parse_timestamp(raw_ts, spec.timestamp_formats) if raw_ts is not None else None
        if t_e is None:
            yield Skipped(line_no, "timestamp", f"{raw_ts!r}")
            continue
        yield TelemetryRecord(spec.producer, fields, t_e, line_no, line_no)


def recover_field(rec: TelemetryRecord, logical: str, spec: AdapterSpec):
    """First present alias in declared order, else ``Missing``."""
    try:
        aliases = spec.logical_fields[logical]
    except KeyError:
        raise KeyError(f"{logical!r} not declared in adapter {spec.name}") from None
    for alias in aliases:
        v = rec.raw_fields.get(alias)
        if v is not None and v != "":
            return v
    return Missing


def _convert(value: str, scalar: str):
    if scalar == "string":
        return value
    if scalar in ("integer", "timestamp"):
        return int(float(value))
    if scalar == "float":
        return float(value)
    if scalar == "boolean":
        return value.strip().lower() in ("1", "true", "yes")
    raise ValueError(scalar)


def _attrs(rec: TelemetryRecord, spec: AdapterSpec, mapping: Mapping[str, tuple[str, str]]) -> dict:
    out = {}
    for name, (logical, scalar) in mapping.items():
        v = recover_field(rec, logical, spec)
        if v is Missing:
            continue
        try:
            out[name] = _convert(v, scalar)
        except ValueError:
            continue
    return out


def adapt(
    rec: TelemetryRecord,
    spec: AdapterSpec,
    policy: ResolutionPolicy,
    known: Optional[set] = None,
) -> Union[GraphDelta, Skipped]:
    """Map one record to a delta: two entity upserts and one typed edge.

    ``known`` is the set of canonical ids already seen by the caller; first
    sightings get a Created->Active transition. It is updated in place.
    """
    lineage = [f"adapter:{spec.name}"]
    label = recover_field(rec, "event", spec) if "event" in spec.logical_fields else Missing
    if label is Missing:
        label = next(
            (k for logical, k in spec.kind_inference if recover_field(rec, logical, spec) is not Missing),
            Missing,
        )
        if label is Missing:
            return Skipped(rec.line_no, "unknown event kind", "no event label and no inference rule matched")
        lineage.append("infer-kind")
    kind = spec.event_kind_map.get(label.strip())
    if kind is None:
        return Skipped(rec.line_no, "unknown event kind", label)
    lineage.append("resolve")

    ids = []
    for role, ep in (("src", kind.src), ("dst", kind.dst)):
        value = recover_field(rec, ep.field, spec)
        if value is Missing:
            return Skipped(rec.line_no, f"unresolvable {role}", f"{ep.field} missing")
        try:
            out = resolve(RawObservation(rec.producer, ep.entity_type, {ep.field: value}), policy)
        except UnresolvableObservation as exc:
            return Skipped(rec.line_no, f"unresolvable {role}", str(exc))
        ids.append(out.canonical_id)

    if known is None:
        known = set()
    src_meta = [SourceLineage(rec.producer, f"adapter:{spec.name}")]
    upserts, transitions = [], []
    for eid, ep in zip(ids, (kind.src, kind.dst)):
        attrs = _attrs(rec, spec, ep.attrs)
        if upserts and upserts[0].id == eid:
            upserts[0].attributes.update(attrs)
            continue
        upserts.append(CanonicalEntity(eid, ep.entity_type, attrs, list(src_meta), valid_from=rec.t_e))
        if eid not in known:
            known.add(eid)
            transitions.append(TransitionOp(eid, LifecycleState.ACTIVE, rec.t_e))

    edge = CanonicalRelationship(
        src=ids[0],
        dst=ids[1],
        rel_type=kind.rel_type,
        time=rec.t_e,
        provenance=Provenance(rec.producer, rec.t_i, rec.t_e, 1.0, tuple(lineage)),
        attributes=_attrs(rec, spec, kind.edge_attrs),
    )
    return GraphDelta(at=rec.t_e, entity_upserts=upserts, lifecycle_transitions=transitions, edge_inserts=[edge])


# --------------------------------------------------------------------------- ingest


@dataclass
class IngestReport:
    adapter: str
    producer: str
    records: int = 0
    emitted: int = 0
    skipped: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {
            "adapter": self.adapter,
            "producer": self.producer,
            "records": self.records,
            "emitted": self.emitted,
            "skipped": {r: self.skipped.get(r, 0) for r in SKIP_REASONS},
        }


def ingest_records(
    items: Iterable[Union[TelemetryRecord, Skipped]],
    spec: AdapterSpec,
    policy: ResolutionPolicy,
    graph: Optional[SubstrateGraph] = None,
) -> tuple[SubstrateGraph, IngestReport]:
    g = graph if graph is not None else SubstrateGraph()
    report = IngestReport(spec.name, spec.producer)
    records = []
    for item in items:
        report.records += 1
        if isinstance(item, Skipped):
            report.skipped[item.reason] += 1
        else:
            records.append(item)
    # emission order fixed by (event time, source position) for replay determinism
    records.sort(key=lambda r: (r.t_e, r.line_no))
    known = set(g.entities)
    for rec in records:
        out = adapt(rec, spec, policy, known)
        if isinstance(out, Skipped):
            report.skipped[out.reason] += 1
            continue
        g.apply(out)
        report.emitted += 1
    log.info("ingested %s: %d emitted, %d skipped", spec.name, report.emitted, sum(report.skipped.values()))
    return g, report


def ingest_file(path, spec: AdapterSpec, policy: ResolutionPolicy, fmt: Optional[str] = None):
    return ingest_records(parse_records(path, spec, fmt), spec, policy)
