"""Deterministic canonical identity resolution with alias tables and merges."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .graph import EntityType, GraphDelta, Merge, SubstrateGraph, UnknownEntity

TYPE_PREFIX = {
    EntityType.HOST: "host",
    EntityType.USER: "user",
    EntityType.PROCESS: "proc",
    EntityType.FILE: "file",
    EntityType.NETWORK_FLOW: "flow",
    EntityType.CLOUD_RESOURCE: "cloud",
    EntityType.CREDENTIAL: "cred",
    EntityType.EXTERNAL_ENTITY: "ext",
}


class UnresolvableObservation(Exception):
    pass


@dataclass(frozen=True)
class NormStep:
    """One normalization step. ``arg`` carries the suffix or prefix list."""

    kind: str  # trim | lowercase | strip_suffix | strip_realm
    arg: tuple[str, ...] = ()

    def __call__(self, s: str) -> str:
        if self.kind == "trim":
            return s.strip()
        if self.kind == "lowercase":
            return s.lower()
        if self.kind == "strip_suffix":
            for suf in self.arg:
                if suf and s.lower().endswith(suf.lower()) and len(s) > len(suf):
                    return s[: -len(suf)]
            return s
        if self.kind == "strip_realm":
            for pre in self.arg:
                if pre and s.lower().startswith(pre.lower()) and len(s) > len(pre):
                    return s[len(pre) :]
            return s
        raise ValueError(f"unknown normalization step {self.kind!r}")


def normalize(surface: str, steps: Sequence[NormStep], fired: Optional[list] = None) -> str:
    """Apply ``steps`` repeatedly until the string stops changing.

    Iterating to a fixpoint is what makes the result idempotent even when
    steps interact (a stripped suffix can expose trailing whitespace).
    """
    cur = surface
    for _ in range(64):
        nxt = cur
        for step in steps:
            out = step(nxt)
            if fired is not None and out != nxt and step.kind not in fired:
                fired.append(step.kind)
            nxt = out
        if nxt == cur:
            return cur
        cur = nxt
    return cur


@dataclass
class TypePolicy:
    keys: list[str]
    steps: list[NormStep] = field(default_factory=lambda: [NormStep("trim"), NormStep("lowercase")])
    aliases: dict[str, str] = field(default_factory=dict)


@dataclass
class ResolutionPolicy:
    per_type: dict[EntityType, TypePolicy]

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResolutionPolicy":
        per_type = {}
        for tname, cfg in d.items():
            etype = EntityType.parse(tname)
            steps = [NormStep("trim")]
            if cfg.get("lowercase", True):
                steps.append(NormStep("lowercase"))
            if cfg.get("strip_realms"):
                steps.append(NormStep("strip_realm", tuple(cfg["strip_realms"])))
            if cfg.get("strip_suffixes"):
                steps.append(NormStep("strip_suffix", tuple(cfg["strip_suffixes"])))
            aliases = {normalize(k, steps): v for k, v in cfg.get("aliases", {}).items()}
            per_type[etype] = TypePolicy(list(cfg["keys"]), steps, aliases)
        return cls(per_type)

    @classmethod
    def load(cls, path) -> "ResolutionPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_aliases(self, etype: EntityType, aliases: Mapping[str, str]) -> "ResolutionPolicy":
        tp = self.per_type[etype]
        merged = dict(tp.aliases)
        merged.update({normalize(k, tp.steps): v for k, v in aliases.items()})
        per_type = dict(self.per_type)
        per_type[etype] = TypePolicy(list(tp.keys), list(tp.steps), merged)
        return ResolutionPolicy(per_type)


@dataclass(frozen=True)
class RawObservation:
    producer: str
    entity_hint: EntityType
    raw_fields: Mapping[str, str]

    def __post_init__(self):
        if not self.raw_fields:
            raise ValueError("raw_fields must be non-empty")


@dataclass(frozen=True)
class ResolutionOutcome:
    canonical_id: str
    matched_key: str
    lineage_note: str


def canonical_id(etype: EntityType, key: str) -> str:
    return f"{TYPE_PREFIX[etype]}:{key}"


def resolve_value(value: str, etype: EntityType, tp: TypePolicy, key_name: str = "") -> ResolutionOutcome:
    fired: list[str] = []
    norm = normalize(value, tp.steps, fired)
    if not norm:
        raise UnresolvableObservation(f"{etype.value}: {key_name} normalizes to empty")
    hit = tp.aliases.get(norm)
    cid = hit if hit is not None else canonical_id(etype, norm)
    note = f"key={key_name};steps={','.join(fired) or '-'};alias={'hit' if hit else 'miss'}"
    return ResolutionOutcome(cid, key_name, note)


def resolve(o: RawObservation, p: ResolutionPolicy) -> ResolutionOutcome:
    """Map an observation to its canonical id.

    The first configured key field present (and non-blank) wins; the alias
    table is consulted before an id is synthesized.
    """
    tp = p.per_type.get(o.entity_hint)
    if tp is None:
        raise UnresolvableObservation(f"no policy for {o.entity_hint.value}")
    for key in tp.keys:
        value = o.raw_fields.get(key)
        if value is not None and value.strip():
            return resolve_value(value, o.entity_hint, tp, key)
    raise UnresolvableObservation(
        f"{o.entity_hint.value}: none of {tp.keys} present in observation from {o.producer}"
    )


def merge_identities(g: SubstrateGraph, keep: str, absorb: str, at: Optional[int] = None) -> SubstrateGraph:
    """Fold ``absorb`` into ``keep`` through the delta path.

    Edges are re-pointed, ``absorb`` walks its lifecycle to Retired and both
    entities record the merge in their source metadata.
    """
    for eid in (keep, absorb):
        if eid not in g.entities:
            raise UnknownEntity(eid)
    if at is None:
        at = g.last_at if g.last_at is not None else 0
    return g.apply(GraphDelta(at=at, merges=[Merge(keep, absorb)]))
