"""Tumbling windows and per-window feature matrices for both pipelines.

The event-centric baseline binds raw column names directly and counts raw
strings. The substrate pipeline reads canonical graph edges and compares
them against a :class:`TrainHistory` fitted on the training split only.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .graph import CanonicalRelationship, EntityType, RelationshipType, SubstrateGraph
from .synth import EPOCH_ORIGIN

R = RelationshipType

CHANNELS: dict[str, frozenset] = {
    "process": frozenset({R.EXECUTES, R.SPAWNS}),
    "file": frozenset({R.READS, R.WRITES, R.MODIFIES}),
    "network": frozenset({R.CONNECTS_TO}),
}

LM_FEATURES = (
    "out_degree", "new_edge_count", "new_edge_rate", "two_hop", "rarity", "priv_spread", "priv_spread_missing",
)
ZDT_FEATURES = (
    "n_flows", "distinct_dst", "active_src", "max_fanout", "two_hop", "new_edge_count", "new_edge_rate",
    "rarity", "rarity_missing",
)


class MissingColumn(Exception):
    def __init__(self, column: str):
        self.column = column
        super().__init__(column)


class UnfittedHistory(Exception):
    pass


class HistoryMismatch(Exception):
    """A history fitted on one split was offered for a different split."""


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class WindowIndexer:
    window_minutes: int = 30
    origin: int = EPOCH_ORIGIN

    @property
    def width(self) -> int:
        return self.window_minutes * 60

    def window(self, t: int) -> int:
        # half-open [k*w, (k+1)*w)
        return (t - self.origin) // self.width

    def start(self, w: int) -> int:
        return self.origin + w * self.width


def assign_window(t: int, idx: WindowIndexer) -> int:
    return idx.window(t)


@dataclass(frozen=True)
class Split:
    env: str
    train_windows: tuple[int, ...]
    test_windows: tuple[int, ...]

    @property
    def fingerprint(self) -> str:
        return fingerprint({"env": self.env, "train": list(self.train_windows)})

    @classmethod
    def chronological(cls, env: str, windows: Sequence[int], train_fraction: float = 0.7) -> "Split":
        ws = sorted(windows)
        cut = int(round(len(ws) * train_fraction))
        return cls(env, tuple(ws[:cut]), tuple(ws[cut:]))

    @classmethod
    def test_only(cls, env: str, windows: Sequence[int]) -> "Split":
        return cls(env, (), tuple(sorted(windows)))


# --------------------------------------------------------------------------- labels


@dataclass
class WindowLabels:
    """Window-level ground truth: label per window id plus injected event ids."""

    labels: dict[int, int]
    event_ids: dict[int, frozenset]

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping], idx: WindowIndexer) -> "WindowLabels":
        labels, events = {}, {}
        for r in rows:
            w = idx.window(int(r["window_start"]))
            labels[w] = int(r["label"])
            events[w] = frozenset(r.get("event_ids", ()))
        return cls(labels, events)

    @property
    def windows(self) -> list[int]:
        return sorted(self.labels)


# --------------------------------------------------------------------------- rows / matrices


@dataclass
class WindowFeatureRow:
    window_id: int
    env: str
    pipeline: str
    features: dict[str, float]
    label: int
    actor: Optional[str] = None


@dataclass
class FeatureMatrix:
    pipeline: str
    task: str
    env: str
    feature_names: tuple[str, ...]
    rows: list[WindowFeatureRow]
    windows: tuple[int, ...]
    split_fingerprint: str = ""
    history_fingerprint: str = ""
    window_minutes: int = 30

    def __post_init__(self):
        for r in self.rows:
            if tuple(r.features) != self.feature_names:
                raise ValueError(f"row for window {r.window_id} has a different feature set")

    def subset(self, windows: Iterable[int]) -> "FeatureMatrix":
        keep = set(windows)
        return FeatureMatrix(
            self.pipeline, self.task, self.env, self.feature_names,
            [r for r in self.rows if r.window_id in keep],
            tuple(w for w in self.windows if w in keep),
            self.split_fingerprint, self.history_fingerprint, self.window_minutes,
        )

    @property
    def X(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, len(self.feature_names)))
        return np.array([[r.features[f] for f in self.feature_names] for r in self.rows], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.label for r in self.rows], dtype=int)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_id", "actor", "label", *self.feature_names])
            for r in self.rows:
                w.writerow([r.window_id, r.actor or "", r.label, *(repr(float(r.features[f])) for f in self.feature_names)])

    def sidecar(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "task": self.task,
            "env": self.env,
            "split_fingerprint": self.split_fingerprint,
            "history_fingerprint": self.history_fingerprint,
            "feature_names": list(self.feature_names),
            "window_minutes": self.window_minutes,
            "n_rows": len(self.rows),
            "n_windows": len(self.windows),
        }

    def export(self, csv_path) -> None:
        csv_path = Path(csv_path)
        self.to_csv(csv_path)
        with open(csv_path.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# --------------------------------------------------------------------------- baseline


@dataclass(frozen=True)
class BaselineBinding:
    """Raw column names the event-centric baseline reads, verbatim."""

    user: str = "user"
    dst: str = "dst_host"
    ts: str = "ts"
    event: str = "event"
    event_types: tuple[str, ...] = ("logon", "process_start", "process_spawn", "file_write", "net_conn")

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.user, self.dst, self.ts, self.event)

    def feature_names(self) -> tuple[str, ...]:
        return (
            *(f"count_{t}" for t in self.event_types), "count_other", "n_events", "distinct_user",
            "distinct_dst", "max_events_per_user", "burstiness",
        )


@dataclass(frozen=True)
class RawEvent:
    ts: int
    event: str
    user: str
    dst: str


def load_raw_events(path, binding: BaselineBinding = BaselineBinding()) -> list[RawEvent]:
    """Read a raw CSV/JSONL file through the baseline's column binding.

    Raises :class:`MissingColumn` as soon as a bound column is absent.
    """
    path = Path(path)
    rows: list[Mapping[str, str]]
    with open(path, encoding="utf-8", newline="") as fh:
        if path.suffix.lower() == ".csv":
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in binding.columns:
                if col not in header:
                    raise MissingColumn(col)
            rows = list(reader)
        else:
            rows = [json.loads(line) for line in fh if line.strip()]
            for col in binding.columns:
                if rows and not any(col in r for r in rows):
                    raise MissingColumn(col)
    out = []
    for r in rows:
        try:
            ts = int(r[binding.ts])
        except (KeyError, ValueError, TypeError):
            continue
        out.append(RawEvent(ts, str(r.get(binding.event) or ""), str(r.get(binding.user) or ""),
                            str(r.get(binding.dst) or "")))
    return out


def baseline_features(records: Sequence[RawEvent], binding: BaselineBinding, window_start: int = 0,
                      width: int = 1800) -> dict[str, float]:
    counts = Counter(r.event for r in records)
    feats = {f"count_{t}": float(counts.get(t, 0)) for t in binding.event_types}
    feats["count_other"] = float(sum(v for k, v in counts.items() if k not in binding.event_types))
    feats["n_events"] = float(len(records))
    users = Counter(r.user for r in records if r.user)
    feats["distinct_user"] = float(len(users))
    feats["distinct_dst"] = float(len({r.dst for r in records if r.dst}))
    feats["max_events_per_user"] = float(max(users.values(), default=0))
    if records:
        sub = width // 6
        bins = Counter(min(5, (r.ts - window_start) // sub) for r in records)
        feats["burstiness"] = max(bins.values()) / (len(records) / 6.0)
    else:
        feats["burstiness"] = 0.0
    return feats


def baseline_matrix(path, labels: WindowLabels, idx: WindowIndexer, env: str, task: str,
                    binding: BaselineBinding = BaselineBinding()) -> FeatureMatrix:
    events = load_raw_events(path, binding)
    per_window: dict[int, list[RawEvent]] = defaultdict(list)
    for ev in events:
        per_window[idx.window(ev.ts)].append(ev)
    names = binding.feature_names()
    rows = []
    for w in labels.windows:
        feats = baseline_features(per_window.get(w, []), binding, idx.start(w), idx.width)
        rows.append(WindowFeatureRow(w, env, "baseline", {n: feats[n] for n in names}, labels.labels[w]))
    return FeatureMatrix("baseline", task, env, names, rows, tuple(labels.windows), window_minutes=idx.window_minutes)


# --------------------------------------------------------------------------- train history


def edges_by_window(g: SubstrateGraph, idx: WindowIndexer) -> dict[int, list[CanonicalRelationship]]:
    out: dict[int, list[CanonicalRelationship]] = defaultdict(list)
    for r in g.edges:
        out[idx.window(r.start)].append(r)
    return out


@dataclass
class TrainHistory:
    split_fingerprint: str
    seen_edges: frozenset
    edge_counts: Counter
    token_counts: dict[str, Counter] = field(default_factory=dict)

    @classmethod
    def fit(cls, g: SubstrateGraph, idx: WindowIndexer, split: Split) -> "TrainHistory":
        """Count edge keys and channel tokens over the training windows only."""
        train = set(split.train_windows)
        counts: Counter = Counter()
        tokens = {c: Counter() for c in CHANNELS}
        for r in g.edges:
            if idx.window(r.start) not in train:
                continue
            counts[r.key()] += 1
            for c, types in CHANNELS.items():
                if r.rel_type in types:
                    tokens[c][r.dst] += 1
        return cls(split.fingerprint, frozenset(counts), counts, tokens)

    @property
    def n_train(self) -> int:
        return sum(self.edge_counts.values())

    @property
    def vocab(self) -> int:
        return len(self.edge_counts)

    def edge_surprisal(self, key) -> float:
        return -math.log((self.edge_counts.get(key, 0) + 1) / max(self.n_train + self.vocab, 1))

    def token_surprisal(self, channel: str, token: str) -> float:
        c = self.token_counts.get(channel, Counter())
        n, v = sum(c.values()), len(c)
        return -math.log((c.get(token, 0) + 1) / max(n + v, 1))

    @property
    def fingerprint(self) -> str:
        return fingerprint({
            "split": self.split_fingerprint,
            "edges": sorted([list(k), n] for k, n in self.edge_counts.items()),
        })

    def check(self, expected_split: str) -> None:
        if expected_split != self.split_fingerprint:
            raise HistoryMismatch(
                f"history fitted on split {self.split_fingerprint}, evaluation expects {expected_split}"
            )


def _require(hist: Optional[TrainHistory], expected_split: Optional[str]) -> TrainHistory:
    if hist is None or not isinstance(hist, TrainHistory):
        raise UnfittedHistory("substrate features need a fitted TrainHistory")
    if expected_split is not None:
        hist.check(expected_split)
    return hist


# --------------------------------------------------------------------------- substrate features


def actor_features(edges: Sequence[CanonicalRelationship], actor: str, g: SubstrateGraph,
                   hist: TrainHistory, auth_by_user: Mapping[str, set], users_by_host: Mapping[str, set]) -> dict:
    own = [r for r in edges if r.src == actor]
    hosts = auth_by_user.get(actor, set())
    n = len(own)
    new = sum(1 for r in own if r.key() not in hist.seen_edges)
    co_users = set().union(*(users_by_host.get(h, set()) for h in hosts)) - {actor} if hosts else set()
    two_hop = set().union(*(auth_by_user[u] for u in co_users)) if co_users else set()
    rarity = sum(hist.edge_surprisal(r.key()) for r in own) / n if n else 0.0
    comm = g.entities[actor].attributes.get("community")
    spread = 0
    if comm is not None:
        for h in hosts:
            hc = g.entities[h].attributes.get("community")
            if hc is not None and hc != comm:
                spread += 1
    return {
        "out_degree": float(len(hosts)),
        "new_edge_count": float(new),
        "new_edge_rate": new / n if n else 0.0,
        "two_hop": float(len(two_hop)),
        "rarity": rarity,
        "priv_spread": float(spread),
        "priv_spread_missing": 0.0 if comm is not None else 1.0,
    }


def csts_features(window_edges: Sequence[CanonicalRelationship], g: SubstrateGraph, hist: TrainHistory,
                  expected_split: Optional[str] = None) -> dict[str, dict[str, float]]:
    """Per-actor feature dicts for one window slice of the substrate.

    Actors are User entities originating at least one edge in the slice.
    """
    hist = _require(hist, expected_split)
    auth_by_user: dict[str, set] = defaultdict(set)
    users_by_host: dict[str, set] = defaultdict(set)
    actors = set()
    for r in window_edges:
        if g.entities[r.src].entity_type is EntityType.USER:
            actors.add(r.src)
            if r.rel_type is R.AUTHENTICATES_TO:
                auth_by_user[r.src].add(r.dst)
                users_by_host[r.dst].add(r.src)
    return {a: actor_features(window_edges, a, g, hist, auth_by_user, users_by_host) for a in sorted(actors)}


def csts_lm_matrix(g: SubstrateGraph, hist: TrainHistory, labels: WindowLabels, idx: WindowIndexer, env: str,
                   expected_split: Optional[str] = None) -> FeatureMatrix:
    hist = _require(hist, expected_split)
    by_window = edges_by_window(g, idx)
    rows = []
    for w in labels.windows:
        edges = by_window.get(w, [])
        injected = labels.event_ids.get(w, frozenset())
        for actor, feats in csts_features(edges, g, hist).items():
            hit = any(r.src == actor and r.attributes.get("event_id") in injected for r in edges) if injected else False
            rows.append(WindowFeatureRow(w, env, "csts", feats, int(hit), actor))
    return FeatureMatrix("csts", "LM", env, LM_FEATURES, rows, tuple(labels.windows),
                         hist.split_fingerprint, hist.fingerprint, idx.window_minutes)


def flow_features(window_edges: Sequence[CanonicalRelationship], hist: TrainHistory) -> dict[str, float]:
    flows = [r for r in window_edges if r.rel_type is R.CONNECTS_TO]
    fan: dict[str, set] = defaultdict(set)
    by_dst: dict[str, set] = defaultdict(set)
    for r in flows:
        fan[r.src].add(r.dst)
        by_dst[r.dst].add(r.src)
    n = len(flows)
    new = sum(1 for r in flows if r.key() not in hist.seen_edges)
    two_hop = 0
    if fan:
        top = max(sorted(fan), key=lambda s: len(fan[s]))
        peers = set().union(*(by_dst[d] for d in fan[top])) - {top}
        two_hop = len(set().union(*(fan[p] for p in peers))) if peers else 0
    return {
        "n_flows": float(n),
        "distinct_dst": float(len(by_dst)),
        "active_src": float(len(fan)),
        "max_fanout": float(max((len(v) for v in fan.values()), default=0)),
        "two_hop": float(two_hop),
        "new_edge_count": float(new),
        "new_edge_rate": new / n if n else 0.0,
        "rarity": sum(hist.edge_surprisal(r.key()) for r in flows) / n if n else 0.0,
        "rarity_missing": 0.0 if n else 1.0,
    }


def csts_zdt_matrix(g: SubstrateGraph, hist: TrainHistory, labels: WindowLabels, idx: WindowIndexer, env: str,
                    expected_split: Optional[str] = None) -> FeatureMatrix:
    hist = _require(hist, expected_split)
    by_window = edges_by_window(g, idx)
    rows = [
        WindowFeatureRow(w, env, "csts", flow_features(by_window.get(w, []), hist), labels.labels[w])
        for w in labels.windows
    ]
    return FeatureMatrix("csts", "ZDT", env, ZDT_FEATURES, rows, tuple(labels.windows),
                         hist.split_fingerprint, hist.fingerprint, idx.window_minutes)
