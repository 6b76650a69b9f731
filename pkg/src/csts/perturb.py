"""Targeted raw-schema perturbations P0-P3 for vendor drift experiments.

Levels are cumulative. Renames and rewrites are keyed by the field's
original (unperturbed) name, so a level can be applied as an increment on
top of a lower one.
"""

from __future__ import annotations

import csv
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

from .adapters import IoFailure, format_iso8601


def _epoch_to_iso(value: str) -> str:
    try:
        return format_iso8601(int(float(value)))
    except ValueError:
        return value


REWRITES: dict[str, Callable[[str], str]] = {"epoch_to_iso8601": _epoch_to_iso}


@dataclass(frozen=True)
class PerturbationLevel:
    level: str
    rename_map: Mapping[str, str] = field(default_factory=dict)
    delete_set: frozenset = frozenset()
    format_rewrites: Mapping[str, str] = field(default_factory=dict)

    @property
    def is_identity(self) -> bool:
        return not (self.rename_map or self.delete_set or self.format_rewrites)

    def minus(self, lower: "PerturbationLevel") -> "PerturbationLevel":
        """The increment that takes ``lower``'s output to this level's."""
        return PerturbationLevel(
            f"{self.level}-{lower.level}",
            {k: v for k, v in self.rename_map.items() if lower.rename_map.get(k) != v},
            frozenset(self.delete_set - lower.delete_set),
            {k: v for k, v in self.format_rewrites.items() if lower.format_rewrites.get(k) != v},
        )

    def covers(self, lower: "PerturbationLevel") -> bool:
        return (
            all(self.rename_map.get(k) == v for k, v in lower.rename_map.items())
            and lower.delete_set <= self.delete_set
            and all(self.format_rewrites.get(k) == v for k, v in lower.format_rewrites.items())
        )


P0 = PerturbationLevel("P0")
P1 = PerturbationLevel("P1", {"user": "SubjectUserName", "dst_host": "DestinationHostName"})
P2 = PerturbationLevel(
    "P2",
    {**P1.rename_map, "ts": "@timestamp"},
    frozenset(),
    {"ts": "epoch_to_iso8601"},
)
P3 = PerturbationLevel(
    "P3",
    {**P2.rename_map, "src_host": "Computer"},
    frozenset({"event"}),
    dict(P2.format_rewrites),
)
LEVELS = {lvl.level: lvl for lvl in (P0, P1, P2, P3)}


def get_level(name: str) -> PerturbationLevel:
    try:
        return LEVELS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown perturbation level {name!r}; expected one of {sorted(LEVELS)}") from None


def perturb_row(row: Mapping[str, str], level: PerturbationLevel) -> dict:
    out = {}
    for k, v in row.items():
        if k in level.delete_set:
            continue
        rule = level.format_rewrites.get(k)
        if rule is not None and v not in (None, ""):
            v = REWRITES[rule](v)
        out[level.rename_map.get(k, k)] = v
    return out


def perturb_file(src, level: PerturbationLevel, dst, fmt: Optional[str] = None) -> Path:
    """Rewrite a telemetry file at ``level``; the row count never changes."""
    src, dst = Path(src), Path(dst)
    if isinstance(level, str):
        level = get_level(level)
    fmt = (fmt or src.suffix.lstrip(".")).lower()
    try:
        if level.is_identity:
            shutil.copyfile(src, dst)
            return dst
        if fmt == "csv":
            with open(src, encoding="utf-8", newline="") as fin, open(dst, "w", encoding="utf-8", newline="") as fout:
                reader = csv.reader(fin)
                header = next(reader, None)
                if header is None:
                    return dst
                keep = [i for i, h in enumerate(header) if h not in level.delete_set]
                writer = csv.writer(fout, lineterminator="\n")
                writer.writerow([level.rename_map.get(header[i], header[i]) for i in keep])
                rewrites = {i: REWRITES[level.format_rewrites[header[i]]] for i in keep
                            if header[i] in level.format_rewrites}
                for row in reader:
                    out = []
                    for i in keep:
                        v = row[i] if i < len(row) else ""
                        if i in rewrites and v:
                            v = rewrites[i](v)
                        out.append(v)
                    writer.writerow(out)
        elif fmt in ("jsonl", "json"):
            with open(src, encoding="utf-8") as fin, open(dst, "w", encoding="utf-8") as fout:
                for line in fin:
                    if not line.strip():
                        fout.write(line)
                        continue
                    obj = json.loads(line)
                    fout.write(json.dumps(perturb_row(obj, level), separators=(",", ":")))
                    fout.write("\n")
        else:
            raise ValueError(f"unsupported format {fmt!r}")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return dst
