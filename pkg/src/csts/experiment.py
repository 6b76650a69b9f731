"""End-to-end experiment plumbing shared by the CLI stages and ``repro``.

Every stage reads and writes plain files under one output directory:

    data/        raw CSVs, label files and resolution policies
    graphs/      substrate JSONL exports and ingest reports
    features/    feature matrices (CSV + JSON sidecar) and split files
    tables/      transfer, robustness, orientation and viability reports
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .adapters import builtin_spec, ingest_file
from .evaluation import (
    ClassifierSpec,
    EvalReport,
    ViabilityReport,
    evaluate,
    orientation_diagnostic,
    schema_failure_report,
    train_classifier,
    viability_from_windows,
)
from .features import (
    CHANNELS,
    FeatureMatrix,
    MissingColumn,
    Split,
    TrainHistory,
    WindowFeatureRow,
    WindowIndexer,
    WindowLabels,
    baseline_matrix,
    csts_lm_matrix,
    csts_zdt_matrix,
    edges_by_window,
    fingerprint,
)
from .graph import SubstrateGraph
from .identity import ResolutionPolicy
from .perturb import get_level, perturb_file
from .synth import (
    WINDOW_SECONDS,
    EnvProfile,
    InjectionSpec,
    default_injections,
    default_profiles,
    generate_env,
    read_labels,
    viability_profiles,
)

ENVS = ("EnvA", "EnvB")
SETTINGS = {"EnvA": "EnvA->EnvA", "EnvB": "EnvA->EnvB"}


class MissingArtifact(Exception):
    """A stage was run before the stage that produces its inputs."""


_CLASSIFIER_DEFAULTS = {"l2_strength": 1e-3, "epochs": 500, "learning_rate": 0.1}
_VIABILITY_DEFAULTS = {
    "q": 0.40, "gate": 5, "channels": list(CHANNELS),
    "train_hours": 90.5, "test_hours": 8.0, "control_hours": 500.0,
}


@dataclass
class ExperimentConfig:
    seed: int = 42
    duration_hours: float = 336.0
    window_minutes: int = 30
    tasks: list = field(default_factory=lambda: ["LM", "ZDT"])
    levels: list = field(default_factory=lambda: ["P0", "P1", "P2", "P3"])
    train_fraction: float = 0.7
    bootstrap: int = 1000
    classifier: dict = field(default_factory=lambda: dict(_CLASSIFIER_DEFAULTS))
    profiles: dict = field(default_factory=dict)  # env name -> field overrides
    injections: dict = field(default_factory=dict)  # "LM:EnvB" -> field overrides
    viability: dict = field(default_factory=lambda: dict(_VIABILITY_DEFAULTS))

    def __post_init__(self):
        # partial overrides keep the remaining defaults
        self.viability = {**_VIABILITY_DEFAULTS, **self.viability}
        self.classifier = {**_CLASSIFIER_DEFAULTS, **self.classifier}
        if self.window_minutes * 60 != WINDOW_SECONDS:
            raise ValueError("synthetic labels are emitted on 30-minute windows; window_minutes must be 30")
        bad = set(self.tasks) - {"LM", "ZDT"}
        if bad:
            raise ValueError(f"unknown tasks {sorted(bad)}")
        for lvl in self.levels:
            get_level(lvl)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())

    def classifier_spec(self) -> ClassifierSpec:
        return ClassifierSpec(seed=self.seed, **self.classifier)

    def env_profiles(self) -> dict[str, EnvProfile]:
        a, b = default_profiles(self.seed)
        out = {"EnvA": a, "EnvB": b}
        for name, over in self.profiles.items():
            out[name] = replace(out[name], **over)
        return out

    def injection(self, task: str, env: str) -> InjectionSpec:
        inj = default_injections(task, env)
        over = self.injections.get(f"{task}:{env}")
        return replace(inj, **over) if over else inj

    def indexer(self) -> WindowIndexer:
        return WindowIndexer(self.window_minutes)


def provenance(cfg: ExperimentConfig) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_fingerprint": cfg.fingerprint,
        "versions": {"csts": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
    }


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def stem(task: str, env: str) -> str:
    return f"{env.lower()}_{task.lower()}"


def adapter_name(env: str) -> str:
    return {"EnvA": "enva", "EnvB": "envb"}[env]


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path} (run `csts {stage}` first)")
    return path


# --------------------------------------------------------------------------- synth / ingest


def synth_stage(cfg: ExperimentConfig, out: Path) -> dict:
    data = Path(out) / "data"
    profiles = cfg.env_profiles()
    manifest = {}
    for task in cfg.tasks:
        for env in ENVS:
            art = generate_env(profiles[env], cfg.injection(task, env), cfg.duration_hours, data, stem(task, env))
            manifest[stem(task, env)] = {
                "raw": art.raw.name, "labels": art.labels.name, "policy": art.policy.name,
                "events": art.n_events, "windows": art.n_windows, "positive_windows": art.positive_windows,
            }
    write_json(data / "manifest.json", {**provenance(cfg), "files": manifest})
    return manifest


def raw_path(out: Path, task: str, env: str, level: str = "P0") -> Path:
    """Raw file for (task, env) at a perturbation level; EnvB perturbations are materialized lazily."""
    base = _require(Path(out) / "data" / f"{stem(task, env)}.csv", "synth")
    if level == "P0":
        return base
    dst = Path(out) / "data" / "perturbed" / f"{stem(task, env)}_{level}.csv"
    dst.parent.mkdir(parents=True, exist_ok=True)
    return perturb_file(base, get_level(level), dst)


def load_policy(out: Path, task: str, env: str) -> ResolutionPolicy:
    return ResolutionPolicy.load(_require(Path(out) / "data" / f"{stem(task, env)}.policy.json", "synth"))


def load_labels(out: Path, task: str, env: str, idx: WindowIndexer) -> WindowLabels:
    path = _require(Path(out) / "data" / f"{stem(task, env)}.labels.jsonl", "synth")
    return WindowLabels.from_rows(read_labels(path), idx)


def ingest_env(out: Path, task: str, env: str, level: str = "P0") -> tuple[SubstrateGraph, dict]:
    g, rep = ingest_file(raw_path(out, task, env, level), builtin_spec(adapter_name(env)), load_policy(out, task, env))
    return g, rep.to_dict()


# --------------------------------------------------------------------------- features


@dataclass
class TaskMatrices:
    task: str
    level: str
    split: Split
    history: TrainHistory
    matrices: dict  # (pipeline, env) -> FeatureMatrix | MissingColumn


def build_task_matrices(cfg: ExperimentConfig, out: Path, task: str, level: str = "P0",
                        history: Optional[TrainHistory] = None, split: Optional[Split] = None) -> TaskMatrices:
    """Feature matrices for both pipelines; ``level`` perturbs EnvB only.

    When a fitted ``history`` is passed, EnvA is not rebuilt and only the
    EnvB matrices are returned.
    """
    idx = cfg.indexer()
    envs = ENVS if history is None else ("EnvB",)
    labels = {env: load_labels(out, task, env, idx) for env in envs}
    mats: dict = {}
    graphs = {}
    if history is None:
        graphs["EnvA"], _ = ingest_env(out, task, "EnvA")
        split = Split.chronological("EnvA", labels["EnvA"].windows, cfg.train_fraction)
        history = TrainHistory.fit(graphs["EnvA"], idx, split)
    builder = csts_lm_matrix if task == "LM" else csts_zdt_matrix
    for env in envs:
        lvl = "P0" if env == "EnvA" else level
        g = graphs[env] if env in graphs else ingest_env(out, task, env, lvl)[0]
        mats[("csts", env)] = builder(g, history, labels[env], idx, env, split.fingerprint)
        try:
            mats[("baseline", env)] = baseline_matrix(raw_path(out, task, env, lvl), labels[env], idx, env, task)
        except MissingColumn as exc:
            mats[("baseline", env)] = exc
    return TaskMatrices(task, level, split, history, mats)


def features_stage(cfg: ExperimentConfig, out: Path, built: Optional[dict] = None) -> list[Path]:
    """Write every matrix for the configured tasks; ``built`` collects the TaskMatrices."""
    fdir = Path(out) / "features"
    fdir.mkdir(parents=True, exist_ok=True)
    written = []
    for task in cfg.tasks:
        tm = build_task_matrices(cfg, out, task)
        if built is not None:
            built[task] = tm
        write_json(fdir / f"split_{task.lower()}.json", {
            "env": tm.split.env, "train_windows": list(tm.split.train_windows),
            "test_windows": list(tm.split.test_windows), "fingerprint": tm.split.fingerprint,
        })
        for (pipe, env), m in sorted(tm.matrices.items()):
            path = fdir / f"{task.lower()}_{pipe}_{env.lower()}.csv"
            m.export(path)
            written.append(path)
    return written


def read_matrix(csv_path) -> FeatureMatrix:
    csv_path = Path(csv_path)
    side = json.loads(_require(csv_path.with_suffix(".json"), "features").read_text("utf-8"))
    names = tuple(side["feature_names"])
    rows = []
    with open(_require(csv_path, "features"), encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(WindowFeatureRow(
                int(rec["window_id"]), side["env"], side["pipeline"], {n: float(rec[n]) for n in names},
                int(rec["label"]), rec["actor"] or None,
            ))
    windows = tuple(sorted({r.window_id for r in rows}))
    return FeatureMatrix(side["pipeline"], side["task"], side["env"], names, rows, windows,
                         side["split_fingerprint"], side["history_fingerprint"], side["window_minutes"])


def load_split(out: Path, task: str) -> Split:
    d = json.loads(_require(Path(out) / "features" / f"split_{task.lower()}.json", "features").read_text("utf-8"))
    return Split(d["env"], tuple(d["train_windows"]), tuple(d["test_windows"]))


def load_task_matrices(out: Path, task: str) -> tuple[Split, dict]:
    split = load_split(out, task)
    mats = {}
    for pipe in ("baseline", "csts"):
        for env in ENVS:
            mats[(pipe, env)] = read_matrix(Path(out) / "features" / f"{task.lower()}_{pipe}_{env.lower()}.csv")
    return split, mats


# --------------------------------------------------------------------------- evaluation


def transfer_reports(cfg: ExperimentConfig, task: str, split: Split, mats: dict, level: str = "P0",
                     settings=ENVS) -> tuple[list[EvalReport], dict]:
    """Four reports per task: {baseline, csts} x {in-domain, cross-domain}.

    Returns the reports and, per pipeline, (train matrix, model) for reuse.
    """
    spec = cfg.classifier_spec()
    reports, models = [], {}
    for pipe in ("baseline", "csts"):
        a = mats[(pipe, "EnvA")]
        if isinstance(a, MissingColumn):
            reports += [schema_failure_report(task, SETTINGS[e], pipe, level, a.column) for e in settings]
            continue
        train, test_a = a.subset(split.train_windows), a.subset(split.test_windows)
        model = train_classifier(train.X, train.y, spec)
        models[pipe] = (train, model)
        for env in settings:
            m = test_a if env == "EnvA" else mats[(pipe, env)]
            if isinstance(m, MissingColumn):
                reports.append(schema_failure_report(task, SETTINGS[env], pipe, level, m.column))
                continue
            rep, _, _ = evaluate(task, SETTINGS[env], train, m, spec, cfg.bootstrap, level, model)
            reports.append(rep)
    return reports, models


def write_reports(path: Path, reports: list[EvalReport], cfg: ExperimentConfig) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*EvalReport.CSV_FIELDS, "config_fingerprint"])
        for r in reports:
            w.writerow([*r.csv_row(), cfg.fingerprint])
    write_json(path.with_suffix(".json"), {**provenance(cfg), "reports": [r.to_dict() for r in reports]})


def robustness_reports(cfg: ExperimentConfig, out: Path, task: str = "LM",
                       base: Optional[TaskMatrices] = None) -> list[EvalReport]:
    base = base or build_task_matrices(cfg, out, task, "P0")
    reports = []
    for level in cfg.levels:
        tm = base if level == "P0" else build_task_matrices(cfg, out, task, level, base.history, base.split)
        mats = dict(base.matrices)
        mats[("csts", "EnvB")] = tm.matrices[("csts", "EnvB")]
        mats[("baseline", "EnvB")] = tm.matrices[("baseline", "EnvB")]
        reps, _ = transfer_reports(cfg, task, base.split, mats, level, settings=("EnvB",))
        reports += reps
    return reports


def orientation_report(cfg: ExperimentConfig, task: str, split: Split, mats: dict, pipeline: str = "csts") -> dict:
    spec = cfg.classifier_spec()
    train = mats[(pipeline, "EnvA")].subset(split.train_windows)
    test_b = mats[(pipeline, "EnvB")]
    model = train_classifier(train.X, train.y, spec)
    rep = orientation_diagnostic(train, test_b, model.predict_proba(test_b.X))
    return {"task": task, "pipeline": pipeline, **rep.to_dict()}


# --------------------------------------------------------------------------- viability


def producer_windows(profile: EnvProfile, hours: float, out: Path, idx: WindowIndexer):
    art = generate_env(profile, InjectionSpec("LM", n_campaigns=0), hours, Path(out) / "data" / "viability")
    g, _ = ingest_file(art.raw, builtin_spec(profile.schema_flavor), ResolutionPolicy.load(art.policy))
    by_window = edges_by_window(g, idx)
    first = idx.window(idx.origin)
    return g, [by_window.get(first + w, []) for w in range(art.n_windows)]


def producer_viability(train_windows, train_graph, test_windows, idx: WindowIndexer, q: float, channels,
                       gate: int, name: str = "train") -> ViabilityReport:
    split = Split(name, tuple(range(len(train_windows))), ())
    # the producer's windows are numbered from the origin, so the split covers them all
    hist = TrainHistory.fit(train_graph, idx, split)
    return viability_from_windows(train_windows, test_windows, hist, q, channels, gate, idx.window_minutes)


def viability_reports(cfg: ExperimentConfig, out: Path) -> dict[str, ViabilityReport]:
    v = cfg.viability
    idx = cfg.indexer()
    prof = viability_profiles(cfg.seed)
    g_tr, w_tr = producer_windows(prof["train"], v["train_hours"], out, idx)
    _, w_div = producer_windows(prof["divergent"], v["test_hours"], out, idx)
    g_long, w_long = producer_windows(replace(prof["train"], name="ProdA_long"), v["control_hours"], out, idx)
    _, w_ctl = producer_windows(prof["control"], v["control_hours"], out, idx)
    return {
        "divergence": producer_viability(w_tr, g_tr, w_div, idx, v["q"], v["channels"], v["gate"]),
        "iid_control": producer_viability(w_long, g_long, w_ctl, idx, v["q"], v["channels"], v["gate"]),
    }


# --------------------------------------------------------------------------- repro


def repro(cfg: ExperimentConfig, out: Path) -> dict:
    out = Path(out)
    tables = out / "tables"
    synth_stage(cfg, out)
    built: dict = {}
    features_stage(cfg, out, built)
    summary = {}
    orientation = {**provenance(cfg), "reports": []}
    for task in cfg.tasks:
        split, mats = load_task_matrices(out, task)
        reports, _ = transfer_reports(cfg, task, split, mats)
        write_reports(tables / f"{task.lower()}_transfer.csv", reports, cfg)
        summary[f"{task}_transfer"] = reports
        orientation["reports"].append(orientation_report(cfg, task, split, mats))
    if "LM" in cfg.tasks:
        rob = robustness_reports(cfg, out, "LM", built["LM"])
        write_reports(tables / "lm_robustness.csv", rob, cfg)
        summary["LM_robustness"] = rob
    write_json(tables / "orientation.json", orientation)
    via = viability_reports(cfg, out)
    write_json(tables / "viability.json", {**provenance(cfg), **{k: r.to_dict() for k, r in via.items()}})
    summary["viability"] = via
    summary["orientation"] = orientation["reports"]
    return summary


def tree_digest(root) -> str:
    """Content hash over every file under ``root`` (paths and bytes)."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
