"""``csts`` command line.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
artifact), 3 viability-gate failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .adapters import AdapterError, AdapterSpec, builtin_policy, builtin_spec, ingest_file
from .evaluation import DegenerateClass, ViabilityGateFailure
from .features import HistoryMismatch, MissingColumn, UnfittedHistory, WindowIndexer, edges_by_window
from .graph import GraphError, export_jsonl
from .identity import ResolutionPolicy
from .perturb import get_level, perturb_file
from .synth import InfeasibleInjection

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATE = 0, 1, 2, 3

log = logging.getLogger("csts")


class UsageError(Exception):
    pass


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig.load(args.config) if args.config else ex.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _tasks(cfg, args) -> list[str]:
    if getattr(args, "task", None):
        return [args.task]
    return list(cfg.tasks)


def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.task:
        cfg.tasks = [args.task]
    manifest = ex.synth_stage(cfg, Path(args.out))
    for name, m in sorted(manifest.items()):
        print(f"{name}: {m['events']} events, {m['positive_windows']}/{m['windows']} positive windows")
    return EXIT_OK


def cmd_perturb(args) -> int:
    level = get_level(args.level)
    src = Path(args.input)
    if not src.exists():
        raise ex.MissingArtifact(f"missing artifact {src}")
    dst = perturb_file(src, level, args.output)
    print(f"{level.level}: {src} -> {dst}")
    return EXIT_OK


def _adapter(name_or_path: str) -> AdapterSpec:
    p = Path(name_or_path)
    return AdapterSpec.load(p) if p.suffix == ".json" and p.exists() else builtin_spec(name_or_path)


def _policy(name_or_path: str) -> ResolutionPolicy:
    p = Path(name_or_path)
    return ResolutionPolicy.load(p) if p.suffix == ".json" and p.exists() else builtin_policy(name_or_path)


def cmd_ingest(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise ex.MissingArtifact(f"missing artifact {src}")
    spec = _adapter(args.adapter)
    policy = _policy(args.policy or args.adapter)
    g, rep = ingest_file(src, spec, policy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_jsonl(g, out / f"{src.stem}.graph.jsonl")
    ex.write_json(out / f"{src.stem}.ingest.json", rep.to_dict())
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _config(args)
    cfg.tasks = _tasks(cfg, args)
    for p in ex.features_stage(cfg, Path(args.out)):
        print(p)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    for task in _tasks(cfg, args):
        split, mats = ex.load_task_matrices(out, task)
        reports, _ = ex.transfer_reports(cfg, task, split, mats)
        path = out / "tables" / f"{task.lower()}_transfer.csv"
        ex.write_reports(path, reports, cfg)
        for r in reports:
            print(f"{r.task} {r.setting:11s} {r.method:8s} F1@0.5={r.f1_at_05:.3f} "
                  f"bestF1={r.best_f1:.3f}@{r.best_threshold:.2f} AUROC={r.auroc:.3f}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    reports = []
    for task in _tasks(cfg, args):
        split, mats = ex.load_task_matrices(out, task)
        rep = ex.orientation_report(cfg, task, split, mats)
        reports.append(rep)
        print(f"{task}: AUROC={rep['auroc']:.3f} inverted={rep['auroc_inverted']:.3f} "
              f"polarity_inverted={rep['polarity_inverted']} flipped={rep['flipped']}")
    ex.write_json(out / "tables" / "orientation.json", {**ex.provenance(cfg), "reports": reports})
    return EXIT_OK


def _windows_from_raw(path: str, adapter: str, policy: str, idx: WindowIndexer):
    src = Path(path)
    if not src.exists():
        raise ex.MissingArtifact(f"missing artifact {src}")
    g, _ = ingest_file(src, _adapter(adapter), _policy(policy or adapter))
    by_w = edges_by_window(g, idx)
    ws = sorted(by_w)
    return g, [by_w[w] for w in range(ws[0], ws[-1] + 1)] if ws else []


def cmd_viability(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    v = cfg.viability
    q = args.q if args.q is not None else v["q"]
    idx = cfg.indexer()
    if args.train or args.test:
        if not (args.train and args.test):
            raise UsageError("--train and --test must be given together")
        g_tr, w_tr = _windows_from_raw(args.train, args.train_adapter, args.train_policy, idx)
        _, w_te = _windows_from_raw(args.test, args.test_adapter, args.test_policy, idx)
        report = _fit_and_score(g_tr, w_tr, w_te, idx, q, v)
    else:
        report = ex.viability_reports(cfg, out)["divergence"]
    ex.write_json(out / "tables" / "viability.json", {**ex.provenance(cfg), "divergence": report.to_dict()})
    print(f"tau={report.train_threshold:.3f} test_above={report.test_windows_above}/{report.n_test_windows} "
          f"verdict={report.verdict}")
    return EXIT_OK if report.viable else EXIT_GATE


def _fit_and_score(g_tr, w_tr, w_te, idx, q, v):
    from .evaluation import viability_from_windows
    from .features import Split, TrainHistory

    train_ids = sorted({idx.window(r.start) for r in g_tr.edges})
    hist = TrainHistory.fit(g_tr, idx, Split("train", tuple(train_ids), ()))
    return viability_from_windows(w_tr, w_te, hist, q, v["channels"], v["gate"], idx.window_minutes)


def cmd_repro(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    summary = ex.repro(cfg, out)
    for key in ("LM_transfer", "LM_robustness", "ZDT_transfer"):
        for r in summary.get(key, []):
            print(f"{key:13s} {r.setting:11s} {r.method:8s} {r.level} {r.status:14s} "
                  f"F1@0.5={r.f1_at_05:.3f} bestF1={r.best_f1:.3f} AUROC={r.auroc:.3f}")
    for name, r in summary["viability"].items():
        print(f"viability {name}: tau={r.train_threshold:.3f} above={r.test_windows_above}/{r.n_test_windows} "
              f"{r.verdict}")
    print(f"tables written to {out / 'tables'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csts", description="Canonical security telemetry substrate experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, task=True):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if task:
            sp.add_argument("--task", choices=["LM", "ZDT"])

    sp = sub.add_parser("synth", help="generate EnvA/EnvB raw telemetry and labels")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("perturb", help="apply a P0-P3 schema perturbation to a raw file")
    sp.add_argument("--level", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.set_defaults(func=cmd_perturb)

    sp = sub.add_parser("ingest", help="ingest a raw file into the substrate graph")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--adapter", required=True, help="builtin adapter name (enva, envb) or spec JSON path")
    sp.add_argument("--policy", help="builtin policy name or policy JSON path (defaults to the adapter's)")
    sp.add_argument("--out", default="out/graphs")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("features", help="build baseline and substrate feature matrices")
    common(sp)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("eval", help="run the transfer protocol on built feature matrices")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("diagnose", help="orientation-stability diagnostic")
    common(sp)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("viability", help="train-only quantile novelty viability protocol")
    common(sp, task=False)
    sp.add_argument("--q", type=float)
    sp.add_argument("--train")
    sp.add_argument("--test")
    sp.add_argument("--train-adapter", default="enva")
    sp.add_argument("--test-adapter", default="envb")
    sp.add_argument("--train-policy")
    sp.add_argument("--test-policy")
    sp.set_defaults(func=cmd_viability)

    sp = sub.add_parser("repro", help="full run writing every table analogue")
    common(sp, task=False)
    sp.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ViabilityGateFailure, DegenerateClass) as exc:
        print(f"viability gate: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (ex.MissingArtifact, MissingColumn, AdapterError, GraphError, HistoryMismatch, UnfittedHistory,
            OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValueError, InfeasibleInjection) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
