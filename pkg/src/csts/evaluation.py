"""Classifier, metrics, transfer reports, orientation and viability diagnostics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .features import CHANNELS, FeatureMatrix, TrainHistory

THRESHOLD_GRID = tuple(k / 20 for k in range(21))
ORIENTATION_EPS = 1e-9


class ViabilityGateFailure(Exception):
    pass


class DegenerateClass(Exception):
    pass


class EmptyWindow(Exception):
    pass


# --------------------------------------------------------------------------- classifier


@dataclass(frozen=True)
class ClassifierSpec:
    l2_strength: float = 1e-3
    epochs: int = 500
    learning_rate: float = 0.1
    standardize: bool = True
    seed: int = 42


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LogisticModel:
    spec: ClassifierSpec
    mean: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    intercept: float

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.transform(X) @ self.coef + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision_function(X))


def train_classifier(X: np.ndarray, y: np.ndarray, spec: ClassifierSpec = ClassifierSpec()) -> LogisticModel:
    """Full-batch gradient descent on the L2-penalised logistic loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n_pos = int((y == 1).sum())
    if n_pos == 0 or n_pos == len(y):
        raise ViabilityGateFailure(f"training split needs both classes (pos={n_pos}, neg={len(y) - n_pos})")
    d = X.shape[1]
    if spec.standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean, scale = np.zeros(d), np.ones(d)
    Z = (X - mean) / scale
    rng = np.random.default_rng(spec.seed)
    w = rng.normal(0.0, 0.01, d)
    b = 0.0
    n = len(y)
    for _ in range(spec.epochs):
        err = _sigmoid(Z @ w + b) - y
        w -= spec.learning_rate * (Z.T @ err / n + spec.l2_strength * w)
        b -= spec.learning_rate * float(err.mean())
    return LogisticModel(spec, mean, scale, w, b)


# --------------------------------------------------------------------------- metrics


def auroc_flagged(scores: Sequence[float], labels: Sequence[int]) -> tuple[float, bool]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.0, True
    ranks = rankdata(s)  # midranks give the half-credit for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg)), False


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    return auroc_flagged(scores, labels)[0]


def confusion(scores, labels, threshold: float) -> tuple[int, int, int, int]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    tn = int((~pred & (y == 0)).sum())
    return tp, fp, fn, tn


def precision_recall_f1(scores, labels, threshold: float = 0.5) -> tuple[float, float, float]:
    tp, fp, fn, _ = confusion(scores, labels, threshold)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return p, r, f


def f1_at(scores, labels, threshold: float = 0.5) -> float:
    return precision_recall_f1(scores, labels, threshold)[2]


def best_f1_sweep(scores, labels, grid: Sequence[float] = THRESHOLD_GRID) -> tuple[float, float]:
    """Max F1 over the fixed grid; ties resolve to the smallest threshold."""
    best, best_thr = -1.0, grid[0]
    for thr in grid:
        f = f1_at(scores, labels, thr)
        if f > best:
            best, best_thr = f, thr
    return best, best_thr


@dataclass(frozen=True)
class BootstrapCI:
    lo: float
    hi: float
    n_used: int
    n_skipped: int

    def as_list(self) -> list[float]:
        return [self.lo, self.hi]


def bootstrap_ci(scores, labels, metric: Callable, B: int = 1000, seed: int = 42, alpha: float = 0.05) -> BootstrapCI:
    """Percentile interval over row resamples; resample i is drawn with seed+i."""
    if B < 100:
        raise ValueError("B must be at least 100")
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n = len(y)
    vals, skipped = [], 0
    for i in range(B):
        idx = np.random.default_rng(seed + i).integers(0, n, n) if n else np.zeros(0, dtype=int)
        yy = y[idx]
        if n == 0 or yy.min() == yy.max():
            skipped += 1
            continue
        vals.append(metric(s[idx], yy))
    if not vals:
        return BootstrapCI(0.0, 0.0, 0, skipped)
    lo, hi = np.percentile(vals, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return BootstrapCI(float(lo), float(hi), len(vals), skipped)


# --------------------------------------------------------------------------- reports


@dataclass
class EvalReport:
    task: str
    setting: str
    method: str
    f1_at_05: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    auroc: float = 0.0
    best_f1: float = 0.0
    best_threshold: float = 0.0
    train_pos: int = 0
    train_neg: int = 0
    test_pos: int = 0
    test_neg: int = 0
    auroc_ci: list = field(default_factory=lambda: [0.0, 0.0])
    f1_ci: list = field(default_factory=lambda: [0.0, 0.0])
    level: str = "P0"
    status: str = "ok"  # ok | schema_failure | degenerate | gate_failure
    note: str = ""

    CSV_FIELDS = (
        "task", "setting", "method", "level", "status", "f1_at_05", "precision", "recall", "auroc",
        "best_f1", "best_threshold", "train_pos", "train_neg", "test_pos", "test_neg",
        "auroc_ci_lo", "auroc_ci_hi", "f1_ci_lo", "f1_ci_hi",
    )

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list:
        d = self.to_dict()
        d["auroc_ci_lo"], d["auroc_ci_hi"] = self.auroc_ci
        d["f1_ci_lo"], d["f1_ci_hi"] = self.f1_ci
        return [_fmt(d[k]) for k in self.CSV_FIELDS]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def schema_failure_report(task: str, setting: str, method: str, level: str, column: str) -> EvalReport:
    return EvalReport(task, setting, method, level=level, status="schema_failure", note=f"missing column {column}")


def evaluate_scores(task: str, setting: str, method: str, scores, labels, train_labels,
                    B: int = 1000, seed: int = 42, level: str = "P0") -> EvalReport:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    ty = np.asarray(train_labels, dtype=int)
    p, r, f = precision_recall_f1(s, y, 0.5)
    a, degenerate = auroc_flagged(s, y)
    bf, bt = best_f1_sweep(s, y)
    rep = EvalReport(
        task, setting, method, f, p, r, a, bf, bt,
        int((ty == 1).sum()), int((ty == 0).sum()), int((y == 1).sum()), int((y == 0).sum()), level=level,
    )
    if degenerate or rep.test_pos < 2:
        rep.status = "degenerate"
        rep.auroc_ci = [a, a]
        rep.f1_ci = [f, f]
        return rep
    rep.auroc_ci = bootstrap_ci(s, y, auroc, B, seed).as_list()
    rep.f1_ci = bootstrap_ci(s, y, f1_at, B, seed).as_list()
    return rep


def evaluate(task: str, setting: str, train: FeatureMatrix, test: FeatureMatrix,
             spec: ClassifierSpec = ClassifierSpec(), B: int = 1000, level: str = "P0",
             model: Optional[LogisticModel] = None) -> tuple[EvalReport, LogisticModel, np.ndarray]:
    if train.feature_names != test.feature_names:
        raise ValueError("train and test matrices disagree on feature names")
    if model is None:
        model = train_classifier(train.X, train.y, spec)
    scores = model.predict_proba(test.X) if len(test.rows) else np.zeros(0)
    rep = evaluate_scores(task, setting, train.pipeline, scores, test.y, train.y, B, spec.seed, level)
    return rep, model, scores


# --------------------------------------------------------------------------- orientation


@dataclass(frozen=True)
class FeatureOrientation:
    feature: str
    delta_a: float
    delta_b: float
    sign_agree: bool


@dataclass
class OrientationReport:
    features: list[FeatureOrientation]
    auroc: float
    auroc_inverted: float
    polarity_inverted: bool
    eps: float = ORIENTATION_EPS

    @property
    def flipped(self) -> list[str]:
        return [f.feature for f in self.features if not f.sign_agree]

    def to_dict(self) -> dict:
        return {
            "features": [asdict(f) for f in self.features],
            "flipped": self.flipped,
            "auroc": self.auroc,
            "auroc_inverted": self.auroc_inverted,
            "polarity_inverted": self.polarity_inverted,
            "eps": self.eps,
        }


def _sign(x: float, eps: float) -> int:
    return 0 if abs(x) < eps else (1 if x > 0 else -1)


def signs_agree(a: float, b: float, eps: float = ORIENTATION_EPS) -> bool:
    sa, sb = _sign(a, eps), _sign(b, eps)
    return sa == 0 or sb == 0 or sa == sb


def class_delta(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    if (y == 1).sum() == 0 or (y == 0).sum() == 0:
        raise DegenerateClass("both classes are required to compute class-conditional means")
    return X[y == 1].mean(axis=0) - X[y == 0].mean(axis=0)


def orientation_diagnostic(train_a: FeatureMatrix, test_b: FeatureMatrix, scores: Sequence[float],
                           eps: float = ORIENTATION_EPS, standardize: bool = True) -> OrientationReport:
    """Compare per-feature class-mean differences across environments.

    Both matrices are standardized with the EnvA training statistics so that
    the dead-band is applied on a common scale.
    """
    if train_a.feature_names != test_b.feature_names:
        raise ValueError("matrices disagree on feature names")
    Xa, Xb = train_a.X, test_b.X
    if standardize:
        mu = Xa.mean(axis=0)
        sd = Xa.std(axis=0)
        sd[sd == 0] = 1.0
        Xa, Xb = (Xa - mu) / sd, (Xb - mu) / sd
    da, db = class_delta(Xa, train_a.y), class_delta(Xb, test_b.y)
    feats = [
        FeatureOrientation(name, float(a), float(b), signs_agree(a, b, eps))
        for name, a, b in zip(train_a.feature_names, da, db)
    ]
    s = np.asarray(scores, dtype=float)
    a = auroc(s, test_b.y)
    ai = auroc(-s, test_b.y)
    return OrientationReport(feats, a, ai, bool(a < 0.5 and ai > 0.5), eps)


# --------------------------------------------------------------------------- viability


def _smoothed_surprisal(counts: Mapping[str, int], n: int, v: int, token: str) -> float:
    return -math.log((counts.get(token, 0) + 1) / max(n + v, 1))


def channel_tokens(window_edges, channels: Sequence[str] = tuple(CHANNELS)) -> dict[str, list[str]]:
    out = {c: [] for c in channels}
    for r in window_edges:
        for c in channels:
            if r.rel_type in CHANNELS[c]:
                out[c].append(r.dst)
    return out


def novelty_score(window_edges, hist: TrainHistory, channels: Sequence[str] = tuple(CHANNELS)) -> float:
    """Mean over nonempty channels of the mean smoothed token surprisal."""
    toks = channel_tokens(window_edges, channels)
    per_channel = []
    for c in channels:
        if not toks[c]:
            continue
        counts = hist.token_counts.get(c, {})
        n, v = sum(counts.values()), len(counts)
        per_channel.append(float(np.mean([_smoothed_surprisal(counts, n, v, t) for t in toks[c]])))
    if not per_channel:
        raise EmptyWindow("no channel tokens in window")
    return float(np.mean(per_channel))


@dataclass
class ViabilityReport:
    window_minutes: int
    q: float
    n_train_windows: int
    n_test_windows: int
    train_threshold: float
    train_windows_above: int
    test_windows_above: int
    train_summary: dict
    test_summary: dict
    channel_nonempty_rate: dict
    excluded_train: int = 0
    excluded_test: int = 0
    gate: int = 5
    verdict: str = "not-viable"

    @property
    def viable(self) -> bool:
        return self.verdict == "viable"

    @property
    def test_fraction_above(self) -> float:
        return self.test_windows_above / self.n_test_windows if self.n_test_windows else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def train_threshold(train_scores: Sequence[float], q: float) -> float:
    return float(np.quantile(np.asarray(train_scores, dtype=float), q, method="linear"))


def _summary(scores: np.ndarray) -> dict:
    if len(scores) == 0:
        return {"p50": 0.0, "p90": 0.0, "max": 0.0}
    return {
        "p50": float(np.percentile(scores, 50)),
        "p90": float(np.percentile(scores, 90)),
        "max": float(scores.max()),
    }


def viability_protocol(train_scores: Sequence[float], test_scores: Sequence[float], q: float = 0.40,
                       gate: int = 5, window_minutes: int = 30, channel_nonempty_rate: Optional[dict] = None,
                       excluded: tuple[int, int] = (0, 0)) -> ViabilityReport:
    """Train-only quantile threshold; a window counts when its score is strictly above τ."""
    tr = np.asarray(train_scores, dtype=float)
    te = np.asarray(test_scores, dtype=float)
    if len(tr) == 0:
        raise ValueError("viability needs at least one train window")
    tau = train_threshold(tr, q)
    above = int((te > tau).sum())
    return ViabilityReport(
        window_minutes, q, len(tr), len(te), tau, int((tr > tau).sum()), above,
        _summary(tr), _summary(te), channel_nonempty_rate or {}, excluded[0], excluded[1], gate,
        "viable" if above >= gate else "not-viable",
    )


def score_windows(windows: Sequence, hist: TrainHistory, channels: Sequence[str] = tuple(CHANNELS)):
    """Novelty scores for a list of window edge lists, plus exclusions and channel rates."""
    scores, excluded = [], 0
    nonempty = {c: 0 for c in channels}
    for edges in windows:
        toks = channel_tokens(edges, channels)
        for c in channels:
            nonempty[c] += bool(toks[c])
        try:
            scores.append(novelty_score(edges, hist, channels))
        except EmptyWindow:
            excluded += 1
    rates = {c: (nonempty[c] / len(windows) if windows else 0.0) for c in channels}
    return scores, excluded, rates


def viability_from_windows(train_windows: Sequence, test_windows: Sequence, hist: TrainHistory, q: float = 0.40,
                           channels: Sequence[str] = tuple(CHANNELS), gate: int = 5,
                           window_minutes: int = 30) -> ViabilityReport:
    tr, ex_tr, _ = score_windows(train_windows, hist, channels)
    te, ex_te, rates = score_windows(test_windows, hist, channels)
    return viability_protocol(tr, te, q, gate, window_minutes, rates, (ex_tr, ex_te))
