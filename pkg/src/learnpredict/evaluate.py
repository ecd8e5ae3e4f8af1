"""Stratified cross-validation experiments and report writing."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import models as nets
from .errors import ValidationError
from .features import (
    DEFAULT_LAYOUT,
    EngagementParams,
    FeatureMatrix,
    Normalizer,
    compute_engagement,
    compute_segment_stats,
    raw_segment_features,
)
from .gbc import GBCConfig, gbc_fit
from .ingest import Dataset
from .metrics import accuracy, auc_roc
from .nnet import cross_entropy
from .textpipe import CourseText

log = logging.getLogger(__name__)

ALL_MODELS = ("bnn", "esn", "tbn", "gbc")
REPORT_COLUMNS = ("model", "fold", "accuracy", "auc", "ce_sum", "ce_mean")
TRACE_COLUMNS = ("epoch", "loss", "accuracy", "auc")
SEGMENT_COLUMNS = ("segment", "mean_engagement", "mean_views", "mean_time", "expected_time")


def stratified_kfold(labels, K: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Split indices into K folds preserving class proportions.

    Each class is shuffled, then all positives followed by all negatives
    are dealt round-robin, so fold sizes and per-fold class counts differ
    by at most one.
    """
    labels = np.asarray(labels, dtype=int)
    if K < 2:
        raise ValueError("K must be at least 2")
    rng = np.random.default_rng(seed)
    dealt = []
    for cls in (1, 0):
        members = np.flatnonzero(labels == cls)
        if members.size < K:
            raise ValidationError(f"class {cls} has {members.size} members, fewer than K={K}")
        dealt.append(rng.permutation(members))
    order = np.concatenate(dealt)
    folds = [np.sort(order[k::K]) for k in range(K)]
    return folds


def oversample_minority(indices, labels, seed: int = 0) -> np.ndarray:
    """Append minority-class indices drawn with replacement until classes balance."""
    indices = np.asarray(indices, dtype=int)
    labels = np.asarray(labels, dtype=int)
    sub = labels[indices]
    pos, neg = indices[sub == 1], indices[sub == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValidationError("cannot rebalance a single-class fold")
    minority, majority = (pos, neg) if pos.size < neg.size else (neg, pos)
    need = majority.size - minority.size
    if need == 0:
        return indices.copy()
    extra = np.random.default_rng(seed).choice(minority, size=need, replace=True)
    return np.concatenate([indices, extra])


@dataclass(frozen=True)
class ExperimentConfig:
    models: tuple[str, ...] = ALL_MODELS
    K: int = 5
    seed: int = 42
    resample: bool = False
    train: nets.TrainConfig = nets.TrainConfig()
    gbc: GBCConfig = GBCConfig()
    layout: tuple[str, ...] = DEFAULT_LAYOUT
    engagement: EngagementParams = EngagementParams()
    pooled: bool = False

    def __post_init__(self):
        unknown = [m for m in self.models if m not in ALL_MODELS]
        if unknown or not self.models:
            raise ValueError(f"unknown models {unknown}; choose from {ALL_MODELS}")


@dataclass
class FoldResult:
    model: str
    fold: int
    accuracy: float
    auc: float
    ce_sum: float
    ce_mean: float


@dataclass
class EvalReport:
    models: tuple[str, ...]
    folds: list[FoldResult] = field(default_factory=list)
    traces: dict[str, list[nets.TrainTrace]] = field(default_factory=dict)
    pooled: dict[str, dict] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    trained: dict[str, list] = field(default_factory=dict)

    def rows(self, model: str) -> list[FoldResult]:
        return [r for r in self.folds if r.model == model]

    def summary(self) -> dict:
        out = {}
        for m in self.models:
            rows = self.rows(m)
            entry = {}
            for metric in ("accuracy", "auc", "ce_sum", "ce_mean"):
                vals = np.array([getattr(r, metric) for r in rows])
                entry[metric] = float(vals.mean())
                entry[f"{metric}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            if m in self.pooled:
                entry["pooled"] = self.pooled[m]
            out[m] = entry
        return out

    def mean(self, model: str, metric: str = "auc") -> float:
        return self.summary()[model][metric]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.csv", "summary": out / "summary.json"}
        with open(paths["report"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.folds:
                w.writerow([r.model, r.fold] + [_fmt(getattr(r, c)) for c in REPORT_COLUMNS[2:]])
        doc = {"settings": self.settings, "table": self.summary()}
        paths["summary"].write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        for m, traces in self.traces.items():
            p = out / "traces" / f"{m}_trace.csv"
            write_trace(mean_trace(traces), p)
            paths[f"trace_{m}"] = p
        return paths


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def mean_trace(traces: Sequence[nets.TrainTrace]) -> nets.TrainTrace:
    """Epoch-wise mean over folds (epochs missing from a fold are skipped)."""
    out = nets.TrainTrace()
    longest = max(len(t.epoch) for t in traces)
    for i in range(longest):
        alive = [t for t in traces if len(t.epoch) > i]
        out.append(
            i + 1,
            float(np.mean([t.loss[i] for t in alive])),
            float(np.mean([t.accuracy[i] for t in alive])),
            float(np.nanmean([t.auc[i] for t in alive])) if any(not math.isnan(t.auc[i]) for t in alive) else float("nan"),
        )
    return out


def write_trace(trace: nets.TrainTrace, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace.rows():
            w.writerow([row[0]] + [_fmt(v) for v in row[1:]])


def read_trace(path: str | Path) -> nets.TrainTrace:
    trace = nets.TrainTrace()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            trace.append(
                int(row["epoch"]),
                float(row["loss"]),
                float(row["accuracy"]),
                float(row["auc"]) if row["auc"] else float("nan"),
            )
    return trace


def _model_seed(seed: int, fold: int, model: str) -> tuple[int, int, int]:
    return (seed, fold, ALL_MODELS.index(model))


def fit_model(
    kind: str,
    x_train: np.ndarray,
    y_train: np.ndarray,
    config: ExperimentConfig,
    course: CourseText | None,
    segment_of_column: np.ndarray,
    seed,
    eval_data=None,
):
    """Train one model; returns ``(predict_fn, fitted_model, trace_or_None)``."""
    if kind == "gbc":
        model = gbc_fit(x_train, y_train, config.gbc)
        return model.predict_proba, model, None
    cfg = replace(config.train, seed=seed)
    model, trace = nets.train(kind, x_train, y_train, cfg, course, segment_of_column, eval_data)
    return (lambda x: nets.predict_proba(model, x)), model, trace


def run_experiment(
    features: FeatureMatrix,
    course: CourseText | None,
    config: ExperimentConfig = ExperimentConfig(),
    keep_models: bool = False,
) -> EvalReport:
    """K-fold evaluation of every configured model on the raw feature matrix.

    Normalization statistics and resampling are fitted on the training part
    of each fold only; the held-out fold is used solely for scoring and the
    per-epoch traces.
    """
    if features.mean is not None:
        raise ValueError("run_experiment expects an unnormalized feature matrix (normalize=False)")
    needs_text = [m for m in config.models if m in ("esn", "tbn")]
    if needs_text and course is None:
        raise ValidationError(f"models {needs_text} need course text embeddings")
    x_raw, y = features.x, features.labels
    seg_of_col = features.segment_of_column
    folds = stratified_kfold(y, config.K, config.seed)
    report = EvalReport(models=tuple(config.models))
    report.settings = {
        "K": config.K,
        "seed": config.seed,
        "resample": config.resample,
        "class_weights": config.train.class_weights,
        "train": {k: v for k, v in asdict(config.train).items() if k != "seed"},
        "gbc": asdict(config.gbc),
        "layout": list(config.layout),
        "n_learners": int(y.size),
        "n_features": int(x_raw.shape[1]),
        "prevalence": float(y.mean()),
        "aggregate": "unweighted fold mean, sample stddev",
    }
    pooled_probs = {m: np.zeros(y.size) for m in config.models}
    all_idx = np.arange(y.size)
    for k, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(all_idx, test_idx)
        norm = Normalizer().fit(x_raw[train_idx])
        x_train, x_test = norm.transform(x_raw[train_idx]), norm.transform(x_raw[test_idx])
        y_train, y_test = y[train_idx], y[test_idx]
        if config.resample:
            pick = oversample_minority(np.arange(train_idx.size), y_train, seed=config.seed * 1000 + k)
            x_train, y_train = x_train[pick], y_train[pick]
        for m in config.models:
            predict, model, trace = fit_model(
                m, x_train, y_train, config, course, seg_of_col, _model_seed(config.seed, k, m), (x_test, y_test)
            )
            probs = predict(x_test)
            pooled_probs[m][test_idx] = probs
            two = np.column_stack([1 - probs, probs])
            report.folds.append(
                FoldResult(
                    m,
                    k + 1,
                    accuracy(probs, y_test),
                    auc_roc(probs, y_test),
                    cross_entropy(two, y_test, reduction="sum"),
                    cross_entropy(two, y_test, reduction="mean"),
                )
            )
            if trace is not None:
                report.traces.setdefault(m, []).append(trace)
            if keep_models:
                report.trained.setdefault(m, []).append(model)
            log.info("fold %d %s auc=%.4f", k + 1, m, report.folds[-1].auc)
    if config.pooled:
        for m, probs in pooled_probs.items():
            report.pooled[m] = {"accuracy": accuracy(probs, y), "auc": auc_roc(probs, y)}
    return report


def segment_stats_report(dataset: Dataset, params: EngagementParams = EngagementParams()) -> list[dict]:
    """Per-segment averages over learners: engagement, views, time spent and expected time."""
    ids = [u for u in dataset.learner_ids()]
    t, v, n = raw_segment_features(dataset, ids)
    stats = compute_segment_stats(t, n, active=(v > 0) | (t > 0) | (n > 0))
    e = compute_engagement(t, n, stats.t_bar[None, :], stats.n_bar, params)
    return [
        {
            "segment": s + 1,
            "mean_engagement": float(e[:, s].mean()),
            "mean_views": float(v[:, s].mean()),
            "mean_time": float(t[:, s].mean()),
            "expected_time": float(stats.t_bar[s]),
        }
        for s in range(dataset.S)
    ]


def write_segment_stats(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEGMENT_COLUMNS)
        for r in rows:
            w.writerow([r["segment"]] + [repr(r[c]) for c in SEGMENT_COLUMNS[1:]])


def read_segment_stats(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {c: (int(row[c]) if c == "segment" else float(row[c])) for c in SEGMENT_COLUMNS}
            for row in csv.DictReader(fh)
        ]
