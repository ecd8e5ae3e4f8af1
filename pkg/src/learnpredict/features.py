"""Per-(learner, segment) behavioral features and the learner feature matrix."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .ingest import ClickEvent, Dataset, LearnerTimeline, learner_timeline

log = logging.getLogger(__name__)

PASS_CUTOFF = 0.8
FLOOR_FRACTION = 1e-6

# per-segment feature kinds, in column order within a segment block
FEATURE_KINDS = ("time", "views", "annotations", "engagement", "expected_time")
DEFAULT_LAYOUT = ("time", "views", "annotations", "engagement")


@dataclass(frozen=True)
class EngagementParams:
    gamma: float = 1.0
    alpha_t: float = 1.0
    alpha_b: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.alpha_t < 0 or self.alpha_b < 0:
            raise ConfigError("alpha_t and alpha_b must be non-negative")


@dataclass(frozen=True)
class SegmentStats:
    t_bar: np.ndarray  # (S,) expected seconds per segment, floored
    n_bar: float  # expected annotations per active (learner, segment) cell, floored


@dataclass
class FeatureMatrix:
    x: np.ndarray  # (U, D)
    labels: np.ndarray  # (U,) int, 1 = pass
    feature_names: list[str]
    learner_ids: list[str]
    layout: tuple[str, ...]
    S: int
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    excluded: list[str] = field(default_factory=list)

    @property
    def segment_of_column(self) -> np.ndarray:
        """0-based segment index owning each column."""
        return np.repeat(np.arange(self.S), len(self.layout))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([*self.feature_names, "label"])
            for row, label in zip(self.x, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])


class Normalizer:
    """Column z-scoring; constant columns map to zero."""

    def fit(self, x: np.ndarray) -> "Normalizer":
        self.mean_ = x.mean(axis=0)
        std = x.std(axis=0)
        # columns constant up to rounding count as constant
        scale = np.maximum(np.abs(x).max(axis=0, initial=0.0), 1.0)
        self.std_ = np.where(std > 1e-12 * scale, std, 0.0)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        safe = np.where(self.std_ > 0, self.std_, 1.0)
        out = (x - self.mean_) / safe
        out[:, self.std_ == 0] = 0.0
        return out

    def fit_transform(self, x: np.ndarray) -> np.ndarray:
        return self.fit(x).transform(x)


# ---------------------------------------------------------------------------
# Raw per-segment quantities


def _timeline(events: Iterable[ClickEvent] | LearnerTimeline) -> LearnerTimeline:
    if isinstance(events, LearnerTimeline):
        return events
    return learner_timeline(events)


def _overlap(a_start: int, a_end: int, b_start: int, b_end: int) -> int:
    return max(0, min(a_end, b_end) - max(a_start, b_start))


def time_spent_ms(tl: LearnerTimeline, segment: int) -> int:
    visits = [v for v in tl.visits if v.segment_id == segment]
    total = sum(v.length for v in visits)
    off = 0
    for o in tl.offtask:
        if o.segment_id == segment:
            off += sum(_overlap(o.start, o.end, v.start, v.end) for v in visits)
    spent = total - off
    if spent < 0:
        log.warning("off-task time exceeds recorded time on segment %d; clamped to 0", segment)
        spent = 0
    return spent


def _only_segment(tl: LearnerTimeline, segment: int | None) -> int:
    if segment is not None:
        return segment
    segs = {v.segment_id for v in tl.visits}
    if len(segs) > 1:
        raise ValueError("events span several segments; pass segment=")
    return segs.pop() if segs else -1


def compute_time_spent(events: Iterable[ClickEvent] | LearnerTimeline, segment: int | None = None) -> float:
    """Seconds on task: total visit time minus nested off-task time.

    ``events`` belong to one learner. They may cover other segments too, in
    which case ``segment`` selects the one to measure.
    """
    tl = _timeline(events)
    return time_spent_ms(tl, _only_segment(tl, segment)) / 1000.0


def compute_view_count(events: Iterable[ClickEvent] | LearnerTimeline, segment: int | None = None) -> int:
    tl = _timeline(events)
    seg = _only_segment(tl, segment)
    return sum(1 for v in tl.visits if v.segment_id == seg)


def raw_segment_features(dataset: Dataset, learner_ids: Sequence[str] | None = None):
    """Arrays (U, S) of time spent (s), views and annotations."""
    by_learner = dataset.events_by_learner()
    if learner_ids is None:
        learner_ids = dataset.learner_ids()
    S = dataset.S
    t = np.zeros((len(learner_ids), S))
    v = np.zeros((len(learner_ids), S))
    n = np.zeros((len(learner_ids), S))
    for i, learner in enumerate(learner_ids):
        tl = learner_timeline(by_learner.get(learner, ()))
        for visit in tl.visits:
            if 1 <= visit.segment_id <= S:
                v[i, visit.segment_id - 1] += 1
        for seg in {visit.segment_id for visit in tl.visits}:
            if 1 <= seg <= S:
                t[i, seg - 1] = time_spent_ms(tl, seg) / 1000.0
        for seg, count in tl.annotations.items():
            if 1 <= seg <= S:
                n[i, seg - 1] = count
    return t, v, n


def compute_segment_stats(t: np.ndarray, n: np.ndarray, active: np.ndarray | None = None) -> SegmentStats:
    """Expected time per segment and expected annotations per active cell.

    ``t`` and ``n`` are (U, S). The time average skips learners with zero
    time on that segment; the annotation average runs over every cell with
    any activity (``active``, defaulting to ``t > 0``). Zero averages are
    floored so that engagement stays finite.
    """
    t = np.asarray(t, dtype=float)
    n = np.asarray(n, dtype=float)
    if active is None:
        active = t > 0
    pos = t > 0
    counts = pos.sum(axis=0)
    sums = np.where(pos, t, 0.0).sum(axis=0)
    t_bar = np.divide(sums, counts, out=np.zeros(t.shape[1]), where=counts > 0)
    course_mean = t_bar[t_bar > 0].mean() if np.any(t_bar > 0) else 0.0
    t_floor = FLOOR_FRACTION * course_mean if course_mean > 0 else 1.0
    t_bar = np.where(t_bar > 0, t_bar, t_floor)

    n_active = n[active]
    n_bar = float(n_active.mean()) if n_active.size else 0.0
    if n_bar <= 0:
        n_course = float(n.mean()) if n.size else 0.0
        n_bar = FLOOR_FRACTION * n_course if n_course > 0 else 1.0
    return SegmentStats(t_bar=t_bar, n_bar=n_bar)


def compute_engagement(t, n, t_bar, n_bar: float, params: EngagementParams = EngagementParams()):
    """Engagement in [0, 1]; accepts scalars or broadcastable arrays."""
    time_term = ((1.0 + np.asarray(t, dtype=float) / t_bar) / 2.0) ** params.alpha_t
    note_term = ((1.0 + np.asarray(n, dtype=float) / n_bar) / 2.0) ** params.alpha_b
    e = np.minimum(params.gamma * time_term * note_term, 1.0)
    return float(e) if np.ndim(e) == 0 else e


# ---------------------------------------------------------------------------
# Matrix assembly


def outcome_labels(scores: np.ndarray, cutoff: float = PASS_CUTOFF) -> np.ndarray:
    # inclusive cutoff; the small slack absorbs float noise in 0.1 steps
    return (np.asarray(scores, dtype=float) >= cutoff - 1e-9).astype(int)


def assemble_feature_matrix(
    dataset: Dataset,
    params: EngagementParams = EngagementParams(),
    layout: Sequence[str] = DEFAULT_LAYOUT,
    normalize: bool = True,
    cutoff: float = PASS_CUTOFF,
) -> FeatureMatrix:
    """Build the learner x (segment, feature) matrix and pass/fail labels.

    Learners without an outcome are excluded and listed in ``excluded``.
    Expected time and annotation averages come from all learners with an
    outcome; they carry no label information.
    """
    layout = tuple(layout)
    unknown = [k for k in layout if k not in FEATURE_KINDS]
    if unknown or not layout:
        raise ConfigError(f"unknown feature kinds {unknown}; choose from {FEATURE_KINDS}")

    scores: dict[str, float] = {}
    for rec in dataset.outcomes:
        scores.setdefault(rec.learner_id, rec.score)
    all_ids = dataset.learner_ids()
    kept = [u for u in all_ids if u in scores]
    excluded = [u for u in all_ids if u not in scores]
    if excluded:
        log.warning("%d learners without outcome excluded", len(excluded))
    if not kept:
        raise ValidationError("no learners with outcomes")

    t, v, n = raw_segment_features(dataset, kept)
    stats = compute_segment_stats(t, n, active=(v > 0) | (t > 0) | (n > 0))
    e = compute_engagement(t, n, stats.t_bar[None, :], stats.n_bar, params)
    per_kind = {
        "time": t,
        "views": v,
        "annotations": n,
        "engagement": e,
        "expected_time": np.broadcast_to(stats.t_bar, t.shape),
    }
    S = dataset.S
    x = np.stack([per_kind[k] for k in layout], axis=2).reshape(len(kept), S * len(layout))
    names = [f"seg{s + 1}_{k}" for s in range(S) for k in layout]
    labels = outcome_labels(np.array([scores[u] for u in kept]), cutoff)

    fm = FeatureMatrix(
        x=x, labels=labels, feature_names=names, learner_ids=kept, layout=layout, S=S, excluded=excluded
    )
    if normalize:
        norm = Normalizer().fit(x)
        fm.x = norm.transform(x)
        fm.mean, fm.std = norm.mean_, norm.std_
    return fm
