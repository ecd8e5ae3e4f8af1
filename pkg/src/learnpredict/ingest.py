"""Parsing and validation of raw course inputs.

Three inputs make up a course dataset: a clickstream log (CSV or JSONL), a
course text file holding segment and quiz-question blocks, and an outcomes
CSV with one final quiz score per learner.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError, ValidationError

log = logging.getLogger(__name__)

CLICKSTREAM_HEADER = ("learner_id", "segment_id", "kind", "timestamp_ms")
OUTCOMES_HEADER = ("learner_id", "score")
SCORE_GRID_TOL = 1e-9


class EventKind(str, enum.Enum):
    ENTER = "enter"
    EXIT = "exit"
    BACKGROUND = "background"
    FOREGROUND = "foreground"
    ANNOTATE = "annotate"


@dataclass(frozen=True, slots=True)
class ClickEvent:
    learner_id: str
    segment_id: int
    kind: EventKind
    timestamp: int  # milliseconds since epoch


@dataclass(frozen=True, slots=True)
class SegmentText:
    segment_id: int
    raw_text: str


@dataclass(frozen=True, slots=True)
class QuizText:
    question_id: int
    raw_text: str


@dataclass(frozen=True, slots=True)
class OutcomeRecord:
    learner_id: str
    score: float


@dataclass(frozen=True, slots=True)
class ParseIssue:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@dataclass(frozen=True)
class Dataset:
    events: tuple[ClickEvent, ...]
    segments: tuple[SegmentText, ...]
    quiz: tuple[QuizText, ...]
    outcomes: tuple[OutcomeRecord, ...]

    @property
    def S(self) -> int:
        return len(self.segments)

    @property
    def Q(self) -> int:
        return len(self.quiz)

    def learner_ids(self) -> list[str]:
        """Learners in first-appearance order (events first, then outcomes)."""
        seen: dict[str, None] = {}
        for ev in self.events:
            seen.setdefault(ev.learner_id, None)
        for rec in self.outcomes:
            seen.setdefault(rec.learner_id, None)
        return list(seen)

    def events_by_learner(self) -> dict[str, list[ClickEvent]]:
        grouped: dict[str, list[ClickEvent]] = defaultdict(list)
        for ev in self.events:
            grouped[ev.learner_id].append(ev)
        return dict(grouped)


# ---------------------------------------------------------------------------
# Clickstream


def _event_from_fields(learner: str, segment: str, kind: str, ts: str) -> ClickEvent:
    if not learner:
        raise ValueError("empty learner_id")
    try:
        seg = int(segment)
    except (TypeError, ValueError):
        raise ValueError(f"non-integer segment_id {segment!r}") from None
    try:
        ev_kind = EventKind(str(kind).strip().lower())
    except ValueError:
        raise ValueError(f"unknown event kind {kind!r}") from None
    try:
        stamp = int(ts)
    except (TypeError, ValueError):
        raise ValueError(f"non-numeric timestamp {ts!r}") from None
    if stamp < 0:
        raise ValueError(f"negative timestamp {stamp}")
    return ClickEvent(learner, seg, ev_kind, stamp)


def _open_text(path: Path):
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def parse_clickstream(
    path: str | Path, fmt: str | None = None
) -> tuple[list[ClickEvent], list[ParseIssue]]:
    """Parse a clickstream log.

    Returns the events in file order and one :class:`ParseIssue` per
    malformed row. Rows are never dropped silently: every data row ends up in
    exactly one of the two lists.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"
    fmt = fmt.lower()
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unsupported clickstream format {fmt!r}")

    events: list[ClickEvent] = []
    issues: list[ParseIssue] = []
    with _open_text(path) as fh:
        if fmt == "csv":
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != CLICKSTREAM_HEADER:
                raise InputError(
                    f"{path}: expected header {','.join(CLICKSTREAM_HEADER)}, got {header}"
                )
            for row in reader:
                lineno = reader.line_num
                if not row:
                    continue
                if len(row) != 4:
                    issues.append(ParseIssue(lineno, f"expected 4 fields, got {len(row)}"))
                    continue
                try:
                    events.append(_event_from_fields(*row))
                except ValueError as exc:
                    issues.append(ParseIssue(lineno, str(exc)))
        else:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    if not isinstance(obj, dict):
                        raise ValueError("row is not a JSON object")
                    missing = [k for k in CLICKSTREAM_HEADER if k not in obj]
                    if missing:
                        raise ValueError(f"missing fields {missing}")
                    events.append(
                        _event_from_fields(
                            str(obj["learner_id"]),
                            obj["segment_id"],
                            obj["kind"],
                            obj["timestamp_ms"],
                        )
                    )
                except ValueError as exc:
                    issues.append(ParseIssue(lineno, str(exc)))
    for issue in issues:
        log.warning("%s: %s", path, issue)
    return events, issues


def write_clickstream(events: Iterable[ClickEvent], path: str | Path, fmt: str = "csv") -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CLICKSTREAM_HEADER)
            for ev in events:
                writer.writerow((ev.learner_id, ev.segment_id, ev.kind.value, ev.timestamp))
        elif fmt == "jsonl":
            for ev in events:
                row = dict(zip(CLICKSTREAM_HEADER, (ev.learner_id, ev.segment_id, ev.kind.value, ev.timestamp)))
                fh.write(json.dumps(row) + "\n")
        else:
            raise ValueError(f"unsupported clickstream format {fmt!r}")


# ---------------------------------------------------------------------------
# Course text


def parse_course_text(path: str | Path) -> tuple[list[SegmentText], list[QuizText]]:
    """Parse ``#SEGMENT <id>`` / ``#QUESTION <id>`` blocks.

    Text before the first marker is ignored. Segment and question ids must
    each form a contiguous ``1..n`` range; blocks are returned sorted by id.
    """
    path = Path(path)
    blocks: dict[str, dict[int, list[str]]] = {"SEGMENT": {}, "QUESTION": {}}
    current: list[str] | None = None
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.rstrip("\r\n")
            parts = stripped.split()
            if parts and parts[0] in ("#SEGMENT", "#QUESTION"):
                tag = parts[0][1:]
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: malformed marker {stripped!r}")
                try:
                    block_id = int(parts[1])
                except ValueError:
                    raise ValidationError(
                        f"{path}:{lineno}: non-integer {tag.lower()} id {parts[1]!r}"
                    ) from None
                if block_id in blocks[tag]:
                    raise ValidationError(f"{path}:{lineno}: duplicate {tag.lower()} id {block_id}")
                current = blocks[tag][block_id] = []
            elif current is not None:
                current.append(stripped)

    for tag, found in blocks.items():
        ids = sorted(found)
        if ids != list(range(1, len(ids) + 1)):
            missing = sorted(set(range(1, (ids[-1] if ids else 0) + 1)) - set(ids))
            raise ValidationError(f"{path}: gap in {tag.lower()} ids, missing {missing}")

    def body(lines: list[str]) -> str:
        return "\n".join(lines).strip("\n")

    segments = [SegmentText(i, body(lines)) for i, lines in sorted(blocks["SEGMENT"].items())]
    quiz = [QuizText(i, body(lines)) for i, lines in sorted(blocks["QUESTION"].items())]
    for seg in segments:
        if not seg.raw_text.strip():
            log.warning("%s: segment %d has empty text", path, seg.segment_id)
    if not quiz:
        log.warning("%s: no quiz questions found", path)
    return segments, quiz


def write_course_text(
    segments: Sequence[SegmentText], quiz: Sequence[QuizText], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seg in segments:
            fh.write(f"#SEGMENT {seg.segment_id}\n")
            if seg.raw_text:
                fh.write(seg.raw_text + "\n")
        for q in quiz:
            fh.write(f"#QUESTION {q.question_id}\n")
            if q.raw_text:
                fh.write(q.raw_text + "\n")


# ---------------------------------------------------------------------------
# Outcomes


def parse_outcomes(path: str | Path) -> tuple[list[OutcomeRecord], list[ParseIssue]]:
    path = Path(path)
    records: list[OutcomeRecord] = []
    issues: list[ParseIssue] = []
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != OUTCOMES_HEADER:
            raise InputError(f"{path}: expected header {','.join(OUTCOMES_HEADER)}, got {header}")
        for row in reader:
            if not row:
                continue
            lineno = reader.line_num
            if len(row) != 2 or not row[0]:
                issues.append(ParseIssue(lineno, f"malformed outcome row {row}"))
                continue
            try:
                score = float(row[1])
            except ValueError:
                issues.append(ParseIssue(lineno, f"non-numeric score {row[1]!r}"))
                continue
            if not math.isfinite(score):
                issues.append(ParseIssue(lineno, f"non-finite score {row[1]!r}"))
                continue
            records.append(OutcomeRecord(row[0], score))
    for issue in issues:
        log.warning("%s: %s", path, issue)
    return records, issues


def write_outcomes(outcomes: Iterable[OutcomeRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OUTCOMES_HEADER)
        for rec in outcomes:
            writer.writerow((rec.learner_id, repr(float(rec.score))))


def load_dataset(
    clickstream: str | Path,
    course_text: str | Path,
    outcomes: str | Path,
    fmt: str | None = None,
) -> tuple[Dataset, list[ParseIssue]]:
    events, issues = parse_clickstream(clickstream, fmt)
    segments, quiz = parse_course_text(course_text)
    records, outcome_issues = parse_outcomes(outcomes)
    dataset = Dataset(tuple(events), tuple(segments), tuple(quiz), tuple(records))
    return dataset, issues + outcome_issues


# ---------------------------------------------------------------------------
# Visit reconstruction


@dataclass(frozen=True, slots=True)
class Interval:
    segment_id: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class LearnerTimeline:
    """Visits, off-task spans and annotation counts recovered from one learner's events."""

    visits: list[Interval] = field(default_factory=list)
    offtask: list[Interval] = field(default_factory=list)
    annotations: Counter = field(default_factory=Counter)
    issues: list[str] = field(default_factory=list)


def learner_timeline(events: Iterable[ClickEvent]) -> LearnerTimeline:
    """Pair enter/exit and background/foreground events for a single learner.

    An enter with no matching exit is closed at the learner's next event
    that belongs to a different segment or is another enter; if no such event
    follows, the visit is dropped and reported.
    """
    ordered = sorted(events, key=lambda ev: ev.timestamp)  # stable: file order breaks ties
    tl = LearnerTimeline()
    open_seg: int | None = None
    open_start = 0
    bg_open: dict[int, int] = {}

    def close_visit(end: int) -> None:
        nonlocal open_seg
        tl.visits.append(Interval(open_seg, open_start, end))
        if open_seg in bg_open:
            tl.offtask.append(Interval(open_seg, bg_open.pop(open_seg), end))
        open_seg = None

    for ev in ordered:
        seg = ev.segment_id
        if open_seg is not None and (seg != open_seg or ev.kind is EventKind.ENTER):
            tl.issues.append(
                f"unmatched enter on segment {open_seg} at {open_start}, closed at next event {ev.timestamp}"
            )
            close_visit(ev.timestamp)
        kind = ev.kind
        if kind is EventKind.ENTER:
            open_seg, open_start = seg, ev.timestamp
        elif kind is EventKind.EXIT:
            if open_seg == seg:
                close_visit(ev.timestamp)
            else:
                tl.issues.append(f"exit without enter on segment {seg} at {ev.timestamp}")
        elif kind is EventKind.BACKGROUND:
            if seg in bg_open:
                tl.issues.append(f"repeated background on segment {seg} at {ev.timestamp}")
            else:
                bg_open[seg] = ev.timestamp
        elif kind is EventKind.FOREGROUND:
            if seg in bg_open:
                tl.offtask.append(Interval(seg, bg_open.pop(seg), ev.timestamp))
            else:
                tl.issues.append(f"foreground without background on segment {seg} at {ev.timestamp}")
        else:
            tl.annotations[seg] += 1
    if open_seg is not None:
        tl.issues.append(f"unmatched enter on segment {open_seg} at {open_start}, dropped")
    return tl


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True, slots=True)
class ValidationEntry:
    code: str
    subject: str
    message: str


def is_on_score_grid(score: float, tol: float = SCORE_GRID_TOL) -> bool:
    return abs(score * 10 - round(score * 10)) <= tol * 10


def validate_dataset(d: Dataset, strict: bool = False) -> list[ValidationEntry]:
    """Collect consistency problems without modifying ``d``.

    Codes: ``no-outcome``, ``no-activity``, ``duplicate-outcome``,
    ``score-range``, ``off-grid-score`` (strict only), ``segment-range``,
    ``empty-segment``, ``no-quiz``, ``unmatched``.
    """
    report: list[ValidationEntry] = []
    by_learner = d.events_by_learner()
    outcome_counts = Counter(rec.learner_id for rec in d.outcomes)

    for learner in by_learner:
        if learner not in outcome_counts:
            report.append(ValidationEntry("no-outcome", learner, "learner has events but no outcome"))
    for rec in d.outcomes:
        if rec.learner_id not in by_learner:
            report.append(ValidationEntry("no-activity", rec.learner_id, "outcome recorded but no activity"))
    for learner, n in outcome_counts.items():
        if n > 1:
            report.append(ValidationEntry("duplicate-outcome", learner, f"{n} outcomes recorded"))
    for rec in d.outcomes:
        if not 0.0 <= rec.score <= 1.0:
            report.append(ValidationEntry("score-range", rec.learner_id, f"score {rec.score} outside [0, 1]"))
        elif strict and not is_on_score_grid(rec.score):
            report.append(
                ValidationEntry("off-grid-score", rec.learner_id, f"score {rec.score} not a multiple of 0.1")
            )
    bad_segments = Counter(ev.segment_id for ev in d.events if not 1 <= ev.segment_id <= d.S)
    for seg, n in sorted(bad_segments.items()):
        report.append(ValidationEntry("segment-range", str(seg), f"{n} events reference segment {seg} (S={d.S})"))
    for seg in d.segments:
        if not seg.raw_text.strip():
            report.append(ValidationEntry("empty-segment", str(seg.segment_id), "segment text is empty"))
    if d.Q == 0:
        report.append(ValidationEntry("no-quiz", "-", "no quiz questions"))
    for learner, events in by_learner.items():
        for msg in learner_timeline(events).issues:
            report.append(ValidationEntry("unmatched", learner, msg))
    return report
