"""Synthetic courses with planted segment relevance.

A generated course has ``S`` segments and ``Q`` quiz questions. The subset
``relevant_segments`` (R) drives both halves of the signal:

* quiz questions draw most of their words from the vocabulary of R
  segments, so R segments are closer to the summed quiz vector in
  embedding space;
* each question is tied to one R segment, and whether a learner answers it
  depends on their engagement with that segment.

Learner behavior on R segments rises with a latent skill; behavior on the
other segments follows an unrelated "diligence" factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .features import (
    EngagementParams,
    compute_engagement,
    compute_segment_stats,
    outcome_labels,
)
from .ingest import (
    ClickEvent,
    Dataset,
    EventKind,
    OutcomeRecord,
    QuizText,
    SegmentText,
    write_clickstream,
    write_course_text,
    write_outcomes,
)
from .textpipe import EmbeddingTable, IRREGULAR_LEMMAS, default_stopwords, embed_course, lemmatize

EPOCH_2017_MS = 1_483_228_800_000
SEVEN_MONTHS_MS = 7 * 30 * 24 * 3600 * 1000

_CONSONANTS = "bdfgklmnprtvz"
_VOWELS = "aeiou"
_FILLER = ("the", "and", "of", "to", "a", "in", "is", "for", "with", "this", "that", "on", "are", "by")

FILES = {
    "clickstream": "clickstream.csv",
    "course": "course.txt",
    "outcomes": "outcomes.csv",
    "embeddings": "embeddings.txt",
    "meta": "synth_meta.json",
}


@dataclass(frozen=True)
class SynthConfig:
    U: int = 3000
    S: int = 35
    Q: int = 10
    relevant_segments: tuple[int, ...] = (3, 7, 10, 14, 19, 23, 27, 32)
    hot_segments: tuple[int, ...] = (5, 12, 21, 30)
    skipped_segments: tuple[int, ...] = (9, 25)
    words_per_segment: int = 15
    shared_words: int = 60
    overlap_rate: float = 0.05
    segment_length: int = 60
    question_length: int = 30
    quiz_relevant_fraction: float = 0.8
    embedding_dim: int = 100
    embedding_scale: float = 1.0
    skill_effect: float = 1.0
    diligence_effect: float = 0.35
    activity_noise: float = 0.1
    idle_rate: float = 0.0
    idle_mean_s: float = 1200.0
    skill_noise: float = 0.0
    segments_per_question: int = 1
    skim_rate: float = 0.05
    answer_sharpness: float = 12.0
    pass_rate_target: float = 0.9
    seed: int = 42

    def validate(self) -> None:
        if self.U < 1 or self.S < 1 or self.Q < 1:
            raise ConfigError("U, S and Q must be positive")
        if not 0.0 < self.pass_rate_target < 1.0:
            raise ConfigError(f"pass_rate_target must lie in (0, 1), got {self.pass_rate_target}")
        if not self.relevant_segments:
            raise ConfigError("relevant_segments must not be empty")
        for name in ("relevant_segments", "hot_segments", "skipped_segments"):
            bad = [s for s in getattr(self, name) if not 1 <= s <= self.S]
            if bad:
                raise ConfigError(f"{name} outside 1..{self.S}: {bad}")
        if not 0.7 <= self.quiz_relevant_fraction <= 1.0:
            raise ConfigError("quiz_relevant_fraction must lie in [0.7, 1]")
        if not 0.0 <= self.overlap_rate < 1.0:
            raise ConfigError("overlap_rate must lie in [0, 1)")
        if self.skill_noise < 0:
            raise ConfigError("skill_noise must be non-negative")
        if self.embedding_dim < 1 or self.words_per_segment < 1:
            raise ConfigError("embedding_dim and words_per_segment must be positive")


@dataclass
class SynthCourse:
    dataset: Dataset
    embeddings: EmbeddingTable
    config: SynthConfig
    question_segments: list[list[int]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {k: out / v for k, v in FILES.items()}
        write_clickstream(self.dataset.events, paths["clickstream"])
        write_course_text(self.dataset.segments, self.dataset.quiz, paths["course"])
        write_outcomes(self.dataset.outcomes, paths["outcomes"])
        self.embeddings.save(paths["embeddings"])
        paths["meta"].write_text(json.dumps(self.meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def _make_words(n: int, rng: np.random.Generator) -> list[str]:
    banned = set(default_stopwords()) | set(IRREGULAR_LEMMAS) | set(IRREGULAR_LEMMAS.values())
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < n:
        n_syll = int(rng.integers(2, 4))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(n_syll))
        if w in seen or w in banned or lemmatize(w) != w:
            continue
        seen.add(w)
        words.append(w)
    return words


def _vocabulary(cfg: SynthConfig, rng: np.random.Generator):
    words = _make_words(cfg.S * cfg.words_per_segment + cfg.shared_words, rng)
    pools = [
        words[s * cfg.words_per_segment : (s + 1) * cfg.words_per_segment] for s in range(cfg.S)
    ]
    shared = words[cfg.S * cfg.words_per_segment :]
    dim = cfg.embedding_dim
    centers = rng.normal(0.0, 1.0, size=(cfg.S, dim))
    entries: dict[str, np.ndarray] = {}
    for s, pool in enumerate(pools):
        for w in pool:
            entries[w] = np.round(cfg.embedding_scale * (centers[s] + 0.6 * rng.normal(size=dim)), 6)
    for w in shared:
        entries[w] = np.round(cfg.embedding_scale * rng.normal(size=dim), 6)
    return pools, shared, EmbeddingTable(dim, entries)


def _draw_text(pool_choices, length, rng) -> str:
    tokens = []
    for _ in range(length):
        r = rng.random()
        if r < 0.25:
            tokens.append(_FILLER[int(rng.integers(len(_FILLER)))])
        else:
            pool = pool_choices()
            tokens.append(pool[int(rng.integers(len(pool)))])
    text = " ".join(tokens)
    return text[0].upper() + text[1:] + "."


def _course_text(cfg: SynthConfig, pools, shared, rng):
    relevant = [s - 1 for s in cfg.relevant_segments]
    segments = []
    for s in range(cfg.S):
        def choose(s=s):
            r = rng.random()
            if r < cfg.overlap_rate:
                return pools[int(rng.integers(cfg.S))]
            if r < cfg.overlap_rate + 0.15:
                return shared
            return pools[s]

        segments.append(SegmentText(s + 1, _draw_text(choose, cfg.segment_length, rng)))

    question_segments = _question_segments(relevant, cfg.Q, cfg.segments_per_question)
    quiz = []
    for q in range(cfg.Q):
        own = question_segments[q]

        def choose(own=own):
            r = rng.random()
            if r < cfg.quiz_relevant_fraction * 0.7:
                return pools[own[int(rng.integers(len(own)))]]
            if r < cfg.quiz_relevant_fraction:
                return pools[relevant[int(rng.integers(len(relevant)))]]
            return shared

        quiz.append(QuizText(q + 1, _draw_text(choose, cfg.question_length, rng)))
    return segments, quiz, [[s + 1 for s in segs] for segs in question_segments]


def _question_segments(relevant: list[int], Q: int, k: int) -> list[list[int]]:
    """Segments each question draws on: R[q], R[q + 3], R[q + 6], ... (mod |R|)."""
    out = []
    for q in range(Q):
        segs = []
        for j in range(k):
            s = relevant[(q + 3 * j) % len(relevant)]
            if s not in segs:
                segs.append(s)
        out.append(segs)
    return out


def _learner_events(learner: str, plan, start_ms: int, rng) -> list[ClickEvent]:
    """Lay out one learner's visits in time. ``plan`` is [(segment, seconds, offtask_fraction)]."""
    events = []
    now = start_ms
    for seg, seconds, off_frac in plan:
        dur = max(1000, int(round(seconds * 1000)))
        events.append(ClickEvent(learner, seg, EventKind.ENTER, now))
        if off_frac > 0:
            off = int(dur * off_frac)
            bg = now + int(rng.integers(1, max(2, dur - off)))
            events.append(ClickEvent(learner, seg, EventKind.BACKGROUND, bg))
            events.append(ClickEvent(learner, seg, EventKind.FOREGROUND, bg + off))
            dur += off
        events.append(ClickEvent(learner, seg, EventKind.EXIT, now + dur))
        now += dur + int(rng.integers(500, 5000))
    return events


def generate(cfg: SynthConfig = SynthConfig()) -> SynthCourse:
    """Generate a full course dataset; identical output for identical config."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    text_ss, learner_ss, score_ss = root.spawn(3)
    text_rng = np.random.default_rng(text_ss)
    pools, shared, table = _vocabulary(cfg, text_rng)
    segments, quiz, question_segments = _course_text(cfg, pools, shared, text_rng)

    rng = np.random.default_rng(learner_ss)
    S, U = cfg.S, cfg.U
    in_r = np.zeros(S, dtype=bool)
    in_r[[s - 1 for s in cfg.relevant_segments]] = True
    base_time = np.exp(rng.normal(math.log(45.0), 0.35, size=S))
    base_views = np.full(S, 0.4)
    for s in cfg.hot_segments:
        base_time[s - 1] *= 2.2
        base_views[s - 1] = 1.2
    skip_prob = np.full(S, 0.04)
    for s in cfg.skipped_segments:
        base_time[s - 1] *= 0.35
        skip_prob[s - 1] = 0.45

    skill = rng.normal(size=U)
    diligence = rng.normal(size=U)
    skim_base = math.log(cfg.skim_rate / (1 - cfg.skim_rate)) if cfg.skim_rate > 0 else -math.inf
    attentive = np.zeros((U, S))
    noted = np.zeros((U, S))
    events: list[ClickEvent] = []
    ids = [f"u{u + 1:05d}" for u in range(U)]
    for u in range(U):
        z = skill[u] * cfg.skill_effect * in_r + cfg.diligence_effect * diligence[u]
        visited = rng.random(S) >= np.where(in_r, skip_prob / (1 + np.exp(2 * skill[u])) * 2, skip_prob)
        totals = base_time * np.exp(z + cfg.activity_noise * rng.normal(size=S))
        extra = rng.poisson(base_views * np.exp(0.5 * z))
        notes = rng.poisson(0.35 * np.exp(1.2 * z))
        # skimming: a short pass over the slide without notes; less skilled
        # learners skim relevant slides more often
        skim_logit = np.where(in_r, skim_base - cfg.skill_effect * 2.0 * skill[u], skim_base)
        skim = rng.random(S) < 1.0 / (1.0 + np.exp(-skim_logit))
        totals = np.where(skim, totals * 0.2, totals)
        notes = np.where(skim, 0, notes)
        plan_first, plan_revisit, annot = [], [], []
        for s in range(S):
            if not visited[s]:
                continue
            k = 1 + int(extra[s])
            shares = rng.dirichlet(np.ones(k)) if k > 1 else np.ones(1)
            attentive[u, s] = totals[s]
            noted[u, s] = notes[s]
            for j in range(k):
                off = float(rng.uniform(0.1, 0.4)) if rng.random() < 0.15 else 0.0
                idle = float(rng.exponential(cfg.idle_mean_s)) if rng.random() < cfg.idle_rate else 0.0
                item = (s + 1, totals[s] * shares[j] + idle, off)
                (plan_first if j == 0 else plan_revisit).append(item)
            annot.extend([s + 1] * int(notes[s]))
        order = rng.permutation(len(plan_revisit))
        plan = plan_first + [plan_revisit[i] for i in order]
        start = EPOCH_2017_MS + int(rng.integers(0, SEVEN_MONTHS_MS))
        learner_events = _learner_events(ids[u], plan, start, rng)
        # annotations land inside the first visit of their segment
        first_visit = {}
        for i, ev in enumerate(learner_events):
            if ev.kind is EventKind.ENTER and ev.segment_id not in first_visit:
                first_visit[ev.segment_id] = i
        inserts = {}
        for seg in annot:
            inserts.setdefault(first_visit[seg], []).append(seg)
        merged = []
        for i, ev in enumerate(learner_events):
            merged.append(ev)
            for seg in inserts.get(i, ()):
                merged.append(ClickEvent(ids[u], seg, EventKind.ANNOTATE, ev.timestamp))
        events.extend(merged)

    scores = _scores(cfg, attentive, noted, question_segments, np.random.default_rng(score_ss))
    outcomes = tuple(OutcomeRecord(u, float(sc)) for u, sc in zip(ids, scores))
    dataset = Dataset(tuple(events), tuple(segments), tuple(quiz), outcomes)
    meta = {
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "question_segments": question_segments,
        "pass_rate": float(outcome_labels(scores).mean()),
    }
    return SynthCourse(dataset, table, cfg, question_segments, meta)


def _scores(cfg: SynthConfig, t: np.ndarray, n: np.ndarray, question_segments, rng) -> np.ndarray:
    """Quiz scores from attentive behavior: question q is answered iff the engagement
    on its segment, sharpened and offset, beats logistic noise scaled by ``skill_noise``.

    ``t`` holds attentive seconds (idle time excluded) and ``n`` annotation counts.
    """
    stats = compute_segment_stats(t, n, active=t > 0)
    e = compute_engagement(t, n, stats.t_bar[None, :], stats.n_bar, EngagementParams())
    # a question needs every segment it draws on, so its weakest segment counts
    weakest = np.column_stack([e[:, np.array(segs) - 1].min(axis=1) for segs in question_segments])
    signal = cfg.answer_sharpness * weakest  # (U, Q)
    difficulty = np.linspace(-0.5, 0.5, cfg.Q)
    noise = cfg.skill_noise * rng.logistic(size=signal.shape)

    def pass_rate(offset: float) -> tuple[float, np.ndarray]:
        correct = signal - difficulty - offset + noise > 0
        sc = np.round(correct.sum(axis=1) / cfg.Q, 10)
        return float(outcome_labels(sc).mean()), sc

    lo, hi = -100.0, 100.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        rate, _ = pass_rate(mid)
        if rate > cfg.pass_rate_target:
            lo = mid
        else:
            hi = mid
    rate_lo, sc_lo = pass_rate(lo)
    rate_hi, sc_hi = pass_rate(hi)
    rate, scores = min(((rate_lo, sc_lo), (rate_hi, sc_hi)), key=lambda r: abs(r[0] - cfg.pass_rate_target))
    tol = max(0.03, 1.0 / cfg.U)
    if abs(rate - cfg.pass_rate_target) > tol:
        raise ConfigError(
            f"pass rate {cfg.pass_rate_target} infeasible for this configuration (closest {rate:.3f})"
        )
    return scores


# ---------------------------------------------------------------------------
# Diagnostics


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b / denom) if denom > 0 else 0.0


def planted_check(
    dataset: Dataset,
    table: EmbeddingTable,
    relevant_segments,
    seed: int = 0,
) -> dict:
    """Check that the planted relevance shows up in text similarity and in engagement-label correlation."""
    from .features import assemble_feature_matrix

    relevant = np.zeros(dataset.S, dtype=bool)
    relevant[[s - 1 for s in relevant_segments]] = True
    course = embed_course([s.raw_text for s in dataset.segments], [q.raw_text for q in dataset.quiz], table)
    sims = course.similarities
    fm = assemble_feature_matrix(dataset, layout=("engagement",), normalize=False)
    labels = fm.labels.astype(float)
    corr = np.array([_pearson(fm.x[:, s], labels) for s in range(dataset.S)])
    # permutation control: the same relevant-segment signal against shuffled labels
    shuffled = np.random.default_rng(seed).permutation(labels)
    shuffled_corr = _pearson(fm.x[:, relevant].mean(axis=1), shuffled)

    report = {
        "relevant_similarity_mean": float(sims[relevant].mean()),
        "relevant_correlation_mean": float(corr[relevant].mean()),
        "shuffled_correlation": float(shuffled_corr),
        "pass_rate": float(labels.mean()),
    }
    if (~relevant).any():
        report.update(
            other_similarity_mean=float(sims[~relevant].mean()),
            similarity_gap=float(sims[relevant].mean() - sims[~relevant].mean()),
            other_correlation_mean=float(corr[~relevant].mean()),
            correlation_gap=float(corr[relevant].mean() - corr[~relevant].mean()),
        )
    else:
        report.update(
            other_similarity_mean=None, similarity_gap=None, other_correlation_mean=None, correlation_gap=None
        )
    report["ok"] = bool(
        report["similarity_gap"] is None or (report["similarity_gap"] > 0 and report["correlation_gap"] > 0)
    )
    return report
