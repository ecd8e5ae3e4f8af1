import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnpredict.errors import ConfigError
from learnpredict.features import (
    EngagementParams,
    Normalizer,
    assemble_feature_matrix,
    compute_engagement,
    compute_segment_stats,
    compute_time_spent,
    compute_view_count,
    outcome_labels,
)
from learnpredict.ingest import ClickEvent, Dataset, EventKind, OutcomeRecord, QuizText, SegmentText

E = EventKind


def ev(kind, ts, seg=1, learner="u"):
    return ClickEvent(learner, seg, kind, ts)


class TestTimeSpent:
    def test_off_task_subtracted(self):
        events = [ev(E.ENTER, 0), ev(E.BACKGROUND, 40_000), ev(E.FOREGROUND, 60_000), ev(E.EXIT, 120_000)]
        assert compute_time_spent(events) == 100.0

    def test_plain_visit(self):
        assert compute_time_spent([ev(E.ENTER, 0), ev(E.EXIT, 50_000)]) == 50.0

    def test_two_visits(self):
        events = [ev(E.ENTER, 0), ev(E.EXIT, 10_000), ev(E.ENTER, 30_000), ev(E.EXIT, 40_000)]
        assert compute_time_spent(events) == 20.0
        assert compute_view_count(events) == 2

    def test_no_events(self):
        assert compute_view_count([], segment=3) == 0
        assert compute_time_spent([], segment=3) == 0.0

    def test_unclosed_enter_counts_as_view(self):
        events = [ev(E.ENTER, 0, seg=1), ev(E.ENTER, 5000, seg=2), ev(E.EXIT, 9000, seg=2)]
        assert compute_view_count(events, segment=1) == 1
        assert compute_time_spent(events, segment=1) == 5.0

    def test_other_segments_need_selector(self):
        events = [ev(E.ENTER, 0, 1), ev(E.EXIT, 1, 1), ev(E.ENTER, 2, 2), ev(E.EXIT, 3, 2)]
        with pytest.raises(ValueError):
            compute_time_spent(events)


@st.composite
def timelines(draw):
    """Well-formed single-segment timelines of at most 10 events."""
    n_visits = draw(st.integers(1, 2))
    events, now = [], 0
    for _ in range(n_visits):
        now += draw(st.integers(0, 50))
        start = now
        length = draw(st.integers(1, 200))
        events.append(ev(E.ENTER, start))
        if draw(st.booleans()) and length > 2:
            b = start + draw(st.integers(1, length - 1))
            f = draw(st.integers(b, start + length))
            events += [ev(E.BACKGROUND, b), ev(E.FOREGROUND, f)]
        now = start + length
        events.append(ev(E.EXIT, now))
    return events


def brute_force_ms(events):
    """Count on-task milliseconds by stepping through every tick."""
    on_task = 0
    for tick in range(events[-1].timestamp + 1):
        inside = away = False
        for e in events:
            if e.timestamp > tick:
                break
            if e.kind is E.ENTER:
                inside = True
            elif e.kind is E.EXIT:
                inside = away = False
            elif e.kind is E.BACKGROUND:
                away = True
            elif e.kind is E.FOREGROUND:
                away = False
        # the tick [tick, tick+1) is on task if we are inside and not away after processing events at tick
        if inside and not away:
            on_task += 1
    return on_task


@settings(max_examples=150, deadline=None)
@given(timelines())
def test_time_spent_matches_ms_sweep(events):
    assert compute_time_spent(events) * 1000 == pytest.approx(brute_force_ms(events), abs=1e-9)


class TestEngagement:
    @pytest.mark.parametrize(
        "t, n, expected",
        [
            (50.0, 2.0, 1.0),  # both at their means
            (0.0, 0.0, 0.25),
            (150.0, 2.0, 1.0),  # cap binds
            (0.0, 2.0, 0.5),
            (25.0, 0.0, 0.375),
        ],
    )
    def test_examples(self, t, n, expected):
        assert compute_engagement(t, n, 50.0, 2.0) == expected

    def test_gamma_and_exponents(self):
        p = EngagementParams(gamma=0.5, alpha_t=2.0, alpha_b=0.0)
        assert compute_engagement(50.0, 7.0, 100.0, 1.0, p) == pytest.approx(0.5 * 0.75**2)

    @pytest.mark.parametrize("kwargs", [{"gamma": 0.0}, {"gamma": 1.5}, {"alpha_t": -1.0}])
    def test_bad_params(self, kwargs):
        with pytest.raises(ConfigError):
            EngagementParams(**kwargs)

    def test_bounded_on_random_inputs(self):
        rng = np.random.default_rng(0)
        t = rng.exponential(100.0, 100_000)
        n = rng.poisson(1.0, 100_000)
        t_bar = rng.uniform(1e-3, 500, 100_000)
        e = compute_engagement(t, n, t_bar, 0.7)
        assert e.min() >= 0.0 and e.max() <= 1.0

    @given(
        st.floats(0, 1e4),
        st.floats(0, 1e4),
        st.floats(0, 50),
        st.floats(1e-3, 1e3),
        st.floats(1e-3, 10),
    )
    def test_monotone_in_time(self, t1, t2, n, t_bar, n_bar):
        lo, hi = sorted((t1, t2))
        assert compute_engagement(lo, n, t_bar, n_bar) <= compute_engagement(hi, n, t_bar, n_bar)


class TestSegmentStats:
    def test_means_skip_zero_time(self):
        t = np.array([[0.0, 100.0], [60.0, 200.0], [120.0, 0.0]])
        stats = compute_segment_stats(t, np.zeros_like(t))
        assert stats.t_bar[0] == 90.0
        assert stats.t_bar[1] == 150.0

    def test_idle_segment_gets_floor(self):
        t = np.array([[0.0, 10.0], [0.0, 30.0]])
        stats = compute_segment_stats(t, np.zeros_like(t))
        assert stats.t_bar[0] == pytest.approx(1e-6 * 20.0)

    def test_everything_zero(self):
        stats = compute_segment_stats(np.zeros((2, 2)), np.zeros((2, 2)))
        assert np.all(stats.t_bar == 1.0) and stats.n_bar == 1.0

    def test_annotation_mean_over_active_cells(self):
        t = np.array([[10.0, 0.0], [10.0, 10.0]])
        n = np.array([[3.0, 0.0], [0.0, 0.0]])
        assert compute_segment_stats(t, n).n_bar == 1.0


def test_label_cutoff_inclusive():
    assert outcome_labels(np.array([0.7, 0.8, 0.1 * 8, 1.0])).tolist() == [0, 1, 1, 1]


class TestNormalizer:
    def test_moments(self):
        x = np.random.default_rng(1).normal(5, 3, size=(200, 6))
        x[:, 2] = 4.2
        z = Normalizer().fit_transform(x)
        assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
        std = z.std(axis=0)
        assert np.all(np.abs(std[[0, 1, 3, 4, 5]] - 1) < 1e-9)
        assert np.all(z[:, 2] == 0.0)

    def test_train_statistics_applied_to_test(self):
        train = np.array([[0.0], [2.0]])
        norm = Normalizer().fit(train)
        assert norm.transform(np.array([[4.0]]))[0, 0] == 3.0


def _toy_dataset():
    events = []
    for i, (secs, notes) in enumerate([(30, 0), (60, 1), (90, 2)]):
        u = f"u{i}"
        events += [ev(E.ENTER, 0, 1, u), ev(E.EXIT, secs * 1000, 1, u)]
        events += [ev(E.ANNOTATE, 10, 1, u)] * notes
        events += [ev(E.ENTER, 100_000, 2, u), ev(E.EXIT, 110_000, 2, u)]
    events.append(ev(E.ENTER, 0, 1, "nolabel"))
    events.append(ev(E.EXIT, 5, 1, "nolabel"))
    segs = (SegmentText(1, "a"), SegmentText(2, "b"))
    outcomes = (OutcomeRecord("u0", 0.5), OutcomeRecord("u1", 0.8), OutcomeRecord("u2", 1.0))
    return Dataset(tuple(events), segs, (QuizText(1, "q"),), outcomes)


class TestAssemble:
    def test_shape_and_names(self):
        fm = assemble_feature_matrix(_toy_dataset(), normalize=False)
        assert fm.x.shape == (3, 8)
        assert fm.feature_names[:4] == ["seg1_time", "seg1_views", "seg1_annotations", "seg1_engagement"]
        assert fm.excluded == ["nolabel"]
        assert fm.labels.tolist() == [0, 1, 1]

    def test_raw_values(self):
        fm = assemble_feature_matrix(_toy_dataset(), normalize=False)
        # t_bar for segment 1 is 60 s, n_bar is 3 notes over 6 active cells
        assert fm.x[:, 0].tolist() == [30.0, 60.0, 90.0]
        expected_e = [min((1 + t / 60) / 2 * (1 + n / 0.5) / 2, 1.0) for t, n in [(30, 0), (60, 1), (90, 2)]]
        assert fm.x[:, 3] == pytest.approx(expected_e)

    def test_normalized_columns(self):
        fm = assemble_feature_matrix(_toy_dataset())
        assert np.all(np.abs(fm.x.mean(axis=0)) < 1e-9)
        std = fm.x.std(axis=0)
        assert np.all((np.abs(std - 1) < 1e-9) | (std == 0))

    def test_full_size_layout(self):
        from learnpredict.synth import SynthConfig, generate

        course = generate(SynthConfig(U=40, pass_rate_target=0.5, seed=3))
        fm = assemble_feature_matrix(course.dataset)
        assert fm.x.shape == (40, 140)
        assert "seg17_engagement" in fm.feature_names

    def test_unknown_layout(self):
        with pytest.raises(ConfigError):
            assemble_feature_matrix(_toy_dataset(), layout=("time", "mood"))

    def test_time_scaling_keeps_views(self):
        d = _toy_dataset()
        scaled = Dataset(
            tuple(ClickEvent(e.learner_id, e.segment_id, e.kind, e.timestamp * 3) for e in d.events),
            d.segments,
            d.quiz,
            d.outcomes,
        )
        a = assemble_feature_matrix(d, normalize=False)
        b = assemble_feature_matrix(scaled, normalize=False)
        assert np.array_equal(a.x[:, 1::4], b.x[:, 1::4])
        assert np.allclose(b.x[:, 0::4], 3 * a.x[:, 0::4])
        # engagement depends on time only through t / t_bar, which is scale-free
        assert np.allclose(a.x[:, 3::4], b.x[:, 3::4])
