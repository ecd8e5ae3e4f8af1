import functools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnpredict.errors import ValidationError
from learnpredict.textpipe import (
    EmbeddingTable,
    cosine_similarity,
    default_stopwords,
    embed_course,
    embed_text,
    lemmatize,
    load_embeddings,
    load_stopwords,
    number_to_words,
    preprocess,
    quiz_sum,
)


class TestPreprocess:
    @pytest.mark.parametrize(
        "raw, expected",
        [
            ("", []),
            ("The 3 cats ran!", ["three", "cat", "run"]),
            ("Safety safety SAFETY", ["safety", "safety", "safety"]),
            ("Café résumé", ["cafe", "resume"]),
            ("1,250 boxes", ["one", "thousand", "two", "hundred", "fifty", "box"]),
        ],
    )
    def test_examples(self, raw, expected):
        assert preprocess(raw) == expected

    def test_prefix_filter(self):
        text = "HEADER Company slides\nPumps stop\nFOOTER page 2"
        assert preprocess(text, strip_prefixes=("HEADER", "FOOTER")) == ["pump", "stop"]

    def test_custom_stopwords_and_rules(self):
        assert preprocess("geese swim", stopwords={"swim"}) == ["goose"]
        assert preprocess("foo bars", stopwords=(), lemma_rules={"foo": "baz"}) == ["baz", "bar"]

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet=st.characters(codec="utf-8"), max_size=80))
    def test_idempotent(self, raw):
        once = preprocess(raw)
        assert preprocess(" ".join(once)) == once


class TestLemmatize:
    @pytest.mark.parametrize(
        "word, lemma",
        [
            ("cats", "cat"),
            ("boxes", "box"),
            ("studies", "study"),
            ("running", "run"),
            ("stopped", "stop"),
            ("walked", "walk"),
            ("class", "class"),
            ("bus", "bus"),
            ("ran", "run"),
            ("sing", "sing"),
            ("red", "red"),
        ],
    )
    def test_rules(self, word, lemma):
        assert lemmatize(word) == lemma

    @given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=12))
    def test_fixed_point(self, word):
        lemma = lemmatize(word)
        assert lemmatize(lemma) == lemma


@pytest.mark.parametrize(
    "n, words",
    [
        (0, "zero"),
        (13, "thirteen"),
        (40, "forty"),
        (99, "ninety nine"),
        (105, "one hundred five"),
        (20_000, "twenty thousand"),
        (999_999, "nine hundred ninety nine thousand nine hundred ninety nine"),
        (1_000_000, ""),
    ],
)
def test_number_to_words(n, words):
    assert number_to_words(n) == words.split()


def test_stopword_file(tmp_path):
    p = tmp_path / "stop.txt"
    p.write_text("# comment\nThe\n\nslide\n", encoding="utf-8")
    assert load_stopwords(p) == frozenset({"the", "slide"})
    assert "the" in default_stopwords()
    assert "three" not in default_stopwords()


class TestEmbeddings:
    def test_load(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("a 1 2 3\nb 0 0 1\n", encoding="utf-8")
        table = load_embeddings(p)
        assert table.dim == 3 and len(table) == 2
        assert table["a"].tolist() == [1.0, 2.0, 3.0]

    def test_inconsistent_dimension(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("a 1 2 3\nb 1 2 3 4\n", encoding="utf-8")
        with pytest.raises(ValidationError, match=":2:"):
            load_embeddings(p)

    def test_duplicate_keeps_first(self, tmp_path, caplog):
        p = tmp_path / "e.txt"
        p.write_text("a 1 2\na 5 5\n", encoding="utf-8")
        with caplog.at_level(logging.WARNING):
            table = load_embeddings(p)
        assert table["a"].tolist() == [1.0, 2.0]
        assert "duplicate" in caplog.text

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        table = EmbeddingTable(4, {w: rng.normal(size=4) for w in ("x", "y", "z")})
        p = tmp_path / "e.txt"
        table.save(p)
        again = load_embeddings(p)
        assert list(again.entries) == list(table.entries)
        for w in table.entries:
            assert np.array_equal(again[w], table[w])


TABLE = EmbeddingTable(3, {"w": np.array([1.0, 2.0, 3.0]), "a": np.array([1.0, 0, 0]), "b": np.array([0, 1.0, 0])})


class TestEmbedText:
    def test_singleton(self):
        e = embed_text(["w"], TABLE)
        assert e.vec.tolist() == [1, 2, 3] and e.coverage == 1.0

    def test_oov_skipped(self):
        e = embed_text(["w", "zzz"], TABLE)
        assert e.vec.tolist() == [1, 2, 3] and e.coverage == 0.5

    def test_mean(self):
        assert embed_text(["a", "b"], TABLE).vec.tolist() == [0.5, 0.5, 0.0]

    def test_all_oov(self):
        e = embed_text(["q"], TABLE)
        assert e.coverage == 0.0 and not e.vec.any()

    @given(st.permutations(["a", "b", "w", "w", "oov"]))
    def test_order_free(self, tokens):
        assert np.allclose(embed_text(tokens, TABLE).vec, embed_text(["a", "b", "w", "w"], TABLE).vec)


class TestCosine:
    @pytest.mark.parametrize(
        "a, b, expected",
        [((1, 1), (1, 1), 1.0), ((1, 0), (0, 1), 0.0), ((1, 0), (-2, 0), -1.0), ((0, 0), (1, 1), 0.0)],
    )
    def test_examples(self, a, b, expected):
        assert cosine_similarity(a, b) == pytest.approx(expected)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cosine_similarity([1, 2], [1, 2, 3])

    vectors = st.lists(st.floats(-100, 100), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3)

    @given(vectors, vectors, st.floats(0.01, 100))
    def test_properties(self, a, b, c):
        assert cosine_similarity(a, a) == pytest.approx(1.0)
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)
        assert cosine_similarity(np.multiply(a, c), b) == pytest.approx(cosine_similarity(a, b), abs=1e-9)


class TestQuizSum:
    def test_two(self):
        assert quiz_sum([np.array([1.0, 0]), np.array([0, 1.0])]).tolist() == [1.0, 1.0]

    def test_single(self):
        assert quiz_sum([np.array([2.0, 3.0])]).tolist() == [2.0, 3.0]

    def test_matches_fold(self):
        vecs = list(np.random.default_rng(5).normal(size=(10, 7)))
        assert np.allclose(quiz_sum(vecs), functools.reduce(lambda x, y: x + y, vecs))

    def test_empty(self):
        with pytest.raises(ValueError):
            quiz_sum([])


def test_embed_course_shapes():
    table = EmbeddingTable(3, {"pump": TABLE["w"], "valve": TABLE["a"], "gear": TABLE["b"]})
    course = embed_course(["pump valve", "gear", "nothing here"], ["pump", "valve gear"], table)
    assert course.segment_vecs.shape == (3, 3)
    assert course.quiz_vec.tolist() == [1.5, 2.5, 3.0]
    assert course.segment_coverage.tolist() == [1.0, 1.0, 0.0]
    assert course.similarities[2] == 0.0
    assert course.products.shape == (3, 3)
