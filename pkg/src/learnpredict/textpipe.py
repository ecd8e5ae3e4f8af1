"""Segment/quiz text processing: normalization, lemmas, embeddings, cosine."""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, ValidationError

log = logging.getLogger(__name__)

_ONES = (
    "zero one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen"
).split()
_TENS = "_ _ twenty thirty forty fifty sixty seventy eighty ninety".split()

IRREGULAR_LEMMAS: dict[str, str] = {
    "ran": "run", "running": "run", "runs": "run",
    "am": "be", "is": "be", "are": "be", "was": "be", "were": "be", "been": "be", "being": "be",
    "has": "have", "had": "have", "having": "have",
    "did": "do", "does": "do", "done": "do", "doing": "do",
    "went": "go", "gone": "go", "goes": "go",
    "made": "make", "making": "make", "makes": "make",
    "took": "take", "taken": "take", "taking": "take",
    "gave": "give", "given": "give", "giving": "give",
    "came": "come", "coming": "come",
    "saw": "see", "seen": "see",
    "knew": "know", "known": "know",
    "thought": "think", "bought": "buy", "brought": "bring", "taught": "teach",
    "caught": "catch", "sought": "seek", "found": "find", "told": "tell", "said": "say",
    "wrote": "write", "written": "write", "writing": "write",
    "spoke": "speak", "spoken": "speak", "chose": "choose", "chosen": "choose",
    "began": "begin", "begun": "begin", "felt": "feel", "kept": "keep", "left": "leave",
    "meant": "mean", "met": "meet", "paid": "pay", "sent": "send", "built": "build",
    "held": "hold", "led": "lead", "lost": "lose", "understood": "understand",
    "children": "child", "men": "man", "women": "woman", "people": "person",
    "mice": "mouse", "feet": "foot", "teeth": "tooth", "geese": "goose",
    "data": "datum", "criteria": "criterion", "analyses": "analysis",
    "better": "good", "best": "good", "worse": "bad", "worst": "bad",
}

_VOWELS = set("aeiouy")
# expanded numerals must survive lemmatization ("hundred" is not a past tense)
_NUMBER_WORDS = frozenset(_ONES + _TENS[2:] + ["hundred", "thousand"])
_PUNCT = re.compile(r"[^a-z0-9\s]")
_ALNUM_RUN = re.compile(r"[a-z]+|[0-9]+")


def number_to_words(n: int) -> list[str]:
    """English numerals for 0 <= n < 10**6; empty list otherwise."""
    if n < 0 or n >= 1_000_000:
        return []
    if n < 20:
        return [_ONES[n]]
    if n < 100:
        tens, ones = divmod(n, 10)
        return [_TENS[tens]] + ([_ONES[ones]] if ones else [])
    if n < 1000:
        hundreds, rest = divmod(n, 100)
        return [_ONES[hundreds], "hundred"] + (number_to_words(rest) if rest else [])
    thousands, rest = divmod(n, 1000)
    return number_to_words(thousands) + ["thousand"] + (number_to_words(rest) if rest else [])


def _has_vowel(s: str) -> bool:
    return any(c in _VOWELS for c in s)


def _undouble(stem: str) -> str:
    if len(stem) >= 4 and stem[-1] == stem[-2] and stem[-1] not in "aeiouylsz":
        return stem[:-1]
    return stem


def _lemma_step(word: str, exceptions: Mapping[str, str]) -> str:
    if word in exceptions:
        return exceptions[word]
    if len(word) <= 3 or word in _NUMBER_WORDS:
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith(("sses", "xes", "ches", "shes", "zzes")):
        return word[:-2]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    if word.endswith("ing"):
        stem = word[:-3]
        if len(stem) >= 3 and _has_vowel(stem):
            return _undouble(stem)
    if word.endswith("ed") and not word.endswith("eed"):
        stem = word[:-2]
        if len(stem) >= 3 and _has_vowel(stem):
            return _undouble(stem)
    return word


def lemmatize(word: str, exceptions: Mapping[str, str] | None = None) -> str:
    """Rule-based lemma; applied until it stops changing so it is idempotent."""
    table = IRREGULAR_LEMMAS if exceptions is None else exceptions
    seen = {word}
    while True:
        nxt = _lemma_step(word, table)
        if nxt == word or nxt in seen:
            return nxt
        seen.add(nxt)
        word = nxt


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read a one-word-per-line list (``#`` starts a comment); the bundled list by default."""
    if path is None:
        text = resources.files("learnpredict").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read stopword file {path}: {exc.strerror or exc}") from exc
    words = set()
    for line in text.splitlines():
        word = line.split("#", 1)[0].strip().lower()
        if word:
            words.add(word)
    return frozenset(words)


_DEFAULT_STOPWORDS: frozenset[str] | None = None


def default_stopwords() -> frozenset[str]:
    global _DEFAULT_STOPWORDS
    if _DEFAULT_STOPWORDS is None:
        _DEFAULT_STOPWORDS = load_stopwords()
    return _DEFAULT_STOPWORDS


def preprocess(
    raw_text: str,
    stopwords: Iterable[str] | None = None,
    lemma_rules: Mapping[str, str] | None = None,
    strip_prefixes: Sequence[str] = (),
) -> list[str]:
    """Turn raw segment or question text into a list of lemmatized content tokens.

    Lines starting with any of ``strip_prefixes`` (header/footer markers)
    are removed first. Then: accent folding and lowercasing, punctuation
    removal, digit runs expanded to English words, whitespace tokenization,
    lemmatization and stopword removal.
    """
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    if strip_prefixes:
        raw_text = "\n".join(
            line for line in raw_text.splitlines() if not line.lstrip().startswith(tuple(strip_prefixes))
        )
    text = unicodedata.normalize("NFKD", raw_text).encode("ascii", "ignore").decode("ascii").lower()
    text = re.sub(r"(?<=\d),(?=\d{3})", "", text)  # thousands separators
    text = text.replace("'", "")
    text = _PUNCT.sub(" ", text)
    tokens: list[str] = []
    for run in _ALNUM_RUN.findall(text):
        if run.isdigit():
            tokens.extend(number_to_words(int(run)))
        else:
            tokens.append(run)
    lemmas = (lemmatize(tok, lemma_rules) for tok in tokens)
    return [tok for tok in lemmas if tok and tok not in stop]


# ---------------------------------------------------------------------------
# Embeddings


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray]

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, word: str) -> np.ndarray:
        return self.entries[word]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for word, vec in self.entries.items():
                fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Load a whitespace-separated ``word v1 ... v_dim`` text file."""
    path = Path(path)
    entries: dict[str, np.ndarray] = {}
    dim: int | None = None
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read embedding file {path}: {exc.strerror or exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValidationError(f"{path}:{lineno}: no vector components")
            elif len(values) != dim:
                raise ValidationError(
                    f"{path}:{lineno}: inconsistent dimension {len(values)} (expected {dim})"
                )
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric component") from None
            if word in entries:
                log.warning("%s:%d: duplicate word %r ignored", path, lineno, word)
                continue
            entries[word] = vec
    if dim is None:
        raise ValidationError(f"{path}: empty embedding file")
    return EmbeddingTable(dim, entries)


@dataclass(frozen=True)
class TextEmbedding:
    vec: np.ndarray
    coverage: float


def embed_text(tokens: Sequence[str], table: EmbeddingTable) -> TextEmbedding:
    """Mean of the in-vocabulary token vectors."""
    found = [table.entries[t] for t in tokens if t in table.entries]
    if not found:
        return TextEmbedding(np.zeros(table.dim), 0.0)
    return TextEmbedding(np.mean(found, axis=0), len(found) / len(tokens))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        log.debug("cosine similarity with a zero vector; returning 0")
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def quiz_sum(vectors: Sequence) -> np.ndarray:
    if len(vectors) == 0:
        raise ValueError("no quiz embeddings to sum")
    vecs = [np.asarray(getattr(v, "vec", v), dtype=float) for v in vectors]
    if len({v.shape for v in vecs}) != 1:
        raise ValueError("quiz embeddings differ in dimension")
    total = np.zeros_like(vecs[0])
    for v in vecs:
        total = total + v
    return total


@dataclass(frozen=True)
class CourseText:
    """Embedded course content: one vector per segment plus the summed quiz vector."""

    segment_vecs: np.ndarray  # (S, dim)
    quiz_vec: np.ndarray  # (dim,)
    segment_coverage: np.ndarray  # (S,)

    @property
    def similarities(self) -> np.ndarray:
        return np.array([cosine_similarity(v, self.quiz_vec) for v in self.segment_vecs])

    @property
    def products(self) -> np.ndarray:
        """Elementwise segment x quiz-sum products, (S, dim)."""
        return self.segment_vecs * self.quiz_vec[None, :]


def embed_course(
    segment_texts: Sequence[str],
    quiz_texts: Sequence[str],
    table: EmbeddingTable,
    stopwords: Iterable[str] | None = None,
    lemma_rules: Mapping[str, str] | None = None,
    strip_prefixes: Sequence[str] = (),
) -> CourseText:
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    seg = [embed_text(preprocess(t, stop, lemma_rules, strip_prefixes), table) for t in segment_texts]
    quiz = [embed_text(preprocess(t, stop, lemma_rules, strip_prefixes), table) for t in quiz_texts]
    for i, e in enumerate(seg, start=1):
        if e.coverage == 0:
            log.warning("segment %d has no in-vocabulary tokens", i)
    return CourseText(
        segment_vecs=np.array([e.vec for e in seg]).reshape(len(seg), table.dim),
        quiz_vec=quiz_sum(quiz),
        segment_coverage=np.array([e.coverage for e in seg]),
    )
