"""The six linguistic outcome metrics and feed centroid construction.

Metrics: style accommodation (cosine of noncontent rate vectors),
categorical-dynamic index, semantic convergence (cosine of mean post
embeddings), repeatability (word-reuse fraction), complexity (mean
characters per word), and Coleman-Liau readability.

Per-user period values default to the pooled token stream of that
period; a per-post-mean aggregate is available for sensitivity runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .corpus import PostRecord
from .embedding import Embedder, is_zero
from .lexicon import (
    CategoryLexicon,
    CategoryRates,
    TokenSequence,
    category_rates,
    noncontent_vector,
    tokenize,
)

CDI_BASE = 30.0
_CDI_POSITIVE = ("article", "preposition")
_CDI_NEGATIVE = (
    "ppron",
    "ipron",
    "auxverb",
    "conjunction",
    "adverb",
    "negation",
)

_CLI_LETTER_WEIGHT = 0.0588
_CLI_SENTENCE_WEIGHT = 0.296
_CLI_OFFSET = 15.8

_SENTENCE_RE = re.compile(r"[.!?]+(?=\s|$)")


class MetricError(Exception):
    """Raised for degenerate metric inputs (empty documents, zero vectors)."""


class Metric(str, Enum):
    LSA = "lsa"
    CDI = "cdi"
    SEMCONV = "semconv"
    REPEATABILITY = "repeatability"
    COMPLEXITY = "complexity"
    READABILITY = "readability"


CORE_METRICS = tuple(m.value for m in Metric)


@dataclass(frozen=True)
class MetricValue:
    metric: Metric
    value: float
    user_id: str
    period: str  # "baseline" | "post"


@dataclass
class FeedCentroid:
    """Mean style vector and mean embedding of a feed's surfaced posts."""

    feed_id: str
    style_centroid: np.ndarray
    embedding_centroid: np.ndarray
    n_posts: int
    n_skipped: int = 0


@dataclass
class TextStats:
    """Letter/word/sentence tallies of a pooled text collection."""

    letters: int
    words: int
    sentences: int


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; zero-against-nonzero is 0 by convention."""
    if u.shape != v.shape:
        raise MetricError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 and nv == 0.0:
        raise MetricError("degenerate style vector")
    if nu == 0.0 or nv == 0.0:
        return 0.0
    sim = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, sim))


def cdi(rates: CategoryRates | Mapping[str, float]) -> float:
    """Categorical-dynamic index over per-100-word rates."""
    table = rates.rates if isinstance(rates, CategoryRates) else rates
    for cat in _CDI_POSITIVE + _CDI_NEGATIVE:
        if cat not in table:
            raise MetricError(f"missing category: {cat}")
    value = CDI_BASE
    for cat in _CDI_POSITIVE:
        value += table[cat]
    for cat in _CDI_NEGATIVE:
        value -= table[cat]
    return value


def count_sentences(text: str) -> int:
    """Sentences in one post: runs of ``.!?`` before whitespace or end.

    Every nonempty post counts as at least one sentence.
    """
    if not text.strip():
        return 0
    return max(1, len(_SENTENCE_RE.findall(text)))


def letters_in(tokens: TokenSequence) -> int:
    return sum(1 for tok in tokens.tokens for ch in tok if ch.isalpha())


def pool_text_stats(texts: Sequence[str]) -> TextStats:
    """Aggregate letter/word/sentence counts over a period's posts."""
    letters = 0
    words = 0
    sentences = 0
    for text in texts:
        toks = tokenize(text)
        letters += letters_in(toks)
        words += toks.n_tokens
        sentences += count_sentences(text)
    return TextStats(letters=letters, words=words, sentences=sentences)


def coleman_liau(stats: TextStats) -> float:
    """Coleman-Liau index: 0.0588 L - 0.296 S - 15.8.

    L is letters per 100 words, S sentences per 100 words.
    """
    if stats.words == 0:
        raise MetricError("empty document")
    letters_per_100 = 100.0 * stats.letters / stats.words
    sentences_per_100 = 100.0 * stats.sentences / stats.words
    return (
        _CLI_LETTER_WEIGHT * letters_per_100
        - _CLI_SENTENCE_WEIGHT * sentences_per_100
        - _CLI_OFFSET
    )


def repeatability(tokens: TokenSequence) -> float:
    """Word-reuse fraction: (n_tokens - n_unique) / n_tokens."""
    n = tokens.n_tokens
    if n == 0:
        raise MetricError("empty document")
    return (n - len(set(tokens.tokens))) / n


def complexity(tokens: TokenSequence) -> float:
    """Mean characters per word."""
    n = tokens.n_tokens
    if n == 0:
        raise MetricError("empty document")
    return sum(len(t) for t in tokens.tokens) / n


def style_accommodation(user_vec: np.ndarray, centroid: FeedCentroid) -> float:
    """Cosine similarity of a user's noncontent vector to the feed style."""
    return cosine(np.asarray(user_vec, dtype=np.float64), centroid.style_centroid)


def _mean_embedding(posts: Sequence[PostRecord], embedder: Embedder) -> np.ndarray:
    """Renormalized mean embedding over posts, in post_id-sorted order."""
    vecs = []
    for p in sorted(posts, key=lambda p: p.post_id):
        v = embedder.embed(p.text)
        if not is_zero(v):
            vecs.append(v)
    if not vecs:
        raise MetricError("all posts embed to zero")
    mean = np.sum(vecs, axis=0) / len(vecs)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise MetricError("mean embedding is zero")
    return mean / norm


def semantic_convergence(
    user_posts: Sequence[PostRecord], centroid: FeedCentroid, embedder: Embedder
) -> float:
    """Cosine of the user's mean post embedding against the feed centroid."""
    return cosine(_mean_embedding(user_posts, embedder), centroid.embedding_centroid)


def feed_centroid(
    feed_posts: Sequence[PostRecord],
    lex: CategoryLexicon,
    embedder: Embedder,
    feed_id: str = "",
) -> FeedCentroid:
    """Average the per-post style vectors and embeddings of feed posts.

    Zero-token posts contribute to neither centroid; they are skipped
    and counted.  Sums run in post_id-sorted order so the result is
    independent of input ordering and worker scheduling.
    """
    if not feed_posts:
        raise MetricError("feed has no posts")
    ordered = sorted(feed_posts, key=lambda p: p.post_id)
    style_sum: np.ndarray | None = None
    embed_sum: np.ndarray | None = None
    n_style = 0
    n_embed = 0
    n_skipped = 0
    for p in ordered:
        toks = tokenize(p.text)
        if toks.n_tokens == 0:
            n_skipped += 1
            continue
        vec = noncontent_vector(category_rates(toks, lex), lex)
        style_sum = vec if style_sum is None else style_sum + vec
        n_style += 1
        emb = embedder.embed(p.text)
        if not is_zero(emb):
            embed_sum = emb if embed_sum is None else embed_sum + emb
            n_embed += 1
    if style_sum is None or embed_sum is None or n_embed == 0:
        raise MetricError("all feed posts are empty")
    emb_mean = embed_sum / n_embed
    norm = float(np.linalg.norm(emb_mean))
    if norm == 0.0:
        raise MetricError("feed embedding centroid is zero")
    return FeedCentroid(
        feed_id=feed_id,
        style_centroid=style_sum / n_style,
        embedding_centroid=emb_mean / norm,
        n_posts=n_style,
        n_skipped=n_skipped,
    )


@dataclass
class PeriodProfile:
    """All per-user-period outcomes: the six metrics plus category rates."""

    metrics: dict[str, float]
    rates: dict[str, float]
    n_tokens: int


def period_profile(
    posts: Sequence[PostRecord],
    lex: CategoryLexicon,
    centroid: FeedCentroid,
    embedder: Embedder,
    aggregate: str = "pooled",
) -> PeriodProfile:
    """Compute every outcome for one user-period.

    ``pooled`` (the default) concatenates the period's tokens before
    measuring; ``per-post-mean`` averages per-post values instead,
    skipping zero-token posts.
    """
    if aggregate == "pooled":
        return _pooled_profile(posts, lex, centroid, embedder)
    if aggregate == "per-post-mean":
        return _per_post_profile(posts, lex, centroid, embedder)
    raise ValueError(f"unknown aggregate mode: {aggregate!r}")


def _pooled_profile(
    posts: Sequence[PostRecord],
    lex: CategoryLexicon,
    centroid: FeedCentroid,
    embedder: Embedder,
) -> PeriodProfile:
    ordered = sorted(posts, key=lambda p: p.post_id)
    pooled = TokenSequence(
        [tok for p in ordered for tok in tokenize(p.text).tokens]
    )
    if pooled.n_tokens == 0:
        raise MetricError("empty document")
    rates = category_rates(pooled, lex)
    stats = pool_text_stats([p.text for p in ordered])
    metrics = {
        Metric.LSA.value: style_accommodation(noncontent_vector(rates, lex), centroid),
        Metric.CDI.value: cdi(rates),
        Metric.SEMCONV.value: semantic_convergence(ordered, centroid, embedder),
        Metric.REPEATABILITY.value: repeatability(pooled),
        Metric.COMPLEXITY.value: complexity(pooled),
        Metric.READABILITY.value: coleman_liau(stats),
    }
    return PeriodProfile(metrics=metrics, rates=dict(rates.rates), n_tokens=pooled.n_tokens)


def _per_post_profile(
    posts: Sequence[PostRecord],
    lex: CategoryLexicon,
    centroid: FeedCentroid,
    embedder: Embedder,
) -> PeriodProfile:
    ordered = sorted(posts, key=lambda p: p.post_id)
    per_metric: dict[str, list[float]] = {m: [] for m in CORE_METRICS}
    per_rate: dict[str, list[float]] = {c: [] for c in lex.categories}
    n_tokens = 0
    for p in ordered:
        toks = tokenize(p.text)
        if toks.n_tokens == 0:
            continue
        n_tokens += toks.n_tokens
        rates = category_rates(toks, lex)
        stats = pool_text_stats([p.text])
        per_metric[Metric.LSA.value].append(
            style_accommodation(noncontent_vector(rates, lex), centroid)
        )
        per_metric[Metric.CDI.value].append(cdi(rates))
        emb = embedder.embed(p.text)
        if not is_zero(emb):
            per_metric[Metric.SEMCONV.value].append(
                cosine(emb, centroid.embedding_centroid)
            )
        per_metric[Metric.REPEATABILITY.value].append(repeatability(toks))
        per_metric[Metric.COMPLEXITY.value].append(complexity(toks))
        per_metric[Metric.READABILITY.value].append(coleman_liau(stats))
        for cat, rate in rates.rates.items():
            per_rate[cat].append(rate)
    if n_tokens == 0:
        raise MetricError("empty document")
    if not per_metric[Metric.SEMCONV.value]:
        raise MetricError("all posts embed to zero")
    metrics = {m: float(np.mean(vals)) for m, vals in per_metric.items()}
    rates_out = {c: float(np.mean(vals)) for c, vals in per_rate.items()}
    return PeriodProfile(metrics=metrics, rates=rates_out, n_tokens=n_tokens)
