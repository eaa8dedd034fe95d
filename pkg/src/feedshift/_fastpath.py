"""Vectorized per-user-period outcome computation for the pipeline.

Produces the same numbers as ``textmetrics.period_profile`` with the
pooled aggregate and the built-in hashing embedder (a cross-check test
asserts bitwise equality on full profiles), but amortizes tokenization
and per-token lookups across the whole store: tokens are interned into
an id table carrying cached length, letter count, category match row,
and embedder bucket, and each post is reduced to an int32 id array.

Only used when the study runs the built-in embedder; anything else
falls back to the public per-user path.
"""

from __future__ import annotations

import numpy as np

from .corpus import PostRecord
from .embedding import HashingEmbedder
from .lexicon import CategoryLexicon, tokenize
from .textmetrics import (
    CDI_BASE,
    FeedCentroid,
    Metric,
    MetricError,
    PeriodProfile,
    cosine,
    count_sentences,
)

_CDI_POSITIVE = ("article", "preposition")
_CDI_NEGATIVE = ("ppron", "ipron", "auxverb", "conjunction", "adverb", "negation")


class FastProfiler:
    """Token-interning profile computer bound to one lexicon + embedder."""

    _INITIAL_CAP = 4096

    def __init__(self, lex: CategoryLexicon, embedder: HashingEmbedder) -> None:
        self._lex = lex
        self._embedder = embedder
        self._dim = embedder.dim
        self._tok_index: dict[str, int] = {}
        self._posts: dict[str, tuple[np.ndarray, int]] = {}
        self._cat_names = list(lex.categories)
        self._noncontent_idx = np.array(
            [self._cat_names.index(c) for c in lex.noncontent], dtype=np.int64
        )
        # token stat tables with capacity doubling (amortized O(1) intern)
        cap = self._INITIAL_CAP
        self._lengths = np.zeros(cap, dtype=np.int64)
        self._letters = np.zeros(cap, dtype=np.int64)
        self._buckets = np.zeros(cap, dtype=np.int64)
        self._match = np.zeros((cap, len(self._cat_names)), dtype=np.float64)

    def _grow(self) -> None:
        cap = 2 * self._lengths.shape[0]
        for name in ("_lengths", "_letters", "_buckets"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=np.int64)
            new[: old.shape[0]] = old
            setattr(self, name, new)
        match = np.zeros((cap, len(self._cat_names)), dtype=np.float64)
        match[: self._match.shape[0]] = self._match
        self._match = match

    def _intern(self, token: str) -> int:
        idx = self._tok_index.get(token)
        if idx is None:
            idx = len(self._tok_index)
            if idx >= self._lengths.shape[0]:
                self._grow()
            self._tok_index[token] = idx
            self._lengths[idx] = len(token)
            self._letters[idx] = sum(1 for ch in token if ch.isalpha())
            self._buckets[idx] = self._embedder._bucket(token)
            self._match[idx] = self._lex.match_vector(token)
        return idx

    def index_posts(self, posts: list[PostRecord]) -> None:
        for p in posts:
            if p.post_id in self._posts:
                continue
            toks = tokenize(p.text)
            ids = np.array([self._intern(t) for t in toks.tokens], dtype=np.int32)
            self._posts[p.post_id] = (ids, count_sentences(p.text))

    def _tables(self) -> dict[str, np.ndarray]:
        return {
            "lengths": self._lengths,
            "letters": self._letters,
            "buckets": self._buckets,
            "match": self._match,
        }

    def _post_embedding(self, ids: np.ndarray, tables) -> np.ndarray:
        counts = np.bincount(tables["buckets"][ids], minlength=self._dim).astype(
            np.float64
        )
        vec = counts * self._embedder._projection
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            return np.zeros(self._dim)
        return vec / norm

    def mean_embedding(self, posts: list[PostRecord]) -> np.ndarray:
        """Renormalized mean post embedding, matching textmetrics exactly."""
        tables = self._tables()
        vecs = []
        for p in sorted(posts, key=lambda p: p.post_id):
            ids, _ = self._posts[p.post_id]
            if ids.size == 0:
                continue
            v = self._post_embedding(ids, tables)
            if np.any(v):
                vecs.append(v)
        if not vecs:
            raise MetricError("all posts embed to zero")
        mean = np.sum(vecs, axis=0) / len(vecs)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            raise MetricError("mean embedding is zero")
        return mean / norm

    def period_profile(
        self, posts: list[PostRecord], centroid: FeedCentroid
    ) -> PeriodProfile:
        tables = self._tables()
        ordered = sorted(posts, key=lambda p: p.post_id)
        id_parts = []
        letters = 0
        words = 0
        sentences = 0
        for p in ordered:
            ids, n_sent = self._posts[p.post_id]
            id_parts.append(ids)
            words += ids.size
            letters += int(tables["letters"][ids].sum())
            sentences += n_sent
        if words == 0:
            raise MetricError("empty document")
        pooled = np.concatenate(id_parts)
        n = pooled.size
        counts = np.bincount(pooled, minlength=len(self._tok_index))
        present = np.nonzero(counts)[0]
        cat_counts = counts[present].astype(np.float64) @ tables["match"][present]
        rates_vec = 100.0 * cat_counts / n
        rates = {c: rates_vec[i] for i, c in enumerate(self._cat_names)}

        cdi_val = CDI_BASE
        for c in _CDI_POSITIVE:
            cdi_val += rates[c]
        for c in _CDI_NEGATIVE:
            cdi_val -= rates[c]

        letters_per_100 = 100.0 * letters / words
        sentences_per_100 = 100.0 * sentences / words
        readability = 0.0588 * letters_per_100 - 0.296 * sentences_per_100 - 15.8

        metrics = {
            Metric.LSA.value: cosine(
                rates_vec[self._noncontent_idx], centroid.style_centroid
            ),
            Metric.CDI.value: cdi_val,
            Metric.SEMCONV.value: cosine(
                self.mean_embedding(ordered), centroid.embedding_centroid
            ),
            Metric.REPEATABILITY.value: (n - present.size) / n,
            Metric.COMPLEXITY.value: int(tables["lengths"][pooled].sum()) / n,
            Metric.READABILITY.value: readability,
        }
        return PeriodProfile(metrics=metrics, rates=rates, n_tokens=n)
