"""Pre-treatment covariate assembly: activity, n-grams, category rates.

The covariate vector concatenates, in schema order: two activity
metrics (posts per day, tenure days), relative frequencies of the
top-k document-frequency n-grams pooled over n in {2,3,4}, and the
per-100-word lexicon category rates of the pooled baseline tokens.
Everything is computed from baseline-period data only.

Token input is per-post groups: n-grams never span post boundaries,
which is what makes the relative-frequency features invariant under
duplicating a user's posts.  A flat token list is accepted anywhere a
group sequence is and is treated as a single post.

N-gram ranking is by document frequency (number of users whose
baseline contains the n-gram), ties broken by total frequency
descending, then lexicographically on the token tuple.  When the
corpus vocabulary fits in 16 bits the counting runs over packed
integer arrays; a dict-based path covers the general case and serves
as the reference implementation in tests.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import SECONDS_PER_DAY, UserTimeline
from .lexicon import CategoryLexicon, TokenSequence, category_rates

TokenGroups = Sequence[Sequence[str]]

ACTIVITY_NAMES = ("posts_per_day", "tenure_days")
_PACK_BITS = 16


class CovariateError(Exception):
    """Raised for invalid schema or degenerate covariate inputs."""


@dataclass
class CovariateSchema:
    """Ordered feature names binding a study run's covariate space."""

    ngrams: list[tuple[str, ...]]
    category_names: list[str]
    ns: tuple[int, ...] = (2, 3, 4)

    @property
    def names(self) -> list[str]:
        out = list(ACTIVITY_NAMES)
        out.extend(" ".join(g) for g in self.ngrams)
        out.extend(self.category_names)
        return out

    @property
    def dimension(self) -> int:
        return 2 + len(self.ngrams) + len(self.category_names)

    @property
    def provenance_hash(self) -> str:
        payload = json.dumps(
            {"names": self.names, "ns": list(self.ns)}, sort_keys=True
        ).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def to_json(self) -> dict:
        return {
            "names": self.names,
            "ngrams": [list(g) for g in self.ngrams],
            "categories": self.category_names,
            "ns": list(self.ns),
            "provenance_hash": self.provenance_hash,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CovariateSchema":
        schema = cls(
            ngrams=[tuple(g) for g in obj["ngrams"]],
            category_names=list(obj["categories"]),
            ns=tuple(obj["ns"]),
        )
        if obj.get("provenance_hash") and obj["provenance_hash"] != schema.provenance_hash:
            raise CovariateError("schema provenance hash mismatch")
        return schema


def activity_covariates(timeline: UserTimeline, anchor: int) -> tuple[float, float]:
    """(posts_per_day, tenure_days) over the baseline period.

    Both use the span from first observed activity to the anchor.
    """
    span_days = (anchor - timeline.first_seen) / SECONDS_PER_DAY
    if span_days <= 0:
        raise CovariateError("baseline span must be positive")
    n_baseline = sum(1 for p in timeline.posts if p.timestamp < anchor)
    return n_baseline / span_days, span_days


def _as_groups(tokens: TokenGroups | Sequence[str]) -> list[list[str]]:
    if not tokens:
        return []
    if isinstance(tokens[0], str):
        return [list(tokens)]  # a flat list is one post
    return [list(g) for g in tokens]


def _iter_ngrams(groups: list[list[str]], n: int) -> Iterable[tuple[str, ...]]:
    for tokens in groups:
        for i in range(len(tokens) - n + 1):
            yield tuple(tokens[i : i + n])


def _total_ngrams(groups: list[list[str]], ns: Sequence[int]) -> int:
    return sum(max(0, len(g) - n + 1) for g in groups for n in ns)


def _select_top(
    stats: Mapping[tuple[str, ...], tuple[int, int]], k: int
) -> list[tuple[str, ...]]:
    """Top-k by (df desc, tf desc, token tuple asc)."""
    ranked = sorted(stats.items(), key=lambda kv: (-kv[1][0], -kv[1][1], kv[0]))
    return [gram for gram, _ in ranked[:k]]


def _vocab_naive(
    corpora: Mapping[str, TokenGroups | Sequence[str]], ns: Sequence[int], k: int
) -> list[tuple[str, ...]]:
    df: Counter = Counter()
    tf: Counter = Counter()
    for user in sorted(corpora):
        groups = _as_groups(corpora[user])
        user_grams: Counter = Counter()
        for n in ns:
            user_grams.update(_iter_ngrams(groups, n))
        df.update(user_grams.keys())
        tf.update(user_grams)
    return _select_top({g: (df[g], tf[g]) for g in df}, k)


def _encode_ids(ids: np.ndarray, n: int) -> np.ndarray:
    """Pack n consecutive token ids into one uint64 per n-gram."""
    if len(ids) < n:
        return np.empty(0, dtype=np.uint64)
    out = ids[: len(ids) - n + 1].astype(np.uint64)
    for j in range(1, n):
        out = (out << np.uint64(_PACK_BITS)) | ids[j : len(ids) - n + 1 + j].astype(
            np.uint64
        )
    return out


def _decode(encoded: int, n: int, id_to_token: Sequence[str]) -> tuple[str, ...]:
    mask = (1 << _PACK_BITS) - 1
    ids = []
    for _ in range(n):
        ids.append(encoded & mask)
        encoded >>= _PACK_BITS
    return tuple(id_to_token[i] for i in reversed(ids))


class _TokenTable:
    """Shared token-to-id mapping; ids follow sorted token order."""

    def __init__(self, corpora: Mapping[str, TokenGroups | Sequence[str]]) -> None:
        distinct: set[str] = set()
        for tokens in corpora.values():
            for group in _as_groups(tokens):
                distinct.update(group)
        self.tokens = sorted(distinct)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def packable(self) -> bool:
        return len(self.tokens) < (1 << _PACK_BITS)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index[t] for t in tokens], dtype=np.int64)

    def group_ids(self, tokens: TokenGroups | Sequence[str]) -> list[np.ndarray]:
        return [self.ids(g) for g in _as_groups(tokens)]


def _vocab_packed(
    corpora: Mapping[str, TokenGroups | Sequence[str]],
    ns: Sequence[int],
    k: int,
    table: _TokenTable,
) -> list[tuple[str, ...]]:
    per_n_unique: dict[int, list[np.ndarray]] = {n: [] for n in ns}
    per_n_full: dict[int, list[np.ndarray]] = {n: [] for n in ns}
    for user in sorted(corpora):
        id_groups = table.group_ids(corpora[user])
        for n in ns:
            parts = [_encode_ids(ids, n) for ids in id_groups]
            grams = (
                np.concatenate(parts) if parts else np.empty(0, dtype=np.uint64)
            )
            per_n_full[n].append(grams)
            per_n_unique[n].append(np.unique(grams))
    rows: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = []
    for n in ns:
        uniq_concat = (
            np.concatenate(per_n_unique[n]) if per_n_unique[n] else np.empty(0, np.uint64)
        )
        grams, df = np.unique(uniq_concat, return_counts=True)
        full_concat = (
            np.concatenate(per_n_full[n]) if per_n_full[n] else np.empty(0, np.uint64)
        )
        grams_tf, tf = np.unique(full_concat, return_counts=True)
        if not np.array_equal(grams, grams_tf):
            raise CovariateError("df/tf alignment failure")  # cannot happen
        rows.append((n, grams, df, tf))
    all_df = np.concatenate([r[2] for r in rows])
    all_tf = np.concatenate([r[3] for r in rows])
    total = len(all_df)
    if total == 0:
        return []
    decode_meta = np.concatenate(
        [np.full(len(r[1]), r[0], dtype=np.int64) for r in rows]
    )
    all_grams = np.concatenate([r[1] for r in rows])
    if total <= k:
        chosen = np.arange(total)
    else:
        # Rank by (df desc, tf desc); resolve the boundary tie group
        # lexicographically on decoded token tuples.
        order = np.lexsort((-all_tf, -all_df))
        cut_df = all_df[order[k - 1]]
        cut_tf = all_tf[order[k - 1]]
        better = (all_df > cut_df) | ((all_df == cut_df) & (all_tf > cut_tf))
        tied = (all_df == cut_df) & (all_tf == cut_tf)
        n_better = int(np.sum(better))
        tie_idx = np.nonzero(tied)[0]
        tie_decoded = sorted(
            tie_idx,
            key=lambda i: _decode(int(all_grams[i]), int(decode_meta[i]), table.tokens),
        )
        chosen = np.concatenate(
            [np.nonzero(better)[0], np.array(tie_decoded[: k - n_better], dtype=np.int64)]
        )
    stats = {
        _decode(int(all_grams[i]), int(decode_meta[i]), table.tokens): (
            int(all_df[i]),
            int(all_tf[i]),
        )
        for i in chosen
    }
    return _select_top(stats, k)


def ngram_vocabulary(
    corpora: Mapping[str, TokenGroups | Sequence[str]],
    ns: Sequence[int] = (2, 3, 4),
    k: int = 500,
    per_n: bool = False,
) -> list[tuple[str, ...]]:
    """Top-k n-grams of the pooled baseline corpora by document frequency.

    ``corpora`` maps user id to that user's baseline tokens, as
    per-post groups (or one flat list).  With ``per_n`` the top k are
    taken for each size separately and concatenated in size order.
    The result may be shorter than requested for tiny corpora.
    """
    if not corpora:
        raise CovariateError("empty corpora")
    if any(n < 1 for n in ns):
        raise CovariateError("n-gram sizes must be positive")
    if per_n:
        out: list[tuple[str, ...]] = []
        for n in ns:
            out.extend(ngram_vocabulary(corpora, ns=(n,), k=k))
        return out
    table = _TokenTable(corpora)
    if table.packable and max(ns) * _PACK_BITS <= 64:
        return _vocab_packed(corpora, ns, k, table)
    return _vocab_naive(corpora, ns, k)


def ngram_features(
    tokens: TokenGroups | Sequence[str],
    vocab: Sequence[tuple[str, ...]],
    ns: Sequence[int] = (2, 3, 4),
) -> np.ndarray:
    """Relative frequency of each vocabulary n-gram in a user's posts.

    Normalization is by the user's total n-gram count over all sizes
    in ``ns``; n-grams never span post boundaries, so duplicating the
    user's posts leaves the vector exactly unchanged.  A user with no
    n-grams gets an all-zero block.
    """
    groups = _as_groups(tokens)
    total = _total_ngrams(groups, ns)
    out = np.zeros(len(vocab), dtype=np.float64)
    if total == 0:
        return out
    index: dict[tuple[str, ...], int] = {g: i for i, g in enumerate(vocab)}
    sizes = sorted({len(g) for g in vocab})
    for n in sizes:
        for gram in _iter_ngrams(groups, n):
            pos = index.get(gram)
            if pos is not None:
                out[pos] += 1.0
    return out / total


def assemble(
    baseline_tokens: TokenGroups | Sequence[str],
    posts_per_day: float,
    tenure_days: float,
    schema: CovariateSchema,
    lex: CategoryLexicon,
) -> np.ndarray:
    """Concatenate activity, n-gram, and category-rate blocks in schema order."""
    groups = _as_groups(baseline_tokens)
    pooled = [t for g in groups for t in g]
    if not pooled:
        raise CovariateError("missing baseline text")
    rates = category_rates(TokenSequence(pooled), lex)
    rate_block = np.array(
        [rates[c] for c in schema.category_names], dtype=np.float64
    )
    vec = np.concatenate(
        [
            np.array([posts_per_day, tenure_days], dtype=np.float64),
            ngram_features(baseline_tokens, schema.ngrams, schema.ns),
            rate_block,
        ]
    )
    if not np.all(np.isfinite(vec)):
        raise CovariateError("non-finite covariate value")
    return vec


class _FeatureCounter:
    """Vectorized per-user n-gram feature extraction bound to a vocabulary."""

    def __init__(
        self, vocab: Sequence[tuple[str, ...]], table: _TokenTable, ns: Sequence[int]
    ) -> None:
        self.ns = tuple(ns)
        self.n_features = len(vocab)
        self._table = table
        self._by_n: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for n in sorted({len(g) for g in vocab}):
            idx = [i for i, g in enumerate(vocab) if len(g) == n]
            encoded = np.array(
                [
                    int(
                        _encode_ids(
                            np.array([table.index[t] for t in vocab[i]], dtype=np.int64),
                            n,
                        )[0]
                    )
                    for i in idx
                ],
                dtype=np.uint64,
            )
            order = np.argsort(encoded)
            self._by_n[n] = (encoded[order], np.array(idx, dtype=np.int64)[order])

    def features(self, tokens: TokenGroups | Sequence[str]) -> np.ndarray:
        groups = _as_groups(tokens)
        id_groups = [self._table.ids(g) for g in groups]
        out = np.zeros(self.n_features, dtype=np.float64)
        total = _total_ngrams(groups, self.ns)
        if total == 0:
            return out
        for n, (encoded_sorted, positions) in self._by_n.items():
            parts = [_encode_ids(ids, n) for ids in id_groups if len(ids) >= n]
            if not parts:
                continue
            grams = np.concatenate(parts)
            loc = np.searchsorted(encoded_sorted, grams)
            loc[loc == len(encoded_sorted)] = 0
            hit = encoded_sorted[loc] == grams
            if np.any(hit):
                np.add.at(out, positions[loc[hit]], 1.0)
        return out / total


def build_ngram_block(
    corpora: Mapping[str, TokenGroups | Sequence[str]],
    ns: Sequence[int] = (2, 3, 4),
    k: int = 500,
    per_n: bool = False,
) -> tuple[list[tuple[str, ...]], dict[str, np.ndarray]]:
    """Vocabulary plus per-user feature vectors, sharing one token table.

    Equivalent to ``ngram_vocabulary`` followed by ``ngram_features``
    per user, but a single pass over packed id arrays.
    """
    vocab = ngram_vocabulary(corpora, ns, k, per_n=per_n)
    table = _TokenTable(corpora)
    if table.packable and max(ns) * _PACK_BITS <= 64:
        counter = _FeatureCounter(vocab, table, ns)
        feats = {
            user: counter.features(corpora[user]) for user in sorted(corpora)
        }
        return vocab, feats
    return vocab, {
        user: ngram_features(corpora[user], vocab, ns) for user in sorted(corpora)
    }
