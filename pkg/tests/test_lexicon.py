"""Tokenization and category-rate computation."""

from __future__ import annotations

import re

import numpy as np
import pytest

from feedshift.lexicon import (
    CDI_CATEGORIES,
    LexiconError,
    TokenSequence,
    category_rates,
    noncontent_vector,
    parse_lexicon,
    tokenize,
)


def test_tokenize_keeps_intraword_apostrophe():
    assert tokenize("I can't stop").tokens == ["i", "can't", "stop"]


def test_tokenize_empty():
    assert tokenize("").tokens == []


def test_tokenize_strips_urls():
    assert tokenize("see https://x.y now").tokens == ["see", "now"]
    assert tokenize("ftp://a.b/c?d=1 tail").tokens == ["tail"]


def test_tokenize_strips_mentions_keeps_hashtag_word():
    assert tokenize("@bob.bsky.social says #cats rule").tokens == [
        "says",
        "cats",
        "rule",
    ]


def test_tokenize_splits_on_punctuation_and_digits_kept():
    assert tokenize("top-10 items, 2nd try!").tokens == [
        "top",
        "10",
        "items",
        "2nd",
        "try",
    ]


def test_tokenize_edge_apostrophes_dropped():
    assert tokenize("'hello' its' 'tis").tokens == ["hello", "its", "tis"]


def test_category_rates_article_half(tiny_lex):
    rates = category_rates(TokenSequence(["the", "dog"]), tiny_lex)
    assert rates["article"] == pytest.approx(50.0, abs=0)
    assert rates.total_words == 2


def test_category_rates_no_matches_all_zero(tiny_lex):
    rates = category_rates(TokenSequence(["zebra", "quark"]), tiny_lex)
    assert all(v == 0.0 for v in rates.rates.values())


def test_category_rates_prefix_match(tiny_lex):
    rates = category_rates(TokenSequence(["running"]), tiny_lex)
    assert rates["posemo"] == pytest.approx(100.0, abs=0)


def test_category_rates_empty_errors(tiny_lex):
    with pytest.raises(LexiconError, match="empty document"):
        category_rates(TokenSequence([]), tiny_lex)


def test_rates_invariant_under_duplication(tiny_lex):
    tokens = ["the", "good", "dog", "is", "very", "happy"]
    once = category_rates(TokenSequence(tokens), tiny_lex)
    twice = category_rates(TokenSequence(tokens * 2), tiny_lex)
    for cat in tiny_lex.categories:
        assert once[cat] == pytest.approx(twice[cat], abs=1e-12)


def test_rates_are_exact_count_ratios(tiny_lex, rng):
    vocab = ["the", "a", "in", "i", "good", "runs", "zebra", "it", "not"]
    tokens = [vocab[i] for i in rng.integers(0, len(vocab), size=57)]
    rates = category_rates(TokenSequence(tokens), tiny_lex)
    for cat in tiny_lex.categories:
        count = sum(1 for t in tokens if tiny_lex.matches(t, cat))
        assert rates[cat] == 100.0 * count / len(tokens)


def test_multi_category_tokens_count_in_each(lex):
    # "was" is both an auxiliary verb and past-focus in the bundled lexicon
    rates = category_rates(TokenSequence(["was"]), lex)
    assert rates["auxverb"] == 100.0
    assert rates["focuspast"] == 100.0


def test_prefix_matching_equals_regex_oracle(rng):
    prefixes = ["run", "walk", "fl"]
    lines = ["%category verbs"]
    lines.extend(p + "*" for p in prefixes)
    lines.extend(f"%category {c} noncontent" for c in CDI_CATEGORIES)
    lex = parse_lexicon(lines)
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    for _ in range(300):
        n = int(rng.integers(1, 9))
        token = "".join(alphabet[i] for i in rng.integers(0, 26, size=n))
        want = any(re.match("^" + p + ".*", token) for p in prefixes)
        assert lex.matches(token, "verbs") == want


def test_noncontent_vector_order_and_projection(tiny_lex):
    rates = category_rates(
        TokenSequence(["the", "in", "i", "it", "is", "and", "very", "not", "good"]),
        tiny_lex,
    )
    vec = noncontent_vector(rates, tiny_lex)
    assert vec.shape == (8,)  # posemo is content, excluded
    assert list(vec) == [rates[c] for c in tiny_lex.noncontent]


def test_noncontent_vector_zero_case(tiny_lex):
    rates = category_rates(TokenSequence(["zebra"]), tiny_lex)
    assert not np.any(noncontent_vector(rates, tiny_lex))


def test_noncontent_singleton_projection():
    lines = ["%category article noncontent", "the"]
    lines.extend(
        f"%category {c}" + ("\nx" + c) for c in CDI_CATEGORIES if c != "article"
    )
    lex = parse_lexicon("\n".join(lines).splitlines())
    rates = category_rates(TokenSequence(["the", "dog"]), lex)
    vec = noncontent_vector(rates, lex)
    assert vec.tolist() == [50.0]


def test_parse_rejects_missing_cdi_categories():
    with pytest.raises(LexiconError, match="required categories"):
        parse_lexicon(["%category foo", "bar"])


def test_parse_rejects_entry_before_header():
    with pytest.raises(LexiconError, match="before any"):
        parse_lexicon(["stray"])


def test_parse_rejects_duplicate_category():
    lines = ["%category article noncontent", "the", "%category article", "a"]
    with pytest.raises(LexiconError, match="duplicate"):
        parse_lexicon(lines)


def test_bundled_lexicon_has_cdi_categories(lex):
    for cat in CDI_CATEGORIES:
        assert cat in lex.categories
    assert lex.noncontent == list(lex.categories)
