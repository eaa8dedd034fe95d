from __future__ import annotations

import numpy as np
import pytest

from feedshift.corpus import PostRecord
from feedshift.embedding import HashingEmbedder
from feedshift.lexicon import bundled_lexicon, parse_lexicon


@pytest.fixture(scope="session")
def lex():
    return bundled_lexicon()


@pytest.fixture(scope="session")
def tiny_lex():
    """Hand-countable lexicon with a content (non-noncontent) category."""
    lines = [
        "%category article noncontent",
        "the",
        "a",
        "an",
        "%category preposition noncontent",
        "in",
        "on",
        "%category ppron noncontent",
        "i",
        "we",
        "%category ipron noncontent",
        "it",
        "%category auxverb noncontent",
        "is",
        "%category conjunction noncontent",
        "and",
        "%category adverb noncontent",
        "very",
        "%category negation noncontent",
        "not",
        "%category posemo",
        "good",
        "happy",
        "run*",
    ]
    return parse_lexicon(lines, name="tiny")


@pytest.fixture(scope="session")
def embedder():
    return HashingEmbedder(dim=64, seed=0)


def make_post(pid: str, text: str, author: str = "u1", ts: int = 0) -> PostRecord:
    return PostRecord(
        post_id=pid, author_id=author, timestamp=ts, text=text, language_tag="en"
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
