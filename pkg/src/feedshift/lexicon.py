"""Tokenization and category-lexicon rate computation.

A lexicon file is plain UTF-8 text: a ``%category <name> [noncontent]``
header opens each category, followed by one entry per line.  Entries
are lowercase literals, or prefix patterns with a trailing ``*``.  The
repo ships ``test-lex-mini`` covering the eight dictionary classes the
categorical-dynamic index needs, plus temporal-focus and pronoun
subclasses; a full dictionary in the same format drops in via
``--lexicon``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

# Categories the categorical-dynamic index is defined over; every
# loadable lexicon must provide at least these.
CDI_CATEGORIES = (
    "article",
    "preposition",
    "ppron",
    "ipron",
    "auxverb",
    "conjunction",
    "adverb",
    "negation",
)


class LexiconError(Exception):
    """Raised for malformed lexicon files and missing categories."""


@dataclass
class TokenSequence:
    """Lowercased word tokens of one document or pooled document set."""

    tokens: list[str]

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)


@dataclass
class CategoryRates:
    """Per-category rates in matches per 100 words."""

    rates: dict[str, float]
    total_words: int

    def __getitem__(self, category: str) -> float:
        return self.rates[category]


_URL_RE = re.compile(r"[A-Za-z][A-Za-z0-9+.\-]*://\S*")
_MENTION_RE = re.compile(r"(?<![^\W_])@[\w.\-]+")
_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*")


def tokenize(text: str) -> TokenSequence:
    """Lowercased word tokens with URLs and @-mentions stripped.

    Tokens are maximal runs of letters/digits with intra-word
    apostrophes; every other character splits.  ``#`` is a split
    character, so hashtags keep their bare word.
    """
    if not text:
        return TokenSequence([])
    lowered = text.lower().replace("’", "'")
    lowered = _URL_RE.sub(" ", lowered)
    lowered = _MENTION_RE.sub(" ", lowered)
    return TokenSequence(_TOKEN_RE.findall(lowered))


@dataclass
class CategoryLexicon:
    """Word-category dictionary with literal and prefix entries.

    ``categories`` preserves file order; ``noncontent`` is the ordered
    subset marked noncontent in the file, which defines the dimensions
    of the style vector.
    """

    name: str
    categories: dict[str, list[str]]
    noncontent: list[str]
    _literals: dict[str, frozenset[str]] = field(repr=False, default_factory=dict)
    _prefixes: dict[str, tuple[str, ...]] = field(repr=False, default_factory=dict)
    _match_cache: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.categories)) != len(self.categories):
            raise LexiconError("duplicate category names")
        for cat in self.noncontent:
            if cat not in self.categories:
                raise LexiconError(f"noncontent category not defined: {cat}")
        missing = [c for c in CDI_CATEGORIES if c not in self.categories]
        if missing:
            raise LexiconError(f"lexicon lacks required categories: {', '.join(missing)}")
        for cat, entries in self.categories.items():
            lits = []
            prefs = []
            for entry in entries:
                if entry != entry.lower():
                    raise LexiconError(f"entry not lowercase: {entry!r}")
                if entry.endswith("*"):
                    if len(entry) == 1:
                        raise LexiconError("bare '*' entry")
                    prefs.append(entry[:-1])
                elif entry:
                    lits.append(entry)
            self._literals[cat] = frozenset(lits)
            self._prefixes[cat] = tuple(sorted(set(prefs)))

    @property
    def category_names(self) -> list[str]:
        return list(self.categories)

    def match_vector(self, token: str) -> np.ndarray:
        """0/1 vector over categories, cached per distinct token."""
        vec = self._match_cache.get(token)
        if vec is None:
            vec = np.zeros(len(self.categories), dtype=np.float64)
            for i, cat in enumerate(self.categories):
                if token in self._literals[cat] or any(
                    token.startswith(p) for p in self._prefixes[cat]
                ):
                    vec[i] = 1.0
            self._match_cache[token] = vec
        return vec

    def matches(self, token: str, category: str) -> bool:
        idx = list(self.categories).index(category)
        return bool(self.match_vector(token)[idx])


def load_lexicon(path: str | Path, name: str | None = None) -> CategoryLexicon:
    """Parse a lexicon file (``%category`` headers, one entry per line)."""
    p = Path(path)
    return parse_lexicon(
        p.read_text(encoding="utf-8").splitlines(), name=name or p.stem
    )


def parse_lexicon(lines: Iterable[str], name: str = "lexicon") -> CategoryLexicon:
    categories: dict[str, list[str]] = {}
    noncontent: list[str] = []
    current: list[str] | None = None
    for raw_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("%category"):
            parts = line.split()
            if len(parts) < 2 or len(parts) > 3:
                raise LexiconError(f"line {raw_no}: malformed %category header")
            cat = parts[1]
            if cat in categories:
                raise LexiconError(f"line {raw_no}: duplicate category {cat}")
            if len(parts) == 3:
                if parts[2] != "noncontent":
                    raise LexiconError(f"line {raw_no}: unknown flag {parts[2]!r}")
                noncontent.append(cat)
            categories[cat] = []
            current = categories[cat]
        else:
            if current is None:
                raise LexiconError(f"line {raw_no}: entry before any %category header")
            current.append(line.lower())
    if not categories:
        raise LexiconError("empty lexicon")
    return CategoryLexicon(name=name, categories=categories, noncontent=noncontent)


def bundled_lexicon() -> CategoryLexicon:
    """The small open lexicon shipped with the package."""
    text = (
        resources.files("feedshift").joinpath("data/test-lex-mini.lex").read_text("utf-8")
    )
    return parse_lexicon(text.splitlines(), name="test-lex-mini")


def category_rates(tokens: TokenSequence, lex: CategoryLexicon) -> CategoryRates:
    """Rates per 100 words for every lexicon category.

    A token may count toward several categories; prefix entries match
    any token starting with the prefix.
    """
    n = tokens.n_tokens
    if n == 0:
        raise LexiconError("empty document")
    counts = np.zeros(len(lex.categories), dtype=np.float64)
    for token in tokens.tokens:
        counts += lex.match_vector(token)
    # Rates are exactly 100*count/n, in this operation order.
    rates = {cat: 100.0 * counts[i] / n for i, cat in enumerate(lex.categories)}
    return CategoryRates(rates=rates, total_words=n)


def noncontent_vector(
    rates: CategoryRates | Mapping[str, float], lex: CategoryLexicon
) -> np.ndarray:
    """Project rates onto the noncontent categories in declared order."""
    table = rates.rates if isinstance(rates, CategoryRates) else rates
    return np.array([table[cat] for cat in lex.noncontent], dtype=np.float64)
