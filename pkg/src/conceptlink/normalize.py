"""Text normalization: tokenization, rule-based lemmatization, spell checking.

The document pipeline is tokenize -> spell-correct -> lemmatize; each stage
rewrites Token.norm in place and leaves raw text and offsets untouched.
"""

from __future__ import annotations

import re
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .vocab import Vocabulary

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_ALPHABET = "abcdefghijklmnopqrstuvwxyz"
_VOWELS = set("aeiouy")

ABBREV_MAX_LEN = 4  # raw tokens at most this long and fully uppercase look like abbreviations


@dataclass(slots=True)
class Token:
    raw: str
    norm: str
    start: int
    end: int
    is_abbrev_shape: bool = False


def is_abbrev_shaped(raw: str) -> bool:
    return len(raw) <= ABBREV_MAX_LEN and raw.isupper()


def tokenize(text: str) -> list[Token]:
    """Split text into maximal alphanumeric runs; everything else separates.

    Offsets index the original string; norm starts as the lowercased raw.
    """
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        raw = m.group()
        tokens.append(
            Token(
                raw=raw,
                norm=raw.lower(),
                start=m.start(),
                end=m.end(),
                is_abbrev_shape=is_abbrev_shaped(raw),
            )
        )
    return tokens


# ---------------------------------------------------------------------------
# Lemmatization
# ---------------------------------------------------------------------------

Lemmatizer = Callable[[str], str]

# Words the suffix rules would mangle. Identity entries only; a user-supplied
# exceptions file may override or extend these with non-identity lemmas.
_DEFAULT_EXCEPTIONS = {
    w: w
    for w in (
        "as", "is", "was", "has", "his", "its", "this", "thus", "us", "yes",
        "does", "goes", "during", "being", "nothing", "something", "anything",
        "evening", "morning", "less", "unless", "plus", "series", "species",
        "diabetes", "herpes", "pancreas", "bias", "atlas", "canvas", "gas",
        "lens", "news", "scissors", "perhaps", "always", "besides", "whereas",
        "ing", "bed", "red", "need", "speed", "feed", "indeed", "hundred",
    )
}


def identity_lemmatizer(word: str) -> str:
    return word


class RuleLemmatizer:
    """Small deterministic suffix stripper for English inflections.

    Handles plural -s/-es/-ies and -ing/-ed with trailing-consonant
    undoubling. Intentionally tiny: callers that need real morphology should
    plug in their own Lemmatizer callable.
    """

    def __init__(self, exceptions: dict[str, str] | None = None) -> None:
        self.exceptions = dict(_DEFAULT_EXCEPTIONS)
        if exceptions:
            self.exceptions.update(exceptions)
        self._cache: dict[str, str] = {}

    @classmethod
    def from_exceptions_file(cls, path: str | Path) -> "RuleLemmatizer":
        """Load `form<TAB>lemma` lines and layer them over the built-in table."""
        exceptions = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0] or not parts[1]:
                    raise ValueError(f"{path}: line {lineno}: expected `form<TAB>lemma`")
                exceptions[parts[0]] = parts[1]
        return cls(exceptions)

    def __call__(self, word: str) -> str:
        cached = self._cache.get(word)
        if cached is None:
            cached = self._lemma(word)
            self._cache[word] = cached
        return cached

    def _lemma(self, w: str) -> str:
        exc = self.exceptions.get(w)
        if exc is not None:
            return exc
        if len(w) <= 3:
            return w
        if w.endswith("ies") and len(w) > 4:
            return w[:-3] + "y"
        if w.endswith("es") and w[:-2].endswith(("ss", "x", "z", "ch", "sh")):
            return w[:-2]
        if w.endswith("s") and not w.endswith(("ss", "us", "is")):
            return w[:-1]
        if w.endswith("ing") and len(w) >= 6:
            return self._strip_participle(w, 3)
        if w.endswith("ed") and len(w) >= 5:
            return self._strip_participle(w, 2)
        return w

    @staticmethod
    def _strip_participle(w: str, suffix_len: int) -> str:
        stem = w[:-suffix_len]
        if not any(c in _VOWELS for c in stem):
            return w
        if len(stem) >= 2 and stem[-1] == stem[-2] and stem[-2:] not in ("ll", "ss"):
            stem = stem[:-1]
        return stem if len(stem) >= 3 else w


def lemmatize(tokens: Iterable[Token], lemmatizer: Lemmatizer) -> None:
    """Replace each token's norm with its lemma; abbreviation shapes pass through."""
    for tok in tokens:
        if tok.is_abbrev_shape:
            continue
        tok.norm = lemmatizer(tok.norm)


# ---------------------------------------------------------------------------
# Spell checking
# ---------------------------------------------------------------------------


@dataclass
class SpellConfig:
    max_edits_short: int = 1
    max_edits_long: int = 2
    length_threshold: int = 6
    cache_capacity: int = 65536

    def __post_init__(self) -> None:
        if self.max_edits_short > self.max_edits_long:
            raise ValueError("max_edits_short must be <= max_edits_long")
        if self.length_threshold < 1:
            raise ValueError("length_threshold must be >= 1")

    def budget(self, word: str) -> int:
        return self.max_edits_short if len(word) < self.length_threshold else self.max_edits_long


def edits1(word: str) -> set[str]:
    """All strings one edit away: deletion, transposition, replacement, insertion."""
    splits = [(word[:i], word[i:]) for i in range(len(word) + 1)]
    deletes = [L + R[1:] for L, R in splits if R]
    transposes = [L + R[1] + R[0] + R[2:] for L, R in splits if len(R) > 1]
    replaces = [L + c + R[1:] for L, R in splits if R for c in _ALPHABET]
    inserts = [L + c + R for L, R in splits for c in _ALPHABET]
    return set(deletes + transposes + replaces + inserts)


class SpellChecker:
    """Spells words against the vocabulary, corrects only against CDB words.

    A word is left alone when it is known to the vocabulary, looks like an
    abbreviation, contains a digit, or is itself a CDB word. Otherwise the
    best candidate within the length-dependent edit budget wins: highest
    vocabulary count first, then fewer edits, then lexicographic order.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        cdb_words: set[str],
        config: SpellConfig | None = None,
    ) -> None:
        self.vocab = vocab
        self.cdb_words = cdb_words
        self.config = config or SpellConfig()
        self._cache: OrderedDict[str, str] = OrderedDict()

    def correct_word(self, norm: str, is_abbrev_shape: bool = False) -> str:
        if is_abbrev_shape or not norm:
            return norm
        if norm in self.vocab or norm in self.cdb_words:
            return norm
        if any(ch.isdigit() for ch in norm):
            return norm
        cached = self._cache.get(norm)
        if cached is not None:
            self._cache.move_to_end(norm)
            return cached
        corrected = self._best_candidate(norm)
        if self.config.cache_capacity > 0:
            if len(self._cache) >= self.config.cache_capacity:
                self._cache.popitem(last=False)
            self._cache[norm] = corrected
        return corrected

    def correct(self, token: Token) -> str:
        return self.correct_word(token.norm, token.is_abbrev_shape)

    def _best_candidate(self, word: str) -> str:
        budget = self.config.budget(word)
        one = edits1(word)
        candidates = {c: 1 for c in one if c in self.cdb_words}
        if budget >= 2:
            for e1 in one:
                for e2 in edits1(e1):
                    if e2 in self.cdb_words and e2 not in candidates:
                        candidates[e2] = 2
        if not candidates:
            return word
        return min(candidates, key=lambda c: (-self.vocab.count(c), candidates[c], c))


def spell_correct(tokens: Iterable[Token], checker: SpellChecker) -> None:
    """Rewrite each token's norm with its spelling correction."""
    for tok in tokens:
        tok.norm = checker.correct(tok)
