"""Word vocabulary: frequencies, dense word vectors and the negative sampler.

The vocabulary backs two very different consumers: the spell checker (which
only needs words and counts) and the context math (which needs vectors).
Words without vectors are legal vocabulary members but never participate in
context or negative-sampling computations.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

SAMPLING_EXPONENT = 0.75  # unigram counts are smoothed by this power


class VocabError(Exception):
    """Domain error raised by vocabulary operations."""


class VocabFormatError(VocabError):
    """Malformed vocabulary file; message carries the offending line number."""


@dataclass
class WordEntry:
    word: str
    count: int
    vector: np.ndarray | None = None


class Vocabulary:
    """Immutable-after-load map of word -> (count, optional vector)."""

    def __init__(self) -> None:
        self.entries: dict[str, WordEntry] = {}
        self.dim: int | None = None
        self.total_count: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def count(self, word: str) -> int:
        entry = self.entries.get(word)
        return entry.count if entry is not None else 0

    def vector(self, word: str) -> np.ndarray | None:
        entry = self.entries.get(word)
        return entry.vector if entry is not None else None

    def add(self, word: str, count: int, vector: np.ndarray | None = None) -> None:
        if not word or any(ch.isspace() for ch in word):
            raise VocabError(f"invalid word {word!r}: empty or contains whitespace")
        if count < 1:
            raise VocabError(f"invalid count {count} for {word!r}: must be >= 1")
        if vector is not None:
            vector = np.asarray(vector, dtype=np.float64)
            if self.dim is None:
                self.dim = int(vector.shape[0])
            elif vector.shape[0] != self.dim:
                raise VocabError(
                    f"vector dimension {vector.shape[0]} for {word!r} does not "
                    f"match vocabulary dimension {self.dim}"
                )
        old = self.entries.get(word)
        if old is not None:
            self.total_count -= old.count
        self.entries[word] = WordEntry(word, count, vector)
        self.total_count += count

    def vectored_words(self) -> list[str]:
        """Words that own a vector, in stable lexicographic order."""
        return sorted(w for w, e in self.entries.items() if e.vector is not None)

    def word_frequency(self, word: str) -> float:
        """Relative corpus frequency: count(word) / total count; 0 for unknowns."""
        if self.total_count == 0:
            raise VocabError("word frequency undefined: vocabulary has zero total count")
        return self.count(word) / self.total_count

    def sampling_probability(self, word: str) -> float:
        """Negative-sampling probability under the count^0.75 distribution.

        Only vectored words participate; any other word has probability 0.
        """
        denom = sum(self.count(w) ** SAMPLING_EXPONENT for w in self.vectored_words())
        if denom == 0.0:
            raise VocabError("no vectored words: sampling distribution undefined")
        entry = self.entries.get(word)
        if entry is None or entry.vector is None:
            return 0.0
        return entry.count ** SAMPLING_EXPONENT / denom

    def save(self, sink: str | Path | TextIO) -> None:
        """Write `word<TAB>count[<TAB>v1 v2 ...]` lines, LF-terminated."""
        if isinstance(sink, (str, Path)):
            with open(sink, "w", encoding="utf-8", newline="\n") as fh:
                self.save(fh)
            return
        for word, entry in self.entries.items():
            if entry.vector is None:
                sink.write(f"{word}\t{entry.count}\n")
            else:
                vec = " ".join(repr(float(x)) for x in entry.vector)
                sink.write(f"{word}\t{entry.count}\t{vec}\n")


def load_vocab(source: str | Path | TextIO | Iterable[str]) -> Vocabulary:
    """Parse a vocabulary stream of `word<TAB>count[<TAB>floats]` lines.

    Duplicate words keep the last occurrence. The vector dimension is fixed
    by the first vectored line; later disagreements raise VocabFormatError.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_vocab(fh)

    vocab = Vocabulary()
    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise VocabFormatError(
                f"line {lineno}: expected 2 or 3 tab-separated fields, got {len(fields)}"
            )
        word = fields[0]
        try:
            count = int(fields[1])
        except ValueError:
            raise VocabFormatError(f"line {lineno}: non-integer count {fields[1]!r}") from None
        vector = None
        if len(fields) == 3:
            try:
                vector = np.array([float(x) for x in fields[2].split()], dtype=np.float64)
            except ValueError:
                raise VocabFormatError(f"line {lineno}: non-numeric vector component") from None
            if vector.size == 0:
                raise VocabFormatError(f"line {lineno}: empty vector field")
            if vocab.dim is not None and vector.shape[0] != vocab.dim:
                raise VocabFormatError(
                    f"line {lineno}: vector dimension {vector.shape[0]} does not "
                    f"match established dimension {vocab.dim}"
                )
        try:
            vocab.add(word, count, vector)
        except VocabError as exc:
            raise VocabFormatError(f"line {lineno}: {exc}") from None
    return vocab


def load_vocab_text(text: str) -> Vocabulary:
    return load_vocab(io.StringIO(text))


class NegativeSampler:
    """Frequency-weighted sampler over vectored words (counts^0.75).

    Draws are i.i.d. with replacement using inverse-CDF lookup, so a fixed
    seed yields a reproducible stream. Holds mutable RNG state: use one
    sampler per worker or synchronize externally.
    """

    def __init__(self, vocab: Vocabulary, seed: int = 0) -> None:
        self.words = vocab.vectored_words()
        if not self.words:
            raise VocabError("cannot build a negative sampler without vectored words")
        weights = np.array(
            [vocab.count(w) ** SAMPLING_EXPONENT for w in self.words], dtype=np.float64
        )
        self.probabilities = weights / weights.sum()
        self.cumulative = np.cumsum(self.probabilities)
        self.cumulative[-1] = 1.0  # guard against cumsum round-off
        self.vectors = np.stack([vocab.vector(w) for w in self.words])
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def sample_indices(self, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError(f"sample size must be >= 1, got {k}")
        u = self._rng.random(k)
        return np.searchsorted(self.cumulative, u, side="right")

    def sample_words(self, k: int) -> list[str]:
        return [self.words[i] for i in self.sample_indices(k)]

    def sample_mean_vector(self, k: int) -> np.ndarray:
        """Mean of k word vectors drawn under the sampling distribution."""
        idx = self.sample_indices(k)
        return self.vectors[idx].mean(axis=0)
