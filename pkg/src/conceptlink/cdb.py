"""Concept database: records, the token-sequence name index, persistence.

Names are stored as normalized token tuples. Ordinary names are lowercased
and lemmatized; abbreviation names keep their raw casing and are matched
case-sensitively against raw document tokens.
"""

from __future__ import annotations

import csv
import io
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, TextIO

import numpy as np

from .cooc import CoocMatrix
from .normalize import Lemmatizer, RuleLemmatizer

CDB_MAGIC = b"CDB1"
CDB_VERSION = 1

DEFAULT_MAX_NAME_WORDS = 6
ABBREV_MAX_RAW_LEN = 4

_TRAILING_GROUP_RE = re.compile(r"\s*([\[(][^\[\]()]*[\])])\s*$")
_NAME_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

TokenSeq = tuple[str, ...]


class CdbError(Exception):
    """Domain error raised by concept-database operations."""


class CdbFormatError(CdbError):
    """Unreadable CDB container or CSV input."""


class NameRejected(CdbError):
    """A concept name failed preprocessing; .reason says why."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class UntrainedConceptError(CdbError):
    """Operation requires a concept embedding that does not exist."""


@dataclass
class NameKey:
    tokens: TokenSeq
    is_abbreviation: bool
    is_unique: bool


@dataclass
class ConceptRecord:
    cui: str
    names: set[TokenSeq] = field(default_factory=set)
    preferred_name: TokenSeq | None = None
    semantic_type: str | None = None
    embedding_long: np.ndarray | None = None
    embedding_short: np.ndarray | None = None
    train_count: int = 0
    trained: bool = False

    def has_embedding(self) -> bool:
        return self.embedding_long is not None or self.embedding_short is not None

    def combined_embedding(self) -> np.ndarray:
        """Mean of the long and short context embeddings (whichever exist)."""
        if self.embedding_long is not None and self.embedding_short is not None:
            return (self.embedding_long + self.embedding_short) / 2.0
        if self.embedding_long is not None:
            return self.embedding_long
        if self.embedding_short is not None:
            return self.embedding_short
        raise UntrainedConceptError(f"concept {self.cui} has no embedding")


class NameIndex:
    """Exact token-sequence lookup plus the proper-prefix set used by detection."""

    def __init__(self) -> None:
        self.exact: dict[TokenSeq, set[str]] = {}
        self.prefixes: set[TokenSeq] = set()
        self.abbrev_keys: set[TokenSeq] = set()
        self.max_key_len: int = 0

    def insert(self, key: TokenSeq, cui: str, is_abbreviation: bool) -> None:
        self.exact.setdefault(key, set()).add(cui)
        for i in range(1, len(key)):
            self.prefixes.add(key[:i])
        if is_abbreviation:
            self.abbrev_keys.add(key)
        if len(key) > self.max_key_len:
            self.max_key_len = len(key)

    def lookup(self, key: TokenSeq) -> set[str]:
        return self.exact.get(key, set())

    def is_prefix(self, key: TokenSeq) -> bool:
        return key in self.prefixes

    def is_abbreviation(self, key: TokenSeq) -> bool:
        return key in self.abbrev_keys

    def is_unique(self, key: TokenSeq) -> bool:
        return len(self.exact.get(key, ())) == 1


def clean_name(raw_name: str) -> str:
    """Strip one trailing bracketed or parenthesized group, e.g. source tags."""
    return _TRAILING_GROUP_RE.sub("", raw_name.strip())


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with the zero-vector convention cos(0, x) = 0."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


class ConceptDatabase:
    def __init__(
        self,
        max_name_words: int = DEFAULT_MAX_NAME_WORDS,
        lemmatizer: Lemmatizer | None = None,
    ) -> None:
        self.concepts: dict[str, ConceptRecord] = {}
        self.index = NameIndex()
        self.max_name_words = max_name_words
        self.lemmatizer: Lemmatizer = lemmatizer or RuleLemmatizer()
        self.dim: int | None = None
        self.cooc = CoocMatrix()

    def __len__(self) -> int:
        return len(self.concepts)

    # -- construction -------------------------------------------------------

    def add_concept(
        self,
        cui: str,
        raw_name: str,
        semantic_type: str | None = None,
        abbrev_hint: bool | None = None,
    ) -> None:
        """Preprocess and index one (cui, name) pair.

        Raises NameRejected when the name is empty after cleanup or longer
        than the configured word limit.
        """
        if not raw_name or not raw_name.strip():
            raise NameRejected("empty name")
        raw = raw_name.strip()
        cleaned = clean_name(raw)
        is_abbrev = abbrev_hint is True or (
            len(cleaned) <= ABBREV_MAX_RAW_LEN and cleaned.isupper()
        )
        raw_tokens = tuple(_NAME_TOKEN_RE.findall(cleaned))
        if not raw_tokens:
            raise NameRejected(f"name {raw_name!r} empty after cleanup")
        if len(raw_tokens) > self.max_name_words:
            raise NameRejected(
                f"name {raw_name!r} has {len(raw_tokens)} words, limit is {self.max_name_words}"
            )
        if is_abbrev:
            key = raw_tokens
        else:
            key = tuple(self.lemmatizer(t.lower()) for t in raw_tokens)

        record = self.concepts.get(cui)
        if record is None:
            record = ConceptRecord(cui=cui)
            self.concepts[cui] = record
        record.names.add(key)
        if record.preferred_name is None:
            record.preferred_name = key
        if semantic_type and record.semantic_type is None:
            record.semantic_type = semantic_type
        self.index.insert(key, cui, is_abbrev)

    # -- queries -------------------------------------------------------------

    def lookup_exact(self, tokens: Iterable[str]) -> set[str]:
        return set(self.index.lookup(tuple(tokens)))

    def is_prefix(self, tokens: Iterable[str]) -> bool:
        return self.index.is_prefix(tuple(tokens))

    def name_info(self, tokens: Iterable[str]) -> NameKey:
        key = tuple(tokens)
        return NameKey(
            tokens=key,
            is_abbreviation=self.index.is_abbreviation(key),
            is_unique=self.index.is_unique(key),
        )

    def name_words(self) -> set[str]:
        """Lowercased set of all words occurring in indexed names (spell targets)."""
        words: set[str] = set()
        for key in self.index.exact:
            for tok in key:
                words.add(tok.lower())
        return words

    def preferred_name_text(self, cui: str) -> str:
        record = self.concepts[cui]
        return " ".join(record.preferred_name) if record.preferred_name else ""

    # -- embedding queries ----------------------------------------------------

    def concept_similarity(self, cui_a: str, cui_b: str) -> float:
        for cui in (cui_a, cui_b):
            if cui not in self.concepts:
                raise KeyError(f"unknown concept {cui}")
            if not self.concepts[cui].has_embedding():
                raise UntrainedConceptError(f"concept {cui} has no embedding")
        return cosine(
            self.concepts[cui_a].combined_embedding(),
            self.concepts[cui_b].combined_embedding(),
        )

    def most_similar(
        self,
        cui: str,
        k: int = 8,
        semantic_type: str | None = None,
    ) -> list[tuple[str, float]]:
        """Top-k concepts by combined-embedding cosine, self excluded.

        Descending similarity; ties break on lexicographic cui order.
        """
        if cui not in self.concepts:
            raise KeyError(f"unknown concept {cui}")
        if not self.concepts[cui].has_embedding():
            raise UntrainedConceptError(f"concept {cui} has no embedding")
        query = self.concepts[cui].combined_embedding()
        return self._rank_by_cosine(query, exclude={cui}, k=k, semantic_type=semantic_type)

    def analogy(
        self,
        cui_pos1: str,
        cui_neg: str,
        cui_pos2: str,
        k: int = 8,
    ) -> list[tuple[str, float]]:
        """Rank concepts by cosine to emb(pos1) - emb(neg) + emb(pos2)."""
        for cui in (cui_pos1, cui_neg, cui_pos2):
            if cui not in self.concepts:
                raise KeyError(f"unknown concept {cui}")
            if not self.concepts[cui].has_embedding():
                raise UntrainedConceptError(f"concept {cui} has no embedding")
        query = (
            self.concepts[cui_pos1].combined_embedding()
            - self.concepts[cui_neg].combined_embedding()
            + self.concepts[cui_pos2].combined_embedding()
        )
        return self._rank_by_cosine(
            query, exclude={cui_pos1, cui_neg, cui_pos2}, k=k, semantic_type=None
        )

    def _rank_by_cosine(
        self,
        query: np.ndarray,
        exclude: set[str],
        k: int,
        semantic_type: str | None,
    ) -> list[tuple[str, float]]:
        if k <= 0:
            return []
        scored = []
        for other_cui, record in self.concepts.items():
            if other_cui in exclude or not record.has_embedding():
                continue
            if semantic_type is not None and record.semantic_type != semantic_type:
                continue
            scored.append((other_cui, cosine(query, record.combined_embedding())))
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:k]

    # -- persistence -----------------------------------------------------------

    def save(self, sink: str | Path | BinaryIO) -> None:
        if isinstance(sink, (str, Path)):
            with open(sink, "wb") as fh:
                self.save(fh)
            return
        w = _Writer(sink)
        w.raw(CDB_MAGIC)
        w.u16(CDB_VERSION)
        w.u16(self.max_name_words)
        w.i32(self.dim if self.dim is not None else -1)
        w.u32(len(self.concepts))
        abbrev_keys = self.index.abbrev_keys
        for cui in sorted(self.concepts):
            record = self.concepts[cui]
            w.text(cui)
            w.text(record.semantic_type or "")
            w.u32(record.train_count)
            w.u8(1 if record.trained else 0)
            w.vector(record.embedding_long)
            w.vector(record.embedding_short)
            names = sorted(record.names)
            w.u16(len(names))
            preferred_idx = names.index(record.preferred_name) if record.preferred_name else 0
            w.u16(preferred_idx)
            for key in names:
                w.u8(1 if key in abbrev_keys else 0)
                w.u8(len(key))
                for token in key:
                    w.text(token)
        pairs = sorted(self.cooc.counts.items())
        w.u8(0 if self.cooc.mode == "per_block" else 1)
        w.u32(len(pairs))
        for (cui_a, cui_b), count in pairs:
            w.text(cui_a)
            w.text(cui_b)
            w.u32(count)

    @classmethod
    def load(cls, source: str | Path | BinaryIO) -> "ConceptDatabase":
        if isinstance(source, (str, Path)):
            with open(source, "rb") as fh:
                return cls.load(fh)
        r = _Reader(source)
        magic = r.raw(4)
        if magic != CDB_MAGIC:
            raise CdbFormatError(f"bad magic {magic!r}, expected {CDB_MAGIC!r}")
        version = r.u16()
        if version != CDB_VERSION:
            raise CdbFormatError(f"unsupported CDB version {version}")
        cdb = cls(max_name_words=r.u16())
        dim = r.i32()
        cdb.dim = None if dim < 0 else dim
        n_concepts = r.u32()
        for _ in range(n_concepts):
            cui = r.text()
            semantic_type = r.text() or None
            train_count = r.u32()
            trained = bool(r.u8())
            embedding_long = r.vector()
            embedding_short = r.vector()
            n_names = r.u16()
            preferred_idx = r.u16()
            names = []
            for _ in range(n_names):
                is_abbrev = bool(r.u8())
                n_tokens = r.u8()
                key = tuple(r.text() for _ in range(n_tokens))
                names.append(key)
                cdb.index.insert(key, cui, is_abbrev)
            if not names or preferred_idx >= len(names):
                raise CdbFormatError(f"concept {cui}: invalid name table")
            cdb.concepts[cui] = ConceptRecord(
                cui=cui,
                names=set(names),
                preferred_name=names[preferred_idx],
                semantic_type=semantic_type,
                embedding_long=embedding_long,
                embedding_short=embedding_short,
                train_count=train_count,
                trained=trained,
            )
        mode = r.u8()
        cdb.cooc = CoocMatrix(mode="per_block" if mode == 0 else "per_occurrence")
        n_pairs = r.u32()
        for _ in range(n_pairs):
            cui_a = r.text()
            cui_b = r.text()
            cdb.cooc.counts[(cui_a, cui_b)] = r.u32()
        return cdb


class _Writer:
    def __init__(self, fh: BinaryIO) -> None:
        self.fh = fh

    def raw(self, data: bytes) -> None:
        self.fh.write(data)

    def u8(self, v: int) -> None:
        self.fh.write(struct.pack("<B", v))

    def u16(self, v: int) -> None:
        self.fh.write(struct.pack("<H", v))

    def u32(self, v: int) -> None:
        self.fh.write(struct.pack("<I", v))

    def i32(self, v: int) -> None:
        self.fh.write(struct.pack("<i", v))

    def text(self, s: str) -> None:
        data = s.encode("utf-8")
        self.u16(len(data))
        self.fh.write(data)

    def vector(self, vec: np.ndarray | None) -> None:
        if vec is None:
            self.u8(0)
            return
        self.u8(1)
        data = np.asarray(vec, dtype="<f4").tobytes()
        self.u32(len(data))
        self.fh.write(data)


class _Reader:
    def __init__(self, fh: BinaryIO) -> None:
        self.fh = fh

    def raw(self, n: int) -> bytes:
        data = self.fh.read(n)
        if len(data) != n:
            raise CdbFormatError("truncated CDB stream")
        return data

    def u8(self) -> int:
        return struct.unpack("<B", self.raw(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.raw(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.raw(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self.raw(4))[0]

    def text(self) -> str:
        return self.raw(self.u16()).decode("utf-8")

    def vector(self) -> np.ndarray | None:
        if self.u8() == 0:
            return None
        data = self.raw(self.u32())
        return np.frombuffer(data, dtype="<f4").astype(np.float64)


@dataclass
class ImportReport:
    concepts: int = 0
    names: int = 0
    rejected: int = 0
    rejected_reasons: list[str] = field(default_factory=list)


def import_cdb_csv(
    source: str | Path | TextIO,
    max_name_words: int = DEFAULT_MAX_NAME_WORDS,
    lemmatizer: Lemmatizer | None = None,
) -> tuple[ConceptDatabase, ImportReport]:
    """Build a ConceptDatabase from `cui,name,semantic_type,abbrev` CSV rows.

    Rows rejected by name preprocessing are counted, not fatal. The preferred
    name of a concept is the name appearing in the most rows for that cui,
    ties broken by first occurrence.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return import_cdb_csv(fh, max_name_words, lemmatizer)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise CdbFormatError("line 1: missing header row") from None
    if [h.strip().lower() for h in header] != ["cui", "name", "semantic_type", "abbrev"]:
        raise CdbFormatError(
            f"line 1: expected header cui,name,semantic_type,abbrev, got {','.join(header)}"
        )

    cdb = ConceptDatabase(max_name_words=max_name_words, lemmatizer=lemmatizer)
    report = ImportReport()
    # (cui, name key) -> [row votes, first-seen ordinal] for preferred-name election
    votes: dict[tuple[str, TokenSeq], list[int]] = {}
    ordinal = 0
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise CdbFormatError(f"line {lineno}: expected 4 columns, got {len(row)}")
        cui, name, semantic_type, abbrev = row
        if abbrev not in ("", "0", "1"):
            raise CdbFormatError(f"line {lineno}: abbrev must be one of '', '0', '1'")
        hint = True if abbrev == "1" else (False if abbrev == "0" else None)
        before = len(cdb.concepts.get(cui, ConceptRecord(cui)).names) if cui in cdb.concepts else 0
        try:
            cdb.add_concept(cui, name, semantic_type or None, hint)
        except NameRejected as exc:
            report.rejected += 1
            report.rejected_reasons.append(f"line {lineno}: {exc.reason}")
            continue
        record = cdb.concepts[cui]
        key = _added_key(record, votes, cui)
        entry = votes.get((cui, key))
        if entry is None:
            votes[(cui, key)] = [1, ordinal]
        else:
            entry[0] += 1
        ordinal += 1
        report.names += len(record.names) - before if False else 0  # names counted below

    for cui, record in cdb.concepts.items():
        best = min(
            (key for (c, key) in votes if c == cui),
            key=lambda key: (-votes[(cui, key)][0], votes[(cui, key)][1]),
        )
        record.preferred_name = best

    report.concepts = len(cdb.concepts)
    report.names = len(cdb.index.exact)
    return cdb, report


def _added_key(
    record: ConceptRecord, votes: dict[tuple[str, TokenSeq], list[int]], cui: str
) -> TokenSeq:
    """Identify which name key the last add_concept call produced for `cui`."""
    seen = {key for (c, key) in votes if c == cui}
    new = record.names - seen
    if new:
        return next(iter(new))
    # Re-added an existing name; recompute it by preprocessing again is not
    # possible here, so fall back to the most recent vote bump target.
    raise AssertionError("unreachable")
