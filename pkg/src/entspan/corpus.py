"""Corpus, embedding, and lexicon parsing and serialization.

Formats:
  - CoNLL two-column text: one token per line, token and label separated by
    whitespace, blank line between sequences. IOB1 and BIO2 both accepted on
    input; output is always BIO2.
  - Embedding text: word followed by D floats per line, optional
    "count dim" header.
  - Lexicon TSV: source word TAB target word.
  - Corpus JSONL: one {"id", "tokens", "labels"?} object per line.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .labels import LabelScheme, normalize_to_bio2, validate_bio2

log = logging.getLogger(__name__)


class CorpusFormatError(ValueError):
    """Malformed corpus / embedding / lexicon input, with a line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class LabeledSequence:
    """Tokens with optional per-token BIO2 label indices."""

    tokens: list[str]
    labels: list[int] | None = None
    source_id: str = ""

    def __post_init__(self):
        if not self.tokens:
            raise CorpusFormatError("empty sequence")
        if any(not t for t in self.tokens):
            raise CorpusFormatError(f"empty token in sequence {self.source_id!r}")
        if self.labels is not None and len(self.labels) != len(self.tokens):
            raise CorpusFormatError(
                f"sequence {self.source_id!r}: {len(self.labels)} labels "
                f"for {len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class EmbeddingTable:
    """Word -> vector mapping with a single shared dimension."""

    dimension: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    duplicate_count: int = 0

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __getitem__(self, word: str) -> np.ndarray:
        return self.entries[word]

    def words(self) -> list[str]:
        return list(self.entries)

    def matrix(self, words: list[str]) -> np.ndarray:
        return np.stack([self.entries[w] for w in words])


@dataclass
class BilingualLexicon:
    """Seed (source, target) word pairs for alignment."""

    pairs: list[tuple[str, str]]

    def __post_init__(self):
        if not self.pairs:
            raise CorpusFormatError("empty lexicon")

    def usable_pairs(
        self, src: EmbeddingTable, tgt: EmbeddingTable
    ) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
        """Split pairs into (usable, excluded) by embedding coverage."""
        usable, excluded = [], []
        for s, t in self.pairs:
            if s in src and t in tgt:
                usable.append((s, t))
            else:
                excluded.append((s, t))
        if excluded:
            log.warning("lexicon: %d pairs missing from embeddings, excluded", len(excluded))
        return usable, excluded


def parse_conll(text: str, scheme: LabelScheme) -> list[LabeledSequence]:
    """Parse two-column CoNLL text into BIO2-labeled sequences.

    Accepts IOB1 or BIO2 labels; both normalize to BIO2. An empty document
    yields an empty list. Unknown labels raise CorpusFormatError naming the
    offending line.
    """
    sequences: list[LabeledSequence] = []
    tokens: list[str] = []
    names: list[str] = []
    start_line = 1

    def flush(line_no: int):
        if not tokens:
            return
        try:
            labels = normalize_to_bio2(names, scheme)
        except ValueError as e:
            raise CorpusFormatError(str(e), line=start_line) from e
        sequences.append(
            LabeledSequence(tokens[:], labels, source_id=f"s{len(sequences)}")
        )
        tokens.clear()
        names.clear()

    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            flush(line_no)
            start_line = line_no + 1
            continue
        parts = line.split()
        if len(parts) < 2:
            raise CorpusFormatError(f"expected 'token label', got {line!r}", line=line_no)
        token, name = parts[0], parts[-1]
        if not tokens:
            start_line = line_no
        # fail early so the error names the line that carries the bad label
        if name not in scheme.labels:
            raise CorpusFormatError(f"unknown label {name!r}", line=line_no)
        tokens.append(token)
        names.append(name)
    flush(-1)
    return sequences


def write_conll(seqs: list[LabeledSequence], scheme: LabelScheme) -> str:
    """Serialize labeled sequences to CoNLL text; round-trips with parse_conll."""
    blocks = []
    for seq in seqs:
        if seq.labels is None:
            raise CorpusFormatError(f"sequence {seq.source_id!r} is unlabeled")
        validate_bio2(seq.labels, scheme)
        blocks.append(
            "".join(
                f"{tok} {scheme.name(lab)}\n" for tok, lab in zip(seq.tokens, seq.labels)
            )
        )
    return "\n".join(blocks)


def parse_embeddings(text: str) -> EmbeddingTable:
    """Parse word-vector text (word then D floats per line).

    A leading "count dim" header is tolerated. Duplicate words keep the first
    occurrence; the number skipped is recorded on the table and logged.
    """
    entries: dict[str, np.ndarray] = {}
    dimension: int | None = None
    duplicates = 0
    lines = text.splitlines()
    start = 0
    if lines:
        head = lines[0].split()
        if len(head) == 2:
            try:
                int(head[0]), int(head[1])
                start = 1
            except ValueError:
                pass
    for line_no, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split()
        word, fields = parts[0], parts[1:]
        if not fields:
            raise CorpusFormatError("no vector components", line=line_no)
        try:
            vec = np.array([float(x) for x in fields], dtype=np.float64)
        except ValueError as e:
            raise CorpusFormatError(f"non-numeric field: {e}", line=line_no) from e
        if dimension is None:
            dimension = len(vec)
        elif len(vec) != dimension:
            raise CorpusFormatError(
                f"dimension {len(vec)} != {dimension}", line=line_no
            )
        if word in entries:
            duplicates += 1
            continue
        entries[word] = vec
    if dimension is None:
        raise CorpusFormatError("empty embedding file")
    if duplicates:
        log.warning("embeddings: %d duplicate words skipped", duplicates)
    return EmbeddingTable(dimension=dimension, entries=entries, duplicate_count=duplicates)


def parse_lexicon(text: str) -> BilingualLexicon:
    """Parse source TAB target pairs, one per line."""
    pairs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 2 or not parts[0] or not parts[1]:
            raise CorpusFormatError(f"expected 'source<TAB>target', got {line!r}", line=line_no)
        pairs.append((parts[0], parts[1]))
    return BilingualLexicon(pairs)


def read_jsonl_corpus(text: str) -> list[LabeledSequence]:
    """Read {"id", "tokens", "labels"?} objects, one per line."""
    seqs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"bad JSON: {e}", line=line_no) from e
        try:
            seqs.append(
                LabeledSequence(
                    tokens=list(obj["tokens"]),
                    labels=list(obj["labels"]) if obj.get("labels") is not None else None,
                    source_id=str(obj["id"]),
                )
            )
        except (KeyError, TypeError) as e:
            raise CorpusFormatError(f"bad corpus record: {e}", line=line_no) from e
    return seqs


def write_jsonl_corpus(seqs: list[LabeledSequence]) -> str:
    out = []
    for seq in seqs:
        obj = {"id": seq.source_id, "tokens": seq.tokens}
        if seq.labels is not None:
            obj["labels"] = seq.labels
        out.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(out) + ("\n" if out else "")
