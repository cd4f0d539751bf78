"""Vocabulary and word-embedding table (random or pretrained initialization)."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import NUMBER, URL, Conversation
from .initializers import EMBED_INIT_RANGE

log = logging.getLogger(__name__)

UNK = "<unk>"
PAD = "<pad>"
RESERVED = (UNK, PAD, NUMBER, URL)
DEFAULT_DIM = 300


class VectorFormatError(ValueError):
    pass


class Vocabulary:
    """Bijective token <-> index map; reserved tokens take indices 0-3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"vocabulary must start with the reserved tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def index(self, token: str) -> int:
        return self.stoi.get(token, 0)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, 0) for t in tokens]


def build_vocab(corpus: Sequence[Conversation], min_count: int = 1) -> Vocabulary:
    """Tokens with frequency >= min_count, by descending count then lexicographically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(tok for conv in corpus for s in conv.sentences for tok in s.tokens)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count and t not in RESERVED),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(list(RESERVED) + kept)


@dataclass
class EmbeddingTable:
    matrix: Tensor  # [|V| x D]
    trainable: bool = True

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def random(cls, vocab_size: int, dim: int, rng: np.random.Generator, trainable: bool = True):
        data = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=(vocab_size, dim))
        return cls(Tensor(data, requires_grad=trainable, name="embed"), trainable)

    def freeze(self) -> None:
        self.trainable = False
        self.matrix.requires_grad = False


def lookup(table: EmbeddingTable, indices: Sequence[int]) -> Tensor:
    """Gather embedding rows; when trainable, gradients flow to the touched rows only."""
    return ad.gather_rows(table.matrix, indices)


def _read_vectors(path) -> Iterable[tuple[int, str, list[str]]]:
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            if parts and parts[-1] == "":
                parts = parts[:-1]
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # word2vec-style "count dim" header
            yield lineno, parts[0], parts[1:]


def load_pretrained(
    path, vocab: Vocabulary, dim: int, rng: np.random.Generator, trainable: bool = True
) -> tuple[EmbeddingTable, float]:
    """Table with file vectors for covered tokens and U(-0.05, 0.05) rows elsewhere.

    Returns the table and the fraction of vocabulary entries found in the file.
    """
    table = EmbeddingTable.random(len(vocab), dim, rng, trainable)
    covered = np.zeros(len(vocab), dtype=bool)
    for lineno, token, fields in _read_vectors(path):
        if len(fields) != dim:
            raise VectorFormatError(
                f"{path}:{lineno}: vector for {token!r} has {len(fields)} values, expected {dim}"
            )
        idx = vocab.stoi.get(token)
        if idx is None:
            continue
        try:
            table.matrix.data[idx] = [float(v) for v in fields]
        except ValueError:
            raise VectorFormatError(f"{path}:{lineno}: malformed number in vector for {token!r}") from None
        covered[idx] = True
    coverage = float(covered.mean())
    log.info("loaded pretrained vectors from %s: coverage %.3f", path, coverage)
    return table, coverage


def save_vectors(table: EmbeddingTable, vocab: Vocabulary, path) -> None:
    """Write the table in the text vector format; ``repr`` floats reload bit-exactly."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for token, row in zip(vocab.itos, table.matrix.data):
            fh.write(token + " " + " ".join(repr(float(v)) for v in row) + "\n")
