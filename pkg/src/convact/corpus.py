"""Conversation corpora: data model, JSONL I/O, preprocessing, chunking and folds.

Corpus files hold one conversation per line::

    {"id": str, "domain": "source"|"target",
     "comments": [{"speaker": str, "sentences": [{"text": str, "act": "SU"|"R"|"Q"|"P"|"ST"|null}]}]}
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .output import TAGS, LabelError, tag_code

log = logging.getLogger(__name__)

NUMBER = "<number>"
URL = "<url>"
DOMAINS = ("source", "target")


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Sentence:
    raw: str
    tokens: tuple[str, ...]
    act: str | None = None

    @property
    def act_code(self) -> int | None:
        return None if self.act is None else tag_code(self.act)


@dataclass(frozen=True)
class Comment:
    speaker: str
    sentences: tuple[Sentence, ...]


@dataclass(frozen=True)
class Conversation:
    id: str
    domain: str
    comments: tuple[Comment, ...]

    @property
    def sentences(self) -> list[Sentence]:
        """All sentences in chronological order."""
        return [s for c in self.comments for s in c.sentences]

    def __len__(self) -> int:
        return sum(len(c.sentences) for c in self.comments)

    @property
    def labels(self) -> list[int | None]:
        return [s.act_code for s in self.sentences]

    @property
    def is_labeled(self) -> bool:
        return all(s.act is not None for s in self.sentences)

    def strip_labels(self) -> "Conversation":
        return replace(
            self,
            comments=tuple(
                Comment(c.speaker, tuple(replace(s, act=None) for s in c.sentences))
                for c in self.comments
            ),
        )


@dataclass
class CorpusStats:
    conversations: int
    comments: int
    sentences: int
    tokens: int

    @property
    def avg_comments(self) -> float:
        return self.comments / self.conversations if self.conversations else 0.0

    @property
    def avg_sentences(self) -> float:
        return self.sentences / self.conversations if self.conversations else 0.0

    @property
    def avg_words(self) -> float:
        return self.tokens / self.sentences if self.sentences else 0.0


def corpus_stats(convs: Sequence[Conversation]) -> CorpusStats:
    return CorpusStats(
        conversations=len(convs),
        comments=sum(len(c.comments) for c in convs),
        sentences=sum(len(c) for c in convs),
        tokens=sum(len(s.tokens) for c in convs for s in c.sentences),
    )


# ----------------------------------------------------------------------------
# preprocessing

_TOKEN_RE = re.compile(
    r"""
    (?P<url>(?:[a-z][a-z0-9+.\-]*://|www\.)\S*?(?=[.,;:!?)\]}'"]*(?:\s|$)))
  | (?P<placeholder><number>|<url>)
  | (?P<number>\d+)
  | (?P<word>[^\W\d]+)
  | (?P<punct>[^\w\s]+)
    """,
    re.VERBOSE,
)


def preprocess_sentence(raw: str) -> list[str]:
    """Lowercase and tokenize; digit runs become <number> and URLs become <url>.

    Words are maximal letter runs. Punctuation splits off from words, and a
    contiguous run of non-alphanumeric symbols (e.g. ``...`` or ``:-)``) is
    kept as one token.
    """
    tokens = []
    for m in _TOKEN_RE.finditer(raw.lower()):
        kind = m.lastgroup
        if kind == "url":
            tokens.append(URL)
        elif kind == "number":
            tokens.append(NUMBER)
        else:
            tokens.append(m.group())
    return tokens


def make_sentence(text: str, act: str | None = None) -> Sentence:
    if act is not None:
        tag_code(act)
    return Sentence(text, tuple(preprocess_sentence(text)), act)


# ----------------------------------------------------------------------------
# JSONL I/O


def conversation_from_dict(obj: dict, where: str = "") -> Conversation:
    try:
        cid = str(obj["id"])
        domain = obj.get("domain", "target")
        if domain not in DOMAINS:
            raise CorpusFormatError(f"{where}unknown domain {domain!r}")
        comments = []
        for comment in obj["comments"]:
            sents = []
            for s in comment["sentences"]:
                act = s.get("act")
                if act is not None and act not in TAGS:
                    raise CorpusFormatError(f"{where}unknown act {act!r}; expected one of {TAGS}")
                sent = make_sentence(s["text"], act)
                if not sent.tokens:
                    log.warning("%sdropping sentence with no tokens in conversation %s", where, cid)
                    continue
                sents.append(sent)
            if sents:
                comments.append(Comment(str(comment.get("speaker", "")), tuple(sents)))
    except (KeyError, TypeError) as exc:
        raise CorpusFormatError(f"{where}malformed conversation record: {exc!r}") from None
    if not comments:
        raise CorpusFormatError(f"{where}conversation {cid!r} has no sentences")
    return Conversation(cid, domain, tuple(comments))


def conversation_to_dict(conv: Conversation) -> dict:
    return {
        "id": conv.id,
        "domain": conv.domain,
        "comments": [
            {
                "speaker": c.speaker,
                "sentences": [{"text": s.raw, "act": s.act} for s in c.sentences],
            }
            for c in conv.comments
        ],
    }


def parse_lines(lines: Iterable[str], source: str = "<corpus>") -> list[Conversation]:
    convs = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{source}:{lineno}: "
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{where}malformed JSON ({exc.msg})") from None
        convs.append(conversation_from_dict(obj, where))
    return convs


def parse_corpus(path) -> list[Conversation]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        convs = parse_lines(fh, str(path))
    stats = corpus_stats(convs)
    log.info(
        "%s: %d conversations, %d comments, %d sentences",
        path, stats.conversations, stats.comments, stats.sentences,
    )
    return convs


def serialize_corpus(convs: Iterable[Conversation]) -> str:
    return "".join(
        json.dumps(conversation_to_dict(c), ensure_ascii=False) + "\n" for c in convs
    )


def write_corpus(convs: Iterable[Conversation], path) -> None:
    Path(path).write_text(serialize_corpus(convs), encoding="utf-8", newline="\n")


# ----------------------------------------------------------------------------
# chunking and folds


def chunk_conversation(conv: Conversation, max_len: int = 100) -> list[Conversation]:
    """Split into consecutive chunks of at most ``max_len`` sentences.

    Comment boundaries are kept inside chunks; a comment straddling a chunk
    border is split in two. Chunk ids are ``<id>#<k>`` when more than one
    chunk is produced.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if len(conv) <= max_len:
        return [conv]
    chunks: list[list[Comment]] = [[]]
    room = max_len
    for comment in conv.comments:
        sents = list(comment.sentences)
        while sents:
            if room == 0:
                chunks.append([])
                room = max_len
            take, sents = sents[:room], sents[room:]
            chunks[-1].append(Comment(comment.speaker, tuple(take)))
            room -= len(take)
    return [
        Conversation(f"{conv.id}#{k}", conv.domain, tuple(parts)) for k, parts in enumerate(chunks)
    ]


def chunk_corpus(convs: Iterable[Conversation], max_len: int = 100) -> list[Conversation]:
    return [chunk for c in convs for chunk in chunk_conversation(c, max_len)]


@dataclass
class Fold:
    train: list[str]
    dev: list[str]
    test: list[str]


@dataclass
class FoldPlan:
    folds: list[Fold] = field(default_factory=list)

    def select(self, convs: Sequence[Conversation], fold: int, split: str) -> list[Conversation]:
        wanted = set(getattr(self.folds[fold], split))
        return [c for c in convs if c.id in wanted]


def make_folds(convs: Sequence[Conversation], seed: int, dev_fraction: float = 0.1) -> FoldPlan:
    """Two-fold conversation-level split with a shared dev set.

    Conversations are shuffled once. A dev set of ``round(dev_fraction * n)``
    conversations is held out and the remainder is halved into train and test
    (test gets the smaller half). Fold 2 swaps train and test and keeps the
    same dev set. The default fraction gives 90/20/90 for 200 conversations.
    """
    n = len(convs)
    if n < 2:
        raise ValueError(f"need at least 2 conversations to make folds, got {n}")
    ids = [c.id for c in convs]
    if len(set(ids)) != n:
        raise ValueError("conversation ids must be unique")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_dev = min(int(round(dev_fraction * n)), max(n - 2, 0))
    dev = shuffled[:n_dev]
    rest = shuffled[n_dev:]
    half = len(rest) // 2
    a, b = rest[:half], rest[half:]
    return FoldPlan([Fold(train=b, dev=dev, test=a), Fold(train=a, dev=dev, test=b)])


def subsample_labeled(
    convs: Sequence[Conversation], fraction: float, rng: np.random.Generator
) -> tuple[list[Conversation], list[Conversation]]:
    """Keep labels on ceil(fraction * n) conversations; strip them from the rest.

    Returns (labeled, now_unlabeled), each in original corpus order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"label fraction must be in (0, 1], got {fraction}")
    n = len(convs)
    keep = math.ceil(fraction * n - 1e-9)
    chosen = set(rng.permutation(n)[:keep].tolist())
    labeled = [c for i, c in enumerate(convs) if i in chosen]
    rest = [c.strip_labels() for i, c in enumerate(convs) if i not in chosen]
    return labeled, rest


def require_labels(convs: Sequence[Conversation]) -> None:
    missing = [c.id for c in convs if not c.is_labeled]
    if missing:
        raise LabelError(f"unlabeled sentences in conversations: {', '.join(missing)}")
