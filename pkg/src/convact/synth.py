"""Synthetic two-domain conversation corpora with a controllable vocabulary shift.

Tags follow a Markov chain whose stationary distribution is the profile's tag
distribution. Each token is drawn from a tag-specific word list with
probability ``signal_rate`` and from a shared filler list otherwise. Target
conversations swap each token for a domain-specific counterpart with
probability ``substitution_rate``; labels keep the same meaning in both
domains.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .corpus import Comment, Conversation, make_sentence
from .output import NUM_TAGS, TAGS

# Forum-like act distribution (SU, R, Q, P, ST), normalized at use.
FORUM_TAG_DISTRIBUTION = (0.0771, 0.024, 0.1471, 0.0957, 0.6562)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class ProfileError(ValueError):
    pass


def pseudo_word(index: int, prefix: str = "") -> str:
    """Deterministic pronounceable letter-only word for an integer index."""
    syllables = []
    n = index
    while True:
        n, r = divmod(n, len(_CONSONANTS) * len(_VOWELS))
        syllables.append(_CONSONANTS[r // len(_VOWELS)] + _VOWELS[r % len(_VOWELS)])
        if n == 0:
            break
        n -= 1
    return prefix + "".join(reversed(syllables)) + ("" if len(syllables) > 1 else "n")


@dataclass
class SynthProfile:
    tag_distribution: list[float] = field(default_factory=lambda: list(FORUM_TAG_DISTRIBUTION))
    persistence: float = 0.3
    transitions: list[list[float]] | None = None
    vocab_per_tag: int = 20
    shared_vocab: int = 60
    signal_rate: float = 0.6
    substitution_rate: float = 0.0
    sentence_length: tuple[int, int] = (3, 8)
    conversation_length: tuple[int, int] = (4, 12)
    comment_length: tuple[int, int] = (1, 4)

    def __post_init__(self):
        pi = np.asarray(self.tag_distribution, dtype=float)
        if pi.shape != (NUM_TAGS,) or (pi < 0).any() or pi.sum() <= 0:
            raise ProfileError(f"tag_distribution needs {NUM_TAGS} non-negative weights")
        for name in ("persistence", "signal_rate", "substitution_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ProfileError(f"{name} must be a probability, got {v}")
        if self.transitions is not None:
            P = np.asarray(self.transitions, dtype=float)
            if P.shape != (NUM_TAGS, NUM_TAGS) or (P < 0).any() or not np.allclose(P.sum(1), 1.0):
                raise ProfileError("transitions must be a row-stochastic 5x5 matrix")
        for name in ("sentence_length", "conversation_length", "comment_length"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ProfileError(f"{name} must be a range 1 <= lo <= hi, got {(lo, hi)}")
            setattr(self, name, (int(lo), int(hi)))
        if self.vocab_per_tag < 1 or self.shared_vocab < 1:
            raise ProfileError("word list sizes must be >= 1")

    @property
    def stationary(self) -> np.ndarray:
        pi = np.asarray(self.tag_distribution, dtype=float)
        return pi / pi.sum()

    def transition_matrix(self) -> np.ndarray:
        """Row-stochastic tag transition matrix.

        Default: stay on the current tag with probability ``persistence``,
        otherwise redraw from the stationary distribution.
        """
        if self.transitions is not None:
            return np.asarray(self.transitions, dtype=float)
        pi = self.stationary
        return self.persistence * np.eye(NUM_TAGS) + (1.0 - self.persistence) * pi[None, :]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthProfile":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ProfileError(f"unknown profile keys: {unknown}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ProfileError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "SynthProfile":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ProfileError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ProfileError(f"{path}: profile must be a JSON object")
        return cls.from_dict(obj)


class _Lexicon:
    def __init__(self, profile: SynthProfile):
        n_tag = profile.vocab_per_tag
        self.tag_words = [
            [pseudo_word(k * n_tag + j) for j in range(n_tag)] for k in range(NUM_TAGS)
        ]
        base = NUM_TAGS * n_tag
        self.shared = [pseudo_word(base + j) for j in range(profile.shared_vocab)]
        all_words = [w for ws in self.tag_words for w in ws] + self.shared
        # 'q' never appears in base words, so counterparts cannot collide with them
        self.counterpart = {w: "q" + w for w in all_words}


def _tag_sequence(profile: SynthProfile, n: int, rng: np.random.Generator) -> list[int]:
    P = profile.transition_matrix()
    tags = [int(rng.choice(NUM_TAGS, p=profile.stationary))]
    for _ in range(n - 1):
        tags.append(int(rng.choice(NUM_TAGS, p=P[tags[-1]])))
    return tags


def _conversation(profile, lex, domain, cid, rng) -> Conversation:
    n = int(rng.integers(profile.conversation_length[0], profile.conversation_length[1] + 1))
    tags = _tag_sequence(profile, n, rng)
    sentences = []
    for tag in tags:
        m = int(rng.integers(profile.sentence_length[0], profile.sentence_length[1] + 1))
        words = []
        for _ in range(m):
            if rng.random() < profile.signal_rate:
                pool = lex.tag_words[tag]
            else:
                pool = lex.shared
            w = pool[int(rng.integers(len(pool)))]
            if domain == "target" and rng.random() < profile.substitution_rate:
                w = lex.counterpart[w]
            words.append(w)
        sentences.append(make_sentence(" ".join(words), TAGS[tag]))
    comments = []
    speakers = int(rng.integers(2, 5))
    i = 0
    while i < n:
        size = int(rng.integers(profile.comment_length[0], profile.comment_length[1] + 1))
        speaker = f"user{len(comments) % speakers + 1}"
        comments.append(Comment(speaker, tuple(sentences[i : i + size])))
        i += size
    return Conversation(cid, domain, tuple(comments))


def synth_generate(
    profile: SynthProfile, n_conversations: int, seed: int
) -> tuple[list[Conversation], list[Conversation]]:
    """Return (source, target) corpora with ``n_conversations`` each."""
    lex = _Lexicon(profile)
    src_rng, tgt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    source = [_conversation(profile, lex, "source", f"src-{i:05d}", src_rng) for i in range(n_conversations)]
    target = [_conversation(profile, lex, "target", f"tgt-{i:05d}", tgt_rng) for i in range(n_conversations)]
    return source, target
