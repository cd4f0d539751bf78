"""Sentence-level output layers: independent Softmax and a linear-chain CRF.

The CRF transition matrix has two extra virtual states, START (index K) and
STOP (index K+1). A gold sequence y_1..y_n is scored as

    A[START, y_1] + sum_i node[i, y_i] + sum_i A[y_i, y_{i+1}] + A[y_n, STOP]

Transitions into START and out of STOP are structurally impossible; those
entries of ``A`` are never read, receive no gradient, and are reported as
``-inf`` by :func:`transition_scores`.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .initializers import param_rng, xavier_init, zeros


class ActTag(enum.IntEnum):
    SU = 0
    R = 1
    Q = 2
    P = 3
    ST = 4


TAGS = tuple(t.name for t in ActTag)
NUM_TAGS = len(TAGS)
TAG_DESCRIPTIONS = {
    "SU": "Suggestion",
    "R": "Response",
    "Q": "Question",
    "P": "Polite",
    "ST": "Statement",
}


class LabelError(ValueError):
    pass


def tag_code(name: str) -> int:
    try:
        return ActTag[name].value
    except KeyError:
        raise LabelError(f"unknown act tag {name!r}; expected one of {TAGS}") from None


def _check_labels(y, k: int) -> np.ndarray:
    if any(v is None for v in y):
        raise LabelError("missing label in a labeled sequence")
    y = np.asarray(y, dtype=np.intp)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabelError(f"label outside 0..{k - 1}: {y.tolist()}")
    return y


# ----------------------------------------------------------------------------
# Softmax


def softmax_classify(U, W) -> Tensor:
    """p(y_i = k | X) = softmax_k(w_k . u_i), one row per sentence."""
    return ad.softmax(ad.matmul(U, ad.transpose(W)), axis=-1)


def cross_entropy_loss(probs, y, floor: float = 1e-300) -> Tensor:
    """Summed negative log-probability of the gold tags."""
    probs = ad.as_tensor(probs)
    y = _check_labels(y, probs.shape[-1])
    picked = probs[np.arange(len(y)), y]
    return ad.neg(ad.sum(ad.log(ad.clip(picked, floor, 1.0))))


def softmax_nll(logits, y) -> Tensor:
    """Cross-entropy from logits through log-softmax (numerically safer training path)."""
    logits = ad.as_tensor(logits)
    y = _check_labels(y, logits.shape[-1])
    logp = ad.log_softmax(logits, axis=-1)
    return ad.neg(ad.sum(logp[np.arange(len(y)), y]))


# ----------------------------------------------------------------------------
# CRF


def crf_transition_init(k: int = NUM_TAGS) -> Tensor:
    """Zero transitions, boundary-forbidden entries included (they are never read)."""
    return zeros((k + 2, k + 2), name="crf.A")


def transition_scores(A, k: int | None = None) -> np.ndarray:
    """Copy of ``A`` with the structurally forbidden entries set to -inf."""
    A = ad.as_tensor(A).data.copy()
    k = A.shape[0] - 2 if k is None else k
    A[:, k] = -np.inf
    A[k + 1, :] = -np.inf
    return A


def crf_log_partition(node_scores, A) -> Tensor:
    """log Z via the forward algorithm over START -> y_1 -> ... -> y_n -> STOP."""
    node = ad.as_tensor(node_scores)
    A = ad.as_tensor(A)
    n, k = node.shape
    if n < 1:
        raise ValueError("CRF needs at least one position")
    start, stop = k, k + 1
    trans = A[:k, :k]
    alpha = A[start, :k] + node[0]
    for i in range(1, n):
        alpha = ad.logsumexp(ad.reshape(alpha, (k, 1)) + trans, axis=0) + node[i]
    return ad.logsumexp(alpha + A[:k, stop])


def crf_sequence_score(node_scores, A, y) -> Tensor:
    node = ad.as_tensor(node_scores)
    A = ad.as_tensor(A)
    n, k = node.shape
    y = _check_labels(y, k)
    if len(y) != n:
        raise LabelError(f"label sequence has {len(y)} tags for {n} positions")
    prev = np.concatenate([[k], y])
    nxt = np.concatenate([y, [k + 1]])
    return ad.sum(node[np.arange(n), y]) + ad.sum(A[prev, nxt])


def crf_nll(node_scores, A, y) -> Tensor:
    """Negative log-likelihood log Z - score(y); never negative."""
    return crf_log_partition(node_scores, A) - crf_sequence_score(node_scores, A, y)


def viterbi_decode(node_scores, A) -> tuple[list[int], float]:
    """Best tag sequence and its score by max-product DP.

    Ties are resolved toward the lowest class code (``np.argmax`` keeps the
    first maximum).
    """
    node = np.asarray(ad.as_tensor(node_scores).data)
    A = np.asarray(ad.as_tensor(A).data)
    n, k = node.shape
    if n < 1:
        raise ValueError("Viterbi needs at least one position")
    trans = A[:k, :k]
    delta = A[k, :k] + node[0]
    back = np.zeros((n, k), dtype=np.intp)
    for i in range(1, n):
        cand = delta[:, None] + trans
        back[i] = np.argmax(cand, axis=0)
        delta = cand[back[i], np.arange(k)] + node[i]
    final = delta + A[:k, k + 1]
    best = int(np.argmax(final))
    score = float(final[best])
    path = [best]
    for i in range(n - 1, 0, -1):
        best = int(back[i, best])
        path.append(best)
    path.reverse()
    return path, score


def brute_force_sequences(node_scores, A):
    """Yield (sequence, score) for all K^n tag sequences; exponential, for oracles only."""
    node = np.asarray(ad.as_tensor(node_scores).data)
    A = np.asarray(ad.as_tensor(A).data)
    n, k = node.shape
    for seq in itertools.product(range(k), repeat=n):
        s = A[k, seq[0]] + A[seq[-1], k + 1]
        s += sum(node[i, seq[i]] for i in range(n))
        s += sum(A[seq[i], seq[i + 1]] for i in range(n - 1))
        yield list(seq), float(s)


# ----------------------------------------------------------------------------
# parameter containers


@dataclass
class SoftmaxOutput:
    W: Tensor  # [K x |u|]

    kind = "softmax"

    @classmethod
    def init(cls, input_dim: int, seed: int, k: int = NUM_TAGS) -> "SoftmaxOutput":
        return cls(xavier_init((k, input_dim), param_rng(seed, "output.W"), name="output.W"))

    def tensors(self) -> dict[str, Tensor]:
        return {"output.W": self.W}

    def loss(self, U, y) -> Tensor:
        return softmax_nll(ad.matmul(U, ad.transpose(self.W)), y)

    def decode(self, U) -> list[int]:
        logits = ad.as_tensor(U).data @ self.W.data.T
        return [int(v) for v in np.argmax(logits, axis=1)]


@dataclass
class CrfOutput:
    V: Tensor  # [K x |u|]
    A: Tensor  # [(K+2) x (K+2)]

    kind = "crf"

    @classmethod
    def init(cls, input_dim: int, seed: int, k: int = NUM_TAGS) -> "CrfOutput":
        V = xavier_init((k, input_dim), param_rng(seed, "output.V"), name="output.V")
        return cls(V, crf_transition_init(k))

    def tensors(self) -> dict[str, Tensor]:
        return {"output.V": self.V, "crf.A": self.A}

    def node_scores(self, U) -> Tensor:
        return ad.matmul(U, ad.transpose(self.V))

    def loss(self, U, y) -> Tensor:
        return crf_nll(self.node_scores(U), self.A, y)

    def decode(self, U) -> list[int]:
        node = ad.as_tensor(U).data @ self.V.data.T
        return viterbi_decode(node, self.A.data)[0]
