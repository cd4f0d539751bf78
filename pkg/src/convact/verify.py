"""Self-checks run by ``convact verify``: finite-difference gradients, CRF enumeration, schedules.

Each suite returns a list of :class:`CaseResult`. A failing gradient or CRF case
is re-run on smaller problem sizes and the smallest size that still fails is
reported.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .adversary import DiscriminatorParams, adversarial_loss, domain_bce_loss, discriminate, lambda_schedule
from .autodiff import Tensor
from .encoder import EncoderConfig, HierEncoder, LstmCellParams, lstm_cell_step, lstm_layer
from .optim import dynamic_lr
from .output import NUM_TAGS, CrfOutput, SoftmaxOutput, crf_log_partition, crf_nll, softmax_nll, viterbi_decode

GRAD_TOL = 1e-4
CRF_TOL = 1e-8
ZERO_TRANS_TOL = 1e-9
SUITES = ("grad", "crf", "schedule")


@dataclass
class CaseResult:
    suite: str
    name: str
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{status}] {self.suite}/{self.name}: max error {self.max_error:.3e} (tol {self.tolerance:.0e}){extra}"


# ----------------------------------------------------------------------------
# gradient suite


def _rand(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def _op_cases() -> dict[str, Callable[[np.random.Generator, int, int], float]]:
    """name -> check(rng, n, m) returning the max relative finite-difference error."""

    def unary(fn, positive=False):
        def check(rng, n, m):
            x = _rand(rng, n, m)
            if positive:
                x.data = np.abs(x.data) + 0.5
            w = rng.normal(size=(n, m))
            return ad.finite_diff_check(lambda: ad.sum(fn(x) * w), x)
        return check

    def binary(fn):
        def check(rng, n, m):
            a, b = _rand(rng, n, m), _rand(rng, n, m)
            w = rng.normal(size=(n, m))
            return ad.finite_diff_check(lambda: ad.sum(fn(a, b) * w), [a, b])
        return check

    def relu_check(rng, n, m):
        x = _rand(rng, n, m)
        # keep coordinates away from the kink so central differences are valid
        x.data = np.where(np.abs(x.data) < 0.1, 0.5, x.data)
        w = rng.normal(size=(n, m))
        return ad.finite_diff_check(lambda: ad.sum(ad.relu(x) * w), x)

    def clip_check(rng, n, m):
        x = _rand(rng, n, m)
        x.data = np.where(np.abs(np.abs(x.data) - 0.5) < 0.1, 0.2, x.data)
        w = rng.normal(size=(n, m))
        return ad.finite_diff_check(lambda: ad.sum(ad.clip(x, -0.5, 0.5) * w), x)

    def matmul_check(rng, n, m):
        a, b = _rand(rng, n, m), _rand(rng, m, n + 1)
        w = rng.normal(size=(n, n + 1))
        return ad.finite_diff_check(lambda: ad.sum(ad.matmul(a, b) * w), [a, b])

    def broadcast_check(rng, n, m):
        a, b = _rand(rng, n, m), _rand(rng, m)
        w = rng.normal(size=(n, m))
        return ad.finite_diff_check(lambda: ad.sum((a * b + b) * w), [a, b])

    def reductions(rng, n, m):
        x = _rand(rng, n, m)
        return ad.finite_diff_check(
            lambda: ad.mean(x * x) + ad.sum(ad.logsumexp(x, axis=1)) + ad.logsumexp(x), x
        )

    def log_softmax_check(rng, n, m):
        x = _rand(rng, n, m)
        w = rng.normal(size=(n, m))
        return ad.finite_diff_check(lambda: ad.sum(ad.log_softmax(x, axis=1) * w), x)

    def softmax_check(rng, n, m):
        x = _rand(rng, n, m)
        w = rng.normal(size=(n, m))
        return ad.finite_diff_check(lambda: ad.sum(ad.softmax(x, axis=1) * w), x)

    def structural(rng, n, m):
        a, b = _rand(rng, n, m), _rand(rng, n, m)
        w = rng.normal(size=(2 * n, m))
        idx = rng.integers(n, size=n + 1)
        v = rng.normal(size=(m, n))
        return ad.finite_diff_check(
            lambda: ad.sum(ad.concat([a, b], axis=0) * w)
            + ad.sum(ad.transpose(ad.reshape(b, (n * m, 1))) * v.reshape(1, -1))
            + ad.sum(ad.transpose(a) * v)
            + ad.sum(ad.gather_rows(a, idx) * ad.stack([b[int(i)] for i in idx], axis=0))
            + ad.sum(ad.take(a, (slice(None), 0))),
            [a, b],
        )

    def dropout_check(rng, n, m):
        x = _rand(rng, n, m)
        w = rng.normal(size=(n, m))
        seed = int(rng.integers(1 << 30))
        return ad.finite_diff_check(
            lambda: ad.sum(ad.dropout(x, 0.5, True, np.random.default_rng(seed)) * w), x
        )

    def reversal_check(rng, n, m):
        # grad_reverse is a deliberate gradient flip; compare against -lam * identity
        x = _rand(rng, n, m)
        w = rng.normal(size=(n, m))
        lam = float(rng.uniform(0.1, 1.0))
        with ad.Tape() as tape:
            loss = ad.sum(ad.grad_reverse(x, lam) * w)
        tape.backward(loss)
        err = float(np.max(np.abs(x.grad - (-lam * w))))
        x.grad = None
        return err

    def lstm_step_check(rng, n, m):
        p = LstmCellParams.init(m, 3, int(rng.integers(1 << 30)), "chk")
        x = _rand(rng, n, m)
        h0, c0 = _rand(rng, n, 3), _rand(rng, n, 3)
        return ad.finite_diff_check(
            lambda: ad.sum(ad.tanh(lstm_cell_step(p, x, (h0, c0))[0]) + lstm_cell_step(p, x, (h0, c0))[1]),
            [x, h0, c0, p.w_ih, p.w_hh, p.b],
        )

    def lstm_layer_check(rng, n, m):
        lengths = rng.integers(1, m + 1, size=n)
        x = _rand(rng, int(lengths.sum()), 3)
        p = LstmCellParams.init(3, 2, int(rng.integers(1 << 30)), "chk")
        w = rng.normal(size=(int(lengths.sum()), 2))
        return ad.finite_diff_check(
            lambda: ad.sum(lstm_layer(x, lengths, p) * w) + ad.sum(lstm_layer(x, lengths, p, reverse=True) * w),
            [x, p.w_ih, p.w_hh, p.b],
        )

    def bce_check(rng, n, m):
        u = _rand(rng, n, m)
        disc = DiscriminatorParams.init(m, 4, int(rng.integers(1 << 30)))
        disc.b_h.data = np.full(4, 0.3)
        d = rng.integers(0, 2, size=n).astype(float)
        ts = [u, *disc.tensors().values()]
        return ad.finite_diff_check(lambda: domain_bce_loss(discriminate(u, disc), d), ts)

    def adversarial_check(rng, n, m):
        # with lam = -1 the reversal is an identity in backward as well, so FD applies
        u = _rand(rng, n, m)
        disc = DiscriminatorParams.init(m, 4, int(rng.integers(1 << 30)))
        d = rng.integers(0, 2, size=n).astype(float)
        return ad.finite_diff_check(lambda: adversarial_loss(u, disc, d, -1.0), [u, disc.U_d, disc.w_d])

    def softmax_nll_check(rng, n, m):
        x = _rand(rng, n, NUM_TAGS)
        y = rng.integers(NUM_TAGS, size=n)
        return ad.finite_diff_check(lambda: softmax_nll(x, y), x)

    def crf_check(rng, n, m):
        node = _rand(rng, n, NUM_TAGS)
        A = _rand(rng, NUM_TAGS + 2, NUM_TAGS + 2, scale=0.5)
        y = rng.integers(NUM_TAGS, size=n)
        return ad.finite_diff_check(lambda: crf_nll(node, A, y), [node, A])

    return {
        "add": binary(ad.add),
        "sub": binary(ad.sub),
        "mul": binary(ad.mul),
        "neg": unary(ad.neg),
        "scale": unary(lambda x: ad.scale(x, -1.7)),
        "broadcast": broadcast_check,
        "matmul": matmul_check,
        "sigmoid": unary(ad.sigmoid),
        "tanh": unary(ad.tanh),
        "relu": relu_check,
        "clip": clip_check,
        "exp": unary(ad.exp),
        "log": unary(ad.log, positive=True),
        "softmax": softmax_check,
        "log_softmax": log_softmax_check,
        "reductions": reductions,
        "structural": structural,
        "dropout": dropout_check,
        "grad_reverse": reversal_check,
        "lstm_cell": lstm_step_check,
        "lstm_layer": lstm_layer_check,
        "discriminator_bce": bce_check,
        "adversarial_loss": adversarial_check,
        "softmax_nll": softmax_nll_check,
        "crf_nll": crf_check,
    }


def full_model_loss_error(output: str, seed: int, n: int, m: int) -> float:
    """Finite-difference error of the complete hierarchical loss on a tiny random conversation."""
    rng = np.random.default_rng(seed)
    dim = 3
    cfg = EncoderConfig(word_hidden=2, conv_hidden=2, variant="H-LSTM", dropout_rate=0.0)
    enc = HierEncoder.init(dim, cfg, seed)
    head = (CrfOutput if output == "crf" else SoftmaxOutput).init(cfg.output_dim, seed)
    if output == "crf":
        head.A.data = rng.normal(scale=0.5, size=head.A.shape)
    lengths = rng.integers(1, m + 1, size=n)
    words = _rand(rng, int(lengths.sum()), dim)
    y = rng.integers(NUM_TAGS, size=n)
    ts = [words, *enc.tensors().values(), *head.tensors().values()]
    return ad.finite_diff_check(lambda: head.loss(enc.encode(words, lengths), y), ts)


def _fails(err: float, tol: float) -> bool:
    """A zero tolerance means exact equality; otherwise the error must stay below tol."""
    return not (err == 0.0 if tol == 0.0 else err < tol)


def _minimize(check: Callable[[int, int], float], tol: float, n: int, m: int) -> tuple[int, int]:
    """Smallest (n, m), by n then m, at which ``check`` still exceeds ``tol``."""
    for nn, mm in sorted(itertools.product(range(1, n + 1), range(1, m + 1))):
        if _fails(check(nn, mm), tol):
            return nn, mm
    return n, m


def grad_suite(seeds: int = 5, n: int = 3, m: int = 4) -> list[CaseResult]:
    results = []
    cases = {name: fn for name, fn in _op_cases().items()}
    for name, fn in cases.items():
        tol = 0.0 if name == "grad_reverse" else GRAD_TOL
        results.append(_run_seeded("grad", name, lambda s, nn, mm, fn=fn: fn(np.random.default_rng(s), nn, mm),
                                   tol, seeds, n, m))
    for output in ("softmax", "crf"):
        name = "H-LSTM" if output == "softmax" else "H-LSTM-CRF"
        results.append(_run_seeded("grad", name, lambda s, nn, mm, o=output: full_model_loss_error(o, s, nn, mm),
                                   GRAD_TOL, seeds, n, m))
    return results


def _run_seeded(suite, name, check, tol, seeds, n, m) -> CaseResult:
    worst = 0.0
    for s in range(seeds):
        err = check(s, n, m)
        worst = max(worst, err)
        if _fails(err, tol):
            nn, mm = _minimize(lambda a, b: check(s, a, b), tol, n, m)
            return CaseResult(suite, name, err, tol, False, f"seed {s}; smallest failing n={nn}, m={mm}")
    return CaseResult(suite, name, worst, tol, True, f"{seeds} seeds, n<={n}, m<={m}")


# ----------------------------------------------------------------------------
# CRF suite


def enumerate_scores(node: np.ndarray, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All K^n tag sequences (lexicographic) and their scores, vectorized."""
    n, k = node.shape
    seqs = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.intp).reshape(-1, n)
    scores = node[np.arange(n), seqs].sum(axis=1) + A[k, seqs[:, 0]] + A[seqs[:, -1], k + 1]
    if n > 1:
        scores = scores + A[seqs[:, :-1], seqs[:, 1:]].sum(axis=1)
    return seqs, scores


def crf_instance_errors(rng: np.random.Generator, n: int, k: int = NUM_TAGS) -> dict[str, float]:
    node = rng.normal(size=(n, k))
    A = rng.normal(scale=0.7, size=(k + 2, k + 2))
    seqs, scores = enumerate_scores(node, A)
    hi = scores.max()
    logz_brute = hi + math.log(np.exp(scores - hi).sum())
    logz = float(crf_log_partition(node, A).data)
    path, vscore = viterbi_decode(node, A)
    best = seqs[int(np.argmax(scores))].tolist()
    out = {
        "log_partition": abs(logz - logz_brute),
        "viterbi_path": 0.0 if path == best else 1.0,
        "viterbi_score": abs(vscore - hi),
    }
    if n <= 4:
        total = sum(math.exp(-float(crf_nll(node, A, s).data)) for s in seqs)
        out["normalization"] = abs(total - 1.0)
    zero = np.zeros_like(A)
    y = rng.integers(k, size=n)
    out["zero_transition"] = abs(float(crf_nll(node, zero, y).data) - float(softmax_nll(node, y).data))
    return out


def crf_suite(instances: int = 100, max_n: int = 6, seed: int = 0) -> list[CaseResult]:
    tols = {
        "log_partition": CRF_TOL,
        "viterbi_path": 0.5,
        "viterbi_score": CRF_TOL,
        "normalization": CRF_TOL,
        "zero_transition": ZERO_TRANS_TOL,
    }
    worst = {key: 0.0 for key in tols}
    failed: dict[str, str] = {}
    rng = np.random.default_rng(seed)
    for i in range(instances):
        n = int(rng.integers(1, max_n + 1))
        inst_seed = int(rng.integers(1 << 31))
        errs = crf_instance_errors(np.random.default_rng(inst_seed), n)
        for key, err in errs.items():
            worst[key] = max(worst[key], err)
            if err >= tols[key] and key not in failed:
                smallest = next(
                    (nn for nn in range(1, n + 1)
                     if crf_instance_errors(np.random.default_rng(inst_seed), nn).get(key, 0.0) >= tols[key]),
                    n,
                )
                failed[key] = f"instance {i}; smallest failing n={smallest}"
    results = []
    for key, tol in tols.items():
        shown_tol = 0.0 if key == "viterbi_path" else tol
        detail = failed.get(key, f"{instances} instances, n<={max_n}")
        if key == "viterbi_path":
            detail += "; mismatches must be 0"
        results.append(CaseResult("crf", key, worst[key], shown_tol, key not in failed, detail))
    return results


# ----------------------------------------------------------------------------
# schedule suite


def schedule_suite() -> list[CaseResult]:
    results = []
    lam0 = lambda_schedule(0.0)
    results.append(CaseResult("schedule", "lambda(0)=0", abs(lam0), 0.0, lam0 == 0.0, "exact"))
    closed = 2.0 / (1.0 + math.exp(-10.0)) - 1.0
    err1 = abs(lambda_schedule(1.0) - closed)
    results.append(CaseResult("schedule", "lambda(1)", err1, 1e-12, err1 < 1e-12, f"value {lambda_schedule(1.0):.6f}"))
    grid = np.linspace(0.0, 1.0, 1001)
    lam = np.array([lambda_schedule(p) for p in grid])
    drops = float(np.max(np.maximum(lam[:-1] - lam[1:], 0.0)))
    results.append(CaseResult("schedule", "lambda monotone", drops, 0.0, bool(np.all(np.diff(lam) > 0)), "1001-point grid"))
    lr = np.array([dynamic_lr(p, 0.01) for p in grid])
    lr_ok = lr[0] == 0.01 and bool(np.all(np.diff(lr) < 0))
    err_end = abs(lr[-1] - 0.01 / 11**0.75)
    results.append(CaseResult("schedule", "dynamic lr", err_end, 1e-15, lr_ok and err_end < 1e-15,
                              "lr(0)=lr0, strictly decreasing"))
    return results


def run_suite(name: str) -> list[CaseResult]:
    if name == "all":
        return [r for s in SUITES for r in run_suite(s)]
    if name == "grad":
        return grad_suite()
    if name == "crf":
        return crf_suite()
    if name == "schedule":
        return schedule_suite()
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES + ('all',)}")


def report(results: list[CaseResult], elapsed: float | None = None) -> str:
    lines = [r.line() for r in results]
    n_fail = sum(not r.passed for r in results)
    tail = f"{len(results) - n_fail}/{len(results)} passed"
    if elapsed is not None:
        tail += f" in {elapsed:.1f}s"
    lines.append(tail)
    return "\n".join(lines) + "\n"


def timed_suite(name: str) -> tuple[list[CaseResult], float]:
    t0 = time.perf_counter()
    res = run_suite(name)
    return res, time.perf_counter() - t0
