"""
Gradients and the CRF layer
===========================

Everything in the tagger is differentiated by a small tape. This script checks
a few gradients by finite differences, then takes a CRF apart on an
instance small enough to enumerate.
"""

# %%
# A tape records every operation inside its ``with`` block; ``backward``
# walks it in reverse.
import numpy as np

from convact import autodiff as ad
from convact.autodiff import Tape, Tensor

x = Tensor(np.array([[0.5, -1.0], [2.0, 0.1]]), requires_grad=True)
with Tape() as tape:
    y = ad.sum(ad.tanh(ad.matmul(x, x)))
tape.backward(y)
print("loss", float(y.data))
print("d loss / dx\n", x.grad)

# %%
# Central differences agree to well under 1e-4 relative error.
err = ad.finite_diff_check(lambda: ad.sum(ad.tanh(ad.matmul(x, x))), x)
print(f"relative error vs finite differences: {err:.2e}")

# %%
# Gradient reversal: identity on the way forward, times -lambda on the way back.
x.grad = None
with Tape() as tape:
    out = ad.sum(ad.grad_reverse(x, 0.5) * 3.0)
tape.backward(out)
print("reversed gradient (expect -1.5 everywhere)\n", x.grad)

# %%
# A three-sentence CRF instance over the five tags. 5**3 = 125 paths is small
# enough to list them all and compare against the forward algorithm.
from convact.output import TAGS, crf_log_partition, crf_nll, viterbi_decode
from convact.verify import enumerate_scores

rng = np.random.default_rng(0)
node = rng.normal(size=(3, len(TAGS)))
A = rng.normal(scale=0.7, size=(len(TAGS) + 2, len(TAGS) + 2))

seqs, scores = enumerate_scores(node, A)
brute = np.log(np.exp(scores).sum())
print(f"log Z: forward {float(crf_log_partition(node, A).data):.12f}  enumeration {brute:.12f}")

path, best = viterbi_decode(node, A)
print("viterbi path", [TAGS[t] for t in path], f"score {best:.4f}")
print("brute force ", [TAGS[t] for t in seqs[np.argmax(scores)]], f"score {scores.max():.4f}")

# %%
# Probabilities of all paths sum to one.
total = sum(np.exp(-float(crf_nll(node, A, s).data)) for s in seqs)
print(f"sum of path probabilities: {total:.12f}")

# %%
# The bundled self-check runs the same comparisons at scale
# (also available as ``convact verify``).
from convact.verify import report, timed_suite

print(report(*timed_suite("crf")))
