"""
Adversarial domain adaptation
=============================

A labeled source domain and a target domain whose surface words are half
replaced. Merging the two corpora is the baseline; the adversarial model adds
a domain discriminator behind a gradient-reversal layer.
"""

# %%
import numpy as np

from convact.adversary import lambda_schedule
from convact.synth import SynthProfile, synth_generate
from convact.training import Pools, TrainConfig, evaluate, fit

profile = SynthProfile(substitution_rate=0.5)
source, target = synth_generate(profile, 200, seed=0)
_, held_out = synth_generate(profile, 150, seed=1000)
dev, unlabeled, test = held_out[:25], held_out[25:75], held_out[75:]

print("source:", source[0].sentences[0].raw)
print("target:", target[0].sentences[0].raw)

# %%
# The adversarial weight ramps from 0 to nearly 1 over training.
for p in (0.0, 0.1, 0.25, 0.5, 1.0):
    print(f"  progress {p:.2f}  lambda {lambda_schedule(p):.4f}")

# %%
settings = dict(epochs=10, optimizer="adam", embed_dim=32, word_hidden=32, conv_hidden=32, disc_hidden=32)
pools = Pools(source=source, target_labeled=target[:50], dev=dev)
merged, _, _ = fit(pools, TrainConfig(regime="merge", **settings))

pools.target_unlabeled = [c.strip_labels() for c in unlabeled]
adapted, _, history = fit(pools, TrainConfig(regime="adapt-sup", **settings))
for h in history:
    print(f"epoch {h['epoch']:>2}: L_c {h['loss_c']:.3f}  L_d {h['loss_d']:.3f}  lambda {h['lambda']:.3f}")

# %%
for name, model in (("merge", merged), ("adapt-sup", adapted)):
    print(f"{name:>10}: target test macro-F1 {evaluate(model, test)[0].macro_f1:.4f}")

# %%
# How well can the trained discriminator still tell the domains apart?
# Close to 0.5 on both sides means the encoder features look alike.
d_src = np.mean([adapted.domain_probabilities(c).mean() for c in source[:30]])
d_tgt = np.mean([adapted.domain_probabilities(c).mean() for c in test[:30]])
print(f"mean P(source): source conversations {d_src:.3f}, target conversations {d_tgt:.3f}")
