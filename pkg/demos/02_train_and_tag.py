"""
Training a hierarchical tagger
==============================

Generate a small synthetic forum corpus, train the H-LSTM tagger on it,
score it, and tag a conversation.
"""

# %%
import numpy as np

from convact.metrics import confusion_csv
from convact.output import TAGS
from convact.synth import SynthProfile, synth_generate
from convact.training import Pools, TrainConfig, evaluate, fit

_, convs = synth_generate(SynthProfile(), 120, seed=0)
train, dev, test = convs[:80], convs[80:100], convs[100:]
print(len(train), "train conversations, e.g.")
for s in train[0].sentences[:4]:
    print(f"  [{s.act:>2}] {s.raw}")

# %%
# Tags are imbalanced: statements dominate, as in real forums.
acts = [s.act for c in train for s in c.sentences]
print({t: round(acts.count(t) / len(acts), 3) for t in TAGS})

# %%
# A reduced model keeps this quick. The defaults (300-d embeddings, 100-d
# LSTMs) work the same way, only slower.
config = TrainConfig(regime="indomain", epochs=25, embed_dim=32, word_hidden=32, conv_hidden=32, seed=1)
model, ckpt, history = fit(Pools(target_labeled=train, dev=dev), config)
for h in history:
    print(f"epoch {h['epoch']}: loss {h['loss_c']:.3f}  dev macro-F1 {h['dev_macro_f1']:.3f}")

# %%
# The model kept the weights from its best dev epoch.
report, cm, _ = evaluate(model, test)
print(report.to_text())
print(confusion_csv(cm))

# %%
# Swap in the CRF output layer, which scores whole tag sequences.
crf_model, _, _ = fit(Pools(target_labeled=train, dev=dev), config.replace(output="crf"))
print("CRF test macro-F1:", round(evaluate(crf_model, test)[0].macro_f1, 4))

# %%
# Tagging an unlabeled conversation.
conv = test[3].strip_labels()
print("pred gold")
for s, gold, tag in zip(conv.sentences, test[3].sentences, model.predict(conv)):
    print(f"  {TAGS[tag]:>2}  {gold.act:>2}  {s.raw}")

# %%
# Checkpoints are a JSON header plus raw float64 tensors and reload bit-exactly.
import tempfile
from pathlib import Path

from convact.checkpoint import load_model

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "tagger.ckpt"
    ckpt.save(path)
    again = load_model(path)
    same = all(np.array_equal(again.parameters()[k].data, t.data) for k, t in model.parameters().items())
    print(f"{path.stat().st_size} bytes, identical after reload: {same}")
