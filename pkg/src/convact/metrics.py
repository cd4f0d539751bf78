"""Accuracy, per-class precision/recall/F1, macro-F1, confusion matrices, run aggregation."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .output import NUM_TAGS, TAGS


def confusion(gold: Sequence[Sequence[int]], pred: Sequence[Sequence[int]], k: int = NUM_TAGS) -> np.ndarray:
    """K x K counts with rows = gold tags and columns = predicted tags.

    ``gold`` and ``pred`` are aligned lists of label sequences (one per
    conversation) or flat label lists.
    """
    g = _flatten(gold)
    p = _flatten(pred)
    if len(g) != len(p):
        raise ValueError(f"gold has {len(g)} labels but predictions have {len(p)}")
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sequences vs {len(pred)} predicted")
    for a, b in zip(gold, pred):
        if np.ndim(a) and len(a) != len(b):
            raise ValueError("gold and predicted sequences differ in length")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(g, dtype=np.intp), np.asarray(p, dtype=np.intp)), 1)
    return cm


def _flatten(seqs) -> list[int]:
    out = []
    for s in seqs:
        if np.ndim(s):
            out.extend(int(v) for v in s)
        else:
            out.append(int(s))
    return out


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


def per_class_prf(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall and F1 per class; any 0/0 is taken as 0."""
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0).astype(float)
    gold_tot = cm.sum(axis=1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        rec = np.where(gold_tot > 0, tp / gold_tot, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    return prec, rec, f1


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1 over all K classes (absent classes count as 0)."""
    if cm.sum() == 0:
        warnings.warn("macro-F1 of an empty evaluation set is defined as 0", stacklevel=2)
        return 0.0
    return float(per_class_prf(cm)[2].mean())


@dataclass
class RunReport:
    accuracy: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    n_sentences: int = 0
    n_runs: int = 1
    std: dict = field(default_factory=dict)
    tags: list[str] = field(default_factory=lambda: list(TAGS))

    @classmethod
    def from_confusion(cls, cm: np.ndarray) -> "RunReport":
        p, r, f = per_class_prf(cm)
        return cls(
            accuracy=accuracy(cm),
            macro_f1=macro_f1(cm),
            precision=p.tolist(),
            recall=r.tolist(),
            f1=f.tolist(),
            n_sentences=int(cm.sum()),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_text(self) -> str:
        def pm(key, value, idx=None):
            s = self.std.get(key)
            if s is not None and idx is not None:
                s = s[idx]
            return f"{value:.4f}" + (f" +/- {s:.4f}" if self.n_runs > 1 and s is not None else "")

        lines = [f"{'tag':<6}{'precision':>22}{'recall':>22}{'f1':>22}"]
        for i, tag in enumerate(self.tags):
            lines.append(
                f"{tag:<6}{pm('precision', self.precision[i], i):>22}"
                f"{pm('recall', self.recall[i], i):>22}{pm('f1', self.f1[i], i):>22}"
            )
        lines.append(f"accuracy  {pm('accuracy', self.accuracy)}")
        lines.append(f"macro-F1  {pm('macro_f1', self.macro_f1)}")
        lines.append(f"runs      {self.n_runs}")
        return "\n".join(lines) + "\n"


def aggregate(reports: Sequence[RunReport]) -> RunReport:
    """Per-metric mean and population standard deviation across runs."""
    if not reports:
        raise ValueError("need at least one report to aggregate")

    def stats(values):
        arr = np.asarray(values, dtype=float)
        return arr.mean(axis=0), arr.std(axis=0)

    acc, acc_s = stats([r.accuracy for r in reports])
    mf, mf_s = stats([r.macro_f1 for r in reports])
    p, p_s = stats([r.precision for r in reports])
    rc, rc_s = stats([r.recall for r in reports])
    f, f_s = stats([r.f1 for r in reports])
    return RunReport(
        accuracy=float(acc),
        macro_f1=float(mf),
        precision=p.tolist(),
        recall=rc.tolist(),
        f1=f.tolist(),
        n_sentences=int(sum(r.n_sentences for r in reports)),
        n_runs=int(sum(r.n_runs for r in reports)),
        std={
            "accuracy": float(acc_s),
            "macro_f1": float(mf_s),
            "precision": p_s.tolist(),
            "recall": rc_s.tolist(),
            "f1": f_s.tolist(),
        },
        tags=list(reports[0].tags),
    )


def confusion_csv(cm: np.ndarray, tags: Sequence[str] = TAGS) -> str:
    """CSV with a header of predicted tags; each row starts with the gold tag."""
    lines = ["gold/pred," + ",".join(tags)]
    for tag, row in zip(tags, cm):
        lines.append(tag + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"
