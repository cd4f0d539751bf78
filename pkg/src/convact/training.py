"""Training regimes: in-domain, transfer, merge, fine-tune and adversarial adaptation.

One optimizer step processes a batch of whole conversations. The loss is

    mean over labeled conversations of L_c  +  L_d(grad_reverse(U, lambda))

where L_d (adaptation regimes only) is the discriminator cross-entropy averaged
over every sentence in the batch. After back-propagation the discriminator's
gradients are multiplied by lambda, so the discriminator ascends lambda * L_d
while the encoder receives -lambda times the same signal.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .adversary import lambda_schedule, scale_discriminator_grads
from .corpus import Conversation, chunk_conversation, chunk_corpus, require_labels, subsample_labeled
from .embeddings import build_vocab, load_pretrained
from .initializers import param_rng
from .metrics import RunReport, confusion
from .model import Featurized, ModelConfig, SpeechActTagger
from .optim import OptimizerState, adam_update, clip_grad_norm, dynamic_lr, sgd_momentum_update

log = logging.getLogger(__name__)

REGIMES = ("indomain", "transfer", "merge", "finetune", "adapt-unsup", "adapt-semisup", "adapt-sup")
ADAPT_REGIMES = ("adapt-unsup", "adapt-semisup", "adapt-sup")
ROLES = ("source", "target_labeled", "target_unlabeled", "merged")


class ConfigError(ValueError):
    pass


class RegimeError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    regime: str = "indomain"
    epochs: int = 30
    batch_size: int = 5
    optimizer: str = "auto"
    adam_lr: float = 0.001
    sgd_lr0: float = 0.01
    momentum: float = 0.9
    dropout_rate: float = 0.5
    seed: int = 0
    target_label_fraction: float = 1.0
    clip_norm: float = 5.0
    patience: int = 5
    max_chunk: int = 100
    min_count: int = 1
    embed_dim: int = 300
    word_hidden: int = 100
    conv_hidden: int = 100
    variant: str = "H-LSTM"
    depth: int = 2
    output: str = "softmax"
    disc_hidden: int = 100
    lambda_override: float | None = None
    freeze_embeddings: bool = False
    pretrained_embeddings: str | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.optimizer not in ("auto", "adam", "sgd"):
            raise ConfigError(f"optimizer must be auto, adam or sgd, got {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.regime in ADAPT_REGIMES and self.batch_size < 2:
            raise ConfigError("adaptation needs batch_size >= 2 (source and target halves)")
        if self.regime in ("adapt-semisup", "adapt-sup") and self.batch_size < 3:
            raise ConfigError("semi-supervised/supervised adaptation needs batch_size >= 3")
        if not 0.0 < self.target_label_fraction <= 1.0:
            raise ConfigError("target_label_fraction must be in (0, 1]")
        if self.regime == "adapt-sup" and self.target_label_fraction != 1.0:
            raise ConfigError("adapt-sup uses all target labels; use adapt-semisup for a fraction")
        if self.patience < 1 or self.max_chunk < 1:
            raise ConfigError("patience and max_chunk must be >= 1")
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def resolved_optimizer(self) -> str:
        if self.optimizer != "auto":
            return self.optimizer
        return "sgd" if self.regime in ADAPT_REGIMES else "adam"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            word_hidden=self.word_hidden,
            conv_hidden=self.conv_hidden,
            variant=self.variant,
            depth=self.depth,
            dropout_rate=self.dropout_rate,
            output=self.output,
            disc_hidden=self.disc_hidden,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Pools:
    """Conversation pools. In-domain training reads ``target_labeled``."""

    source: list[Conversation] = field(default_factory=list)
    target_labeled: list[Conversation] = field(default_factory=list)
    target_unlabeled: list[Conversation] = field(default_factory=list)
    dev: list[Conversation] = field(default_factory=list)
    source_dev: list[Conversation] = field(default_factory=list)

    def training_conversations(self) -> list[Conversation]:
        return self.source + self.target_labeled + self.target_unlabeled


# ----------------------------------------------------------------------------
# batch composition


def batch_quotas(regime: str, b: int) -> dict[str, int]:
    """Conversations drawn from each pool role per batch."""
    if regime in ("indomain",):
        return {"target_labeled": b}
    if regime in ("transfer",):
        return {"source": b}
    if regime == "merge":
        return {"merged": b}
    if regime == "finetune":
        raise RegimeError("fine-tune has two phases; ask for 'transfer' then 'indomain' quotas")
    src = math.ceil(b / 2)
    rest = b - src
    if regime == "adapt-unsup":
        return {"source": src, "target_unlabeled": rest}
    tl = math.ceil(rest / 2)
    return {"source": src, "target_labeled": tl, "target_unlabeled": rest - tl}


def regime_pools(pools: Pools, regime: str) -> dict[str, list[Conversation]]:
    """Role -> conversations for one regime; raises RegimeError on a missing pool."""
    if regime == "indomain":
        out = {"target_labeled": pools.target_labeled}
    elif regime == "transfer":
        out = {"source": pools.source}
    elif regime == "merge":
        out = {"merged": pools.source + pools.target_labeled}
    elif regime == "adapt-unsup":
        out = {"source": pools.source, "target_unlabeled": pools.target_unlabeled}
    elif regime in ("adapt-semisup", "adapt-sup"):
        unl = pools.target_unlabeled or [c.strip_labels() for c in pools.target_labeled]
        out = {"source": pools.source, "target_labeled": pools.target_labeled, "target_unlabeled": unl}
    else:
        raise RegimeError(f"no single pool layout for regime {regime!r}")
    empty = [role for role, convs in out.items() if not convs]
    if empty:
        raise RegimeError(f"regime {regime} needs non-empty pools: {', '.join(empty)}")
    return out


@dataclass
class Batch:
    items: list[tuple[str, Conversation]]

    def count(self, role: str) -> int:
        return sum(1 for r, _ in self.items if r == role)


def sample_batch(pools: Pools, regime: str, b: int, rng: np.random.Generator) -> Batch:
    """Draw one batch: each pool role fills its quota without replacement when it can."""
    by_role = regime_pools(pools, regime)
    items = []
    for role, quota in batch_quotas(regime, b).items():
        convs = by_role[role]
        idx = rng.choice(len(convs), size=quota, replace=quota > len(convs))
        items.extend((role, convs[i]) for i in idx)
    return Batch(items)


class EpochSampler:
    """Deterministic epoch-structured sampler over several pools.

    The pool needing the most batches to be covered once drives the epoch and
    is visited without replacement in a fresh random order each epoch; the
    other pools are sampled with replacement. Each role has its own random
    stream, so adding a pool never changes the draws of another.
    """

    def __init__(self, by_role: dict[str, list], quotas: dict[str, int], seed: int):
        self.by_role = by_role
        self.quotas = {r: q for r, q in quotas.items() if q > 0}
        self.rngs = {r: param_rng(seed, "sampler." + r) for r in self.quotas}
        steps = {r: math.ceil(len(by_role[r]) / q) for r, q in self.quotas.items()}
        self.driver = max(self.quotas, key=lambda r: (steps[r], -ROLES.index(r)))
        self.steps_per_epoch = steps[self.driver]

    def epoch(self):
        """Yield one epoch of batches as lists of (role, index)."""
        drv = self.driver
        n_drv = len(self.by_role[drv])
        q_drv = self.quotas[drv]
        order = self.rngs[drv].permutation(n_drv)
        for s in range(self.steps_per_epoch):
            chunk = order[s * q_drv : (s + 1) * q_drv]
            if len(chunk) < q_drv:
                # top up the last batch with a random fill from the same pool
                extra = self.rngs[drv].choice(n_drv, size=q_drv - len(chunk), replace=False)
                chunk = np.concatenate([chunk, extra])
            batch = []
            for role in self.quotas:
                if role == drv:
                    batch.extend((role, int(i)) for i in chunk)
                else:
                    idx = self.rngs[role].integers(len(self.by_role[role]), size=self.quotas[role])
                    batch.extend((role, int(i)) for i in idx)
            yield batch


# ----------------------------------------------------------------------------
# evaluation


def evaluate(model: SpeechActTagger, convs: Sequence[Conversation]) -> tuple[RunReport, np.ndarray, list[list[int]]]:
    """Decode every conversation and score against its gold tags."""
    require_labels(convs)
    gold, pred = [], []
    for conv in convs:
        gold.append(conv.labels)
        pred.append(model.predict(conv))
    cm = confusion(gold, pred)
    return RunReport.from_confusion(cm), cm, pred


def predict_conversation(model: SpeechActTagger, conv: Conversation, max_chunk: int = 100) -> list[int]:
    """Tag codes for every sentence, decoding chunk by chunk as in training."""
    return [tag for chunk in chunk_conversation(conv, max_chunk) for tag in model.predict(chunk)]


# ----------------------------------------------------------------------------
# training


@dataclass
class StepResult:
    loss_c: float
    loss_d: float | None
    grad_norm: float


def compute_step_gradients(
    model: SpeechActTagger,
    items: Sequence[tuple[str, Featurized]],
    lam: float,
    adversarial: bool,
    dropout_key: Sequence[int],
) -> tuple[float, float | None]:
    """Forward/backward for one batch; leaves gradients in each parameter's ``.grad``."""
    model.zero_grad()
    counters: dict[str, int] = {}
    with ad.Tape() as tape:
        lc_terms, Us, doms = [], [], []
        for role, feats in items:
            j = counters.get(role, 0)
            counters[role] = j + 1
            rng = np.random.default_rng([*dropout_key, ROLES.index(role), j])
            U = model.encode(feats, train=True, rng=rng)
            if role != "target_unlabeled":
                lc_terms.append(model.classification_loss(U, feats.labels))
            if adversarial:
                Us.append(U)
                doms.append(feats.domain)
        if not lc_terms:
            raise RegimeError("batch has no labeled conversation")
        loss_c = lc_terms[0]
        for term in lc_terms[1:]:
            loss_c = loss_c + term
        loss_c = ad.scale(loss_c, 1.0 / len(lc_terms))
        total = loss_c
        loss_d = None
        if adversarial:
            loss_d = model.domain_loss(Us, doms, lam)
            total = total + loss_d
    tape.backward(total)
    if adversarial:
        scale_discriminator_grads(model.disc, lam)
    return float(loss_c.data), (None if loss_d is None else float(loss_d.data))


def adversarial_step(
    model: SpeechActTagger,
    batch: Batch,
    lam: float,
    lr: float,
    state: OptimizerState | None = None,
    momentum: float = 0.9,
    clip_norm: float = 0.0,
    dropout_key: Sequence[int] = (0, 0),
) -> tuple[float, float]:
    """One SGD-momentum update on a mixed source/target batch. Returns (loss_c, loss_d)."""
    if not any(r == "source" for r, _ in batch.items) or not any(r != "source" for r, _ in batch.items):
        raise RegimeError("adversarial batch needs both a source and a target half")
    if model.disc is None:
        raise ValueError("model has no discriminator")
    items = [(role, model.featurize(conv)) for role, conv in batch.items]
    loss_c, loss_d = compute_step_gradients(model, items, lam, True, dropout_key)
    params = model.trainable()
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    if clip_norm:
        clip_grad_norm(grads, clip_norm)
    sgd_momentum_update(state if state is not None else OptimizerState(), params, grads, lr, momentum)
    model.zero_grad()
    return loss_c, loss_d


def _snapshot(model: SpeechActTagger) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in model.parameters().items()}


def _restore(model: SpeechActTagger, snap: dict[str, np.ndarray]) -> None:
    for k, t in model.parameters().items():
        t.data = snap[k].copy()


def _run_phase(
    model: SpeechActTagger,
    by_role: dict[str, list[Conversation]],
    quotas: dict[str, int],
    dev: Sequence[Conversation],
    config: TrainConfig,
    phase: str,
    adversarial: bool,
    history: list[dict],
    patience: int | None = None,
    callback: Callable[[dict], bool] | None = None,
) -> dict[str, np.ndarray]:
    seed = config.seed
    phase_seed = seed if phase in ("main", "source") else seed + 7919
    feats = {role: [model.featurize(c) for c in convs] for role, convs in by_role.items()}
    sampler = EpochSampler(feats, quotas, phase_seed)
    total_steps = config.epochs * sampler.steps_per_epoch
    optimizer = config.resolved_optimizer
    state = OptimizerState()
    params = model.trainable()
    best_f1 = -math.inf
    best = _snapshot(model)
    since_best = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        sums_c, sums_d, n_steps = 0.0, 0.0, 0
        lam = lr = 0.0
        for batch in sampler.epoch():
            p = step / total_steps
            lam = lambda_schedule(p) if config.lambda_override is None else float(config.lambda_override)
            lr = dynamic_lr(p, config.sgd_lr0) if optimizer == "sgd" else config.adam_lr
            items = [(role, feats[role][i]) for role, i in batch]
            loss_c, loss_d = compute_step_gradients(
                model, items, lam, adversarial, (phase_seed, step)
            )
            if not math.isfinite(loss_c) or (loss_d is not None and not math.isfinite(loss_d)):
                raise DivergenceError(f"non-finite loss at {phase} epoch {epoch} step {step}")
            grads = {k: t.grad for k, t in params.items() if t.grad is not None}
            if config.clip_norm > 0:
                clip_grad_norm(grads, config.clip_norm)
            if optimizer == "sgd":
                sgd_momentum_update(state, params, grads, lr, config.momentum)
            else:
                adam_update(state, params, grads, lr)
            model.zero_grad()
            sums_c += loss_c
            sums_d += loss_d or 0.0
            n_steps += 1
            step += 1
        entry = {
            "epoch": epoch,
            "phase": phase,
            "loss_c": sums_c / n_steps,
            "loss_d": (sums_d / n_steps) if adversarial else None,
            "lambda": lam if adversarial else 0.0,
            "lr": lr,
            "steps": step,
            "dev_accuracy": None,
            "dev_macro_f1": None,
        }
        if dev:
            report, _, _ = evaluate(model, dev)
            entry["dev_accuracy"] = report.accuracy
            entry["dev_macro_f1"] = report.macro_f1
            if report.macro_f1 > best_f1:
                best_f1 = report.macro_f1
                best = _snapshot(model)
                since_best = 0
            else:
                since_best += 1
        else:
            best = _snapshot(model)
        history.append(entry)
        log.info(
            "%s epoch %d: loss_c=%.4f dev_f1=%s lambda=%.4f lr=%.5f",
            phase, epoch, entry["loss_c"], entry["dev_macro_f1"], entry["lambda"], lr,
        )
        if callback is not None and callback(entry):
            break
        if patience is not None and dev and since_best >= patience:
            break
    return best


def prepare_pools(pools: Pools, config: TrainConfig) -> Pools:
    """Chunk long conversations and apply the target label fraction."""
    def prep(convs, domain):
        return [dataclasses.replace(c, domain=domain) for c in chunk_corpus(convs, config.max_chunk)]

    # domain labels follow the pool a conversation was supplied in
    out = Pools(
        source=prep(pools.source, "source"),
        target_labeled=prep(pools.target_labeled, "target"),
        target_unlabeled=prep(pools.target_unlabeled, "target"),
        dev=prep(pools.dev, "target"),
        source_dev=prep(pools.source_dev, "source"),
    )
    if config.target_label_fraction < 1.0 and out.target_labeled:
        rng = param_rng(config.seed, "label-fraction")
        labeled, rest = subsample_labeled(out.target_labeled, config.target_label_fraction, rng)
        out.target_labeled = labeled
        if config.regime == "adapt-semisup":
            out.target_unlabeled = out.target_unlabeled + rest
    for name in ("source", "target_labeled"):
        convs = getattr(out, name)
        if config.regime != "adapt-unsup" or name == "source":
            require_labels(convs)
    return out


def build_model(pools: Pools, config: TrainConfig) -> SpeechActTagger:
    """Vocabulary from all training conversations, then a freshly initialized model."""
    vocab = build_vocab(pools.training_conversations(), config.min_count)
    embed = None
    if config.pretrained_embeddings:
        embed, coverage = load_pretrained(
            config.pretrained_embeddings, vocab, config.embed_dim, param_rng(config.seed, "embed")
        )
        log.info("pretrained embedding coverage: %.3f", coverage)
    model = SpeechActTagger.init(
        config.model_config(), vocab, config.seed, embed=embed,
        with_discriminator=config.regime in ADAPT_REGIMES,
    )
    if config.freeze_embeddings:
        model.embed.freeze()
    return model


def train(
    model: SpeechActTagger,
    pools: Pools,
    config: TrainConfig,
    callback: Callable[[dict], bool] | None = None,
    prepared: bool = False,
):
    """Train under ``config.regime`` and return (checkpoint, history).

    The model ends holding the parameters of the epoch with the best dev
    macro-F1 (earliest on ties); that state is what the checkpoint captures.
    ``callback`` sees each history entry and may return True to stop early.
    """
    from .checkpoint import Checkpoint

    if not prepared:
        pools = prepare_pools(pools, config)
    regime = config.regime
    history: list[dict] = []
    adversarial = regime in ADAPT_REGIMES
    if adversarial:
        model.add_discriminator(config.seed)
    if regime == "finetune":
        src_dev = pools.source_dev or pools.dev
        best = _run_phase(
            model, regime_pools(pools, "transfer"), batch_quotas("transfer", config.batch_size),
            src_dev, config, "source", False, history, patience=config.patience, callback=callback,
        )
        _restore(model, best)
        best = _run_phase(
            model, regime_pools(pools, "indomain"), batch_quotas("indomain", config.batch_size),
            pools.dev, config, "target", False, history, callback=callback,
        )
    else:
        best = _run_phase(
            model, regime_pools(pools, regime), batch_quotas(regime, config.batch_size),
            pools.dev, config, "main", adversarial, history, callback=callback,
        )
    _restore(model, best)
    return Checkpoint.from_model(model, config), history


def fit(pools: Pools, config: TrainConfig, callback=None):
    """Prepare pools, build a model and train it. Returns (model, checkpoint, history)."""
    prepared = prepare_pools(pools, config)
    model = build_model(prepared, config)
    ckpt, history = train(model, prepared, config, callback=callback, prepared=True)
    return model, ckpt, history
