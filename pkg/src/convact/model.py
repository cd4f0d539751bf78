"""The speech-act tagger: embeddings -> hierarchical encoder -> Softmax/CRF, plus discriminator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .adversary import DiscriminatorParams, adversarial_loss, discriminate
from .autodiff import Tensor
from .corpus import Conversation
from .embeddings import EmbeddingTable, Vocabulary, lookup
from .encoder import EncoderConfig, HierEncoder
from .initializers import param_rng
from .output import CrfOutput, SoftmaxOutput

OUTPUT_KINDS = ("softmax", "crf")


@dataclass
class ModelConfig:
    embed_dim: int = 300
    word_hidden: int = 100
    conv_hidden: int = 100
    variant: str = "H-LSTM"
    depth: int = 2
    dropout_rate: float = 0.5
    output: str = "softmax"
    disc_hidden: int = 100

    def __post_init__(self):
        if self.output not in OUTPUT_KINDS:
            raise ValueError(f"output must be one of {OUTPUT_KINDS}, got {self.output!r}")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        self.encoder_config()  # validates the encoder fields

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            word_hidden=self.word_hidden,
            conv_hidden=self.conv_hidden,
            variant=self.variant,
            depth=self.depth,
            dropout_rate=self.dropout_rate,
        )


@dataclass
class Featurized:
    """Token ids of one conversation stacked end to end, with per-sentence lengths."""

    ids: np.ndarray
    lengths: np.ndarray
    labels: list[int | None]
    domain: int


class SpeechActTagger:
    def __init__(
        self,
        config: ModelConfig,
        vocab: Vocabulary,
        embed: EmbeddingTable,
        encoder: HierEncoder,
        output: SoftmaxOutput | CrfOutput,
        disc: DiscriminatorParams | None = None,
    ):
        self.config = config
        self.vocab = vocab
        self.embed = embed
        self.encoder = encoder
        self.output = output
        self.disc = disc

    @classmethod
    def init(
        cls,
        config: ModelConfig,
        vocab: Vocabulary,
        seed: int,
        embed: EmbeddingTable | None = None,
        with_discriminator: bool = False,
    ) -> "SpeechActTagger":
        if embed is None:
            embed = EmbeddingTable.random(len(vocab), config.embed_dim, param_rng(seed, "embed"))
        if embed.matrix.shape != (len(vocab), config.embed_dim):
            raise ValueError(
                f"embedding table shape {embed.matrix.shape} does not match "
                f"vocabulary size {len(vocab)} x dim {config.embed_dim}"
            )
        embed.matrix.name = "embed"
        enc_cfg = config.encoder_config()
        encoder = HierEncoder.init(config.embed_dim, enc_cfg, seed)
        out_cls = CrfOutput if config.output == "crf" else SoftmaxOutput
        output = out_cls.init(enc_cfg.output_dim, seed)
        disc = DiscriminatorParams.init(enc_cfg.output_dim, config.disc_hidden, seed) if with_discriminator else None
        return cls(config, vocab, embed, encoder, output, disc)

    def add_discriminator(self, seed: int) -> None:
        if self.disc is None:
            dim = self.config.encoder_config().output_dim
            self.disc = DiscriminatorParams.init(dim, self.config.disc_hidden, seed)

    # ------------------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        """All tensors keyed by canonical name, in a fixed order."""
        params = {"embed": self.embed.matrix}
        params.update(self.encoder.tensors())
        params.update(self.output.tensors())
        if self.disc is not None:
            params.update(self.disc.tensors())
        return params

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.parameters().items() if t.requires_grad}

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    # ------------------------------------------------------------------
    def featurize(self, conv: Conversation) -> Featurized:
        sents = conv.sentences
        ids = np.array([i for s in sents for i in self.vocab.encode(s.tokens)], dtype=np.intp)
        lengths = np.array([len(s.tokens) for s in sents], dtype=np.intp)
        return Featurized(ids, lengths, conv.labels, 1 if conv.domain == "source" else 0)

    def encode(self, feats: Featurized, train: bool = False, rng=None) -> Tensor:
        words = lookup(self.embed, feats.ids)
        return self.encoder.encode(words, feats.lengths, train=train, rng=rng)

    def classification_loss(self, U, labels) -> Tensor:
        return self.output.loss(U, labels)

    def domain_loss(self, Us: list[Tensor], domains: list[int], lam: float) -> Tensor:
        """Discriminator BCE averaged over every sentence of every conversation given."""
        if self.disc is None:
            raise ValueError("model has no discriminator")
        U = ad.concat(Us, axis=0) if len(Us) > 1 else Us[0]
        d = np.concatenate([np.full(u.shape[0], float(dom)) for u, dom in zip(Us, domains)])
        return adversarial_loss(U, self.disc, d, lam)

    def predict_features(self, feats: Featurized) -> list[int]:
        U = self.encode(feats, train=False)
        return self.output.decode(U)

    def predict(self, conv: Conversation) -> list[int]:
        return self.predict_features(self.featurize(conv))

    def domain_probabilities(self, conv: Conversation) -> np.ndarray:
        if self.disc is None:
            raise ValueError("model has no discriminator")
        U = self.encode(self.featurize(conv))
        return discriminate(U, self.disc).data
