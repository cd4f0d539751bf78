"""Single-file model checkpoints: one JSON header line, then raw little-endian float64 tensors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .embeddings import EmbeddingTable, Vocabulary
from .output import TAGS

FORMAT_VERSION = 1
_DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    vocab: list[str]
    tensors: dict[str, np.ndarray]
    trainable: dict[str, bool]
    tags: list[str]
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model, config) -> "Checkpoint":
        params = model.parameters()
        return cls(
            config=config.to_dict(),
            vocab=list(model.vocab.itos),
            tensors={k: t.data.copy() for k, t in params.items()},
            trainable={k: bool(t.requires_grad) for k, t in params.items()},
            tags=list(TAGS),
        )

    @property
    def config_hash(self) -> str:
        from .training import TrainConfig

        return TrainConfig.from_dict(self.config).config_hash()

    def to_bytes(self) -> bytes:
        manifest, offset, blobs = [], 0, []
        for name, arr in self.tensors.items():
            blob = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
            manifest.append(
                {"name": name, "dtype": "float64-le", "shape": list(arr.shape), "offset": offset,
                 "nbytes": len(blob), "trainable": self.trainable.get(name, True)}
            )
            offset += len(blob)
            blobs.append(blob)
        header = {
            "format_version": self.format_version,
            "config": self.config,
            "config_hash": self.config_hash,
            "vocab": self.vocab,
            "tags": self.tags,
            "tensors": manifest,
        }
        line = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        return line.encode("ascii") + b"\n" + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes, where: str = "<checkpoint>") -> "Checkpoint":
        nl = data.find(b"\n")
        if nl < 0:
            raise CheckpointError(f"{where}: missing checkpoint header")
        try:
            header = json.loads(data[:nl].decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise CheckpointError(f"{where}: header is not valid JSON") from None
        version = header.get("format_version") if isinstance(header, dict) else None
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{where}: checkpoint format version {version!r} is not supported (expected {FORMAT_VERSION})"
            )
        if list(header["tags"]) != list(TAGS):
            raise CheckpointError(f"{where}: tag codebook {header['tags']} differs from {list(TAGS)}")
        from .training import ConfigError, TrainConfig

        try:
            expected = TrainConfig.from_dict(header["config"]).config_hash()
        except ConfigError as exc:
            raise CheckpointError(f"{where}: stored config is invalid: {exc}") from None
        if header.get("config_hash") != expected:
            raise CheckpointError(f"{where}: config hash does not match the stored config")
        payload = memoryview(data)[nl + 1 :]
        tensors, trainable = {}, {}
        for entry in header["tensors"]:
            start, size = entry["offset"], entry["nbytes"]
            if start + size > len(payload):
                raise CheckpointError(f"{where}: tensor {entry['name']} runs past end of file")
            arr = np.frombuffer(payload[start : start + size], dtype=_DTYPE).astype(np.float64)
            tensors[entry["name"]] = arr.reshape(entry["shape"])
            trainable[entry["name"]] = bool(entry.get("trainable", True))
        return cls(header["config"], list(header["vocab"]), tensors, trainable, list(header["tags"]), version)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"{path}: {exc.strerror}") from None
        return cls.from_bytes(data, str(path))

    def build_model(self):
        """Rebuild a SpeechActTagger holding exactly these tensors."""
        from .model import SpeechActTagger
        from .training import TrainConfig

        config = TrainConfig.from_dict(self.config)
        vocab = Vocabulary(self.vocab)
        frozen = not self.trainable.get("embed", True)
        embed = EmbeddingTable(Tensor(self.tensors["embed"], requires_grad=not frozen, name="embed"), not frozen)
        has_disc = any(k.startswith("disc.") for k in self.tensors)
        model = SpeechActTagger.init(config.model_config(), vocab, config.seed, embed=embed,
                                     with_discriminator=has_disc)
        params = model.parameters()
        missing = sorted(set(params) ^ set(self.tensors))
        if missing:
            raise CheckpointError(f"checkpoint and model disagree on tensors: {missing}")
        for name, t in params.items():
            src = self.tensors[name]
            if src.shape != t.shape:
                raise CheckpointError(f"tensor {name}: checkpoint shape {src.shape} vs model {t.shape}")
            t.data = src.copy()
            t.requires_grad = self.trainable.get(name, True)
        return model


def save_model(model, config, path) -> Checkpoint:
    ckpt = Checkpoint.from_model(model, config)
    ckpt.save(path)
    return ckpt


def load_model(path):
    return Checkpoint.load(path).build_model()
