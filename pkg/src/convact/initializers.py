"""Weight initializers. Every draw comes from an explicit generator."""

from __future__ import annotations

import zlib

import numpy as np

from .autodiff import Tensor

EMBED_INIT_RANGE = 0.05


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, parameter name).

    Keying by name keeps each parameter's initial value independent of which
    other parameters a model happens to have.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def xavier_init(shape, rng: np.random.Generator, name: str | None = None) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2:
        raise ValueError(f"xavier_init needs a 2-D shape, got {shape}")
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def uniform_init(shape, rng: np.random.Generator, scale: float = EMBED_INIT_RANGE,
                 name: str | None = None) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=tuple(shape)), requires_grad=True, name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True, name=name)
