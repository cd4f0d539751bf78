"""Domain discriminator, its loss, and the adaptation-weight schedule."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .initializers import param_rng, xavier_init, zeros

BCE_CLAMP = 1e-12


class DomainLabel(enum.IntEnum):
    target = 0
    source = 1


@dataclass
class DiscriminatorParams:
    U_d: Tensor  # [H_d x |u|]
    b_h: Tensor  # [H_d]
    w_d: Tensor  # [H_d]
    b_o: Tensor  # scalar

    @classmethod
    def init(cls, input_dim: int, hidden: int, seed: int) -> "DiscriminatorParams":
        if hidden < 1:
            raise ValueError("discriminator hidden size must be >= 1")
        U_d = xavier_init((hidden, input_dim), param_rng(seed, "disc.U_d"), name="disc.U_d")
        w_d = xavier_init((1, hidden), param_rng(seed, "disc.w_d"), name="disc.w_d")
        w_d.data = w_d.data.reshape(hidden)
        return cls(U_d, zeros((hidden,), name="disc.b_h"), w_d, zeros((), name="disc.b_o"))

    def tensors(self) -> dict[str, Tensor]:
        return {"disc.U_d": self.U_d, "disc.b_h": self.b_h, "disc.w_d": self.w_d, "disc.b_o": self.b_o}


def discriminate(u, params: DiscriminatorParams) -> Tensor:
    """Probability that each sentence vector came from the source domain.

    ``u`` may be a single vector or a matrix with one sentence per row;
    the hidden activation is ReLU.
    """
    h = ad.relu(ad.matmul(u, ad.transpose(params.U_d)) + params.b_h)
    return ad.sigmoid(ad.matmul(h, params.w_d) + params.b_o)


def domain_bce_loss(d_hat, d) -> Tensor:
    """Mean binary cross-entropy between predicted and true domains.

    ``d`` is a single label or one label per element of ``d_hat``; the
    prediction is clamped to [1e-12, 1 - 1e-12] before taking logs.
    """
    d_hat = ad.as_tensor(d_hat)
    d = np.broadcast_to(np.asarray(d, dtype=np.float64), d_hat.shape)
    p = ad.clip(d_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    per = -(d * ad.log(p) + (1.0 - d) * ad.log(1.0 - p))
    return ad.mean(per)


def lambda_schedule(p: float) -> float:
    """Adaptation weight 2 / (1 + exp(-10 p)) - 1 for training progress p in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        warnings.warn(f"training progress {p} outside [0, 1]; clamping", stacklevel=2)
        p = min(max(p, 0.0), 1.0)
    return 2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0


def adversarial_loss(U, params: DiscriminatorParams, domain, lam: float) -> Tensor:
    """Discriminator loss on reversed features.

    The encoder sees ``-lam`` times the discriminator's gradient through the
    reversal op. The caller scales the discriminator's own gradients by
    ``lam`` (see :func:`scale_discriminator_grads`).
    """
    return domain_bce_loss(discriminate(ad.grad_reverse(U, lam), params), domain)


def scale_discriminator_grads(params: DiscriminatorParams, lam: float) -> None:
    for t in params.tensors().values():
        if t.grad is not None:
            t.grad = t.grad * lam
