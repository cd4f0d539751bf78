"""Optimizers and learning-rate schedules operating on named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def _check_shapes(params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter {name!r} shape {params[name].shape}"
            )


@dataclass
class OptimizerState:
    t: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    state: OptimizerState,
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam step, in place. Parameters without a gradient are skipped."""
    _check_shapes(params, grads)
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, g in grads.items():
        p = params[name]
        m = state.first.get(name)
        v = state.second.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.first[name] = m
        state.second[name] = v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def sgd_momentum_update(
    state: OptimizerState,
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.9,
) -> None:
    """v <- momentum * v + g;  p <- p - lr * v  (in place)."""
    _check_shapes(params, grads)
    state.t += 1
    for name, g in grads.items():
        v = state.first.get(name)
        v = g.copy() if v is None else momentum * v + g
        state.first[name] = v
        params[name].data -= lr * v


def dynamic_lr(p: float, lr0: float, alpha: float = 10.0, beta: float = 0.75) -> float:
    """Annealed rate lr0 / (1 + alpha * p) ** beta for progress p in [0, 1]."""
    p = min(max(p, 0.0), 1.0)
    return lr0 / (1.0 + alpha * p) ** beta


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale all gradients in place so their global L2 norm is at most max_norm.

    Returns the norm before clipping.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return norm
