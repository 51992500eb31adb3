"""Branch probabilities, per-branch cross-entropy and the weighted total loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import PROB_FLOOR, Tensor
from .errors import DimensionError, ParameterError


@dataclass
class LossConfig:
    alpha_s: float = 1.0
    alpha_o: float = 1.0
    alpha_c: float = 1.0
    temperature: float = 0.01
    normalize: bool = True


@dataclass(frozen=True)
class LossWeights:
    alpha_s: float = 1.0
    alpha_o: float = 1.0
    alpha_c: float = 1.0

    def __post_init__(self):
        w = (self.alpha_s, self.alpha_o, self.alpha_c)
        if min(w) < 0 or max(w) <= 0:
            raise ParameterError(f"loss weights must be nonnegative with one positive: {w}")


@dataclass
class BranchScores:
    """Logits and probabilities of the three branches for one batch."""

    logits_com: Tensor
    logits_state: Tensor
    logits_obj: Tensor
    probs_com: Tensor
    probs_state: Tensor
    probs_obj: Tensor
    temperature: float


def branch_logits(V: Tensor, T: Tensor, temperature: float, normalize: bool = True) -> Tensor:
    """``V·Tᵀ/τ`` for V [b, d] and shared T [N, d] or per-image T [b, N, d]."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if V.ndim != 2 or T.shape[-1] != V.shape[-1]:
        raise DimensionError(f"branch scores: V {V.shape} vs T {T.shape}")
    if normalize:
        V, T = ad.l2_normalize(V), ad.l2_normalize(T)
    if T.ndim == 2:
        dots = ad.matmul(V, ad.transpose(T))
    elif T.ndim == 3 and T.shape[0] == V.shape[0]:
        b, n, d = T.shape
        dots = ad.reshape(ad.matmul(ad.reshape(V, (b, 1, d)), ad.transpose(T, (0, 2, 1))), (b, n))
    else:
        raise DimensionError(f"branch scores: V {V.shape} vs T {T.shape}")
    return ad.scale(dots, 1.0 / temperature)


def branch_probs(V: Tensor, T: Tensor, temperature: float, normalize: bool = True) -> Tensor:
    """Row-stochastic [b, N] matrix: softmax over candidates of scaled dot products."""
    return ad.softmax(branch_logits(V, T, temperature, normalize), axis=-1)


def branch_loss(probs: Tensor, labels) -> Tensor:
    """Mean ``-log p(true | x)`` over the batch (probabilities floored at 1e-12)."""
    return ad.cross_entropy_from_probs(probs, labels)


def floored_count(probs: Tensor, labels) -> int:
    """How many true-label probabilities hit the floor (diagnostics)."""
    labels = np.asarray(labels)
    return int((probs.data[np.arange(labels.size), labels] < PROB_FLOOR).sum())


def total_loss(L_s: Tensor, L_o: Tensor, L_c: Tensor, weights: LossWeights) -> Tensor:
    return (ad.scale(L_s, weights.alpha_s) + ad.scale(L_o, weights.alpha_o)
            + ad.scale(L_c, weights.alpha_c))
