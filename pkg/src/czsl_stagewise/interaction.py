"""Two-stage cross-modal interaction between prompts and aggregated visual features.

Stage 1 lets prompts attend to ``F_low``; stage 2 feeds its output as the
query over ``F_high``. Each stage is cross-attention plus residual followed
by an FFN plus residual. The result is fused as ``t + λ1·t1 + λ2·t2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError
from .layers import MLP, Linear, Module, attention


@dataclass
class InteractionConfig:
    heads: int | None = None
    dropout: float = 0.1
    ffn_expansion: int = 4
    lambda_init: float = 0.1


def default_heads(width: int, cap: int = 12) -> int:
    """Largest divisor of ``width`` not above ``cap``."""
    return max(h for h in range(1, cap + 1) if width % h == 0)


class CrossAttentionBlock(Module):
    def __init__(self, rng: np.random.Generator, width: int, heads: int, dropout: float = 0.1):
        if width % heads:
            raise ConfigurationError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.p = dropout
        self.q = Linear.init(rng, width, width)
        self.k = Linear.init(rng, width, width)
        self.v = Linear.init(rng, width, width)
        self.o = Linear.init(rng, width, width)


def cross_attend(t: Tensor, F: Tensor, block: CrossAttentionBlock, train: bool = False,
                 rng: np.random.Generator | None = None, return_weights: bool = False):
    """Prompt queries attend over visual keys/values, plus residual.

    ``F`` of shape [L, d] is one shared key set (pass ``F.reshape(b*l, d)`` to
    pool a batch); [b, l, d] gives every image its own key set and the output
    becomes [b, N, d]. Dropout acts on the attention weights only.
    """
    if t.shape[-1] != F.shape[-1]:
        raise DimensionError(f"prompt width {t.shape[-1]} != feature width {F.shape[-1]}")
    if F.ndim == 3 and t.ndim == 3 and t.shape[0] != F.shape[0]:
        raise DimensionError(f"prompt batch {t.shape[0]} != feature batch {F.shape[0]}")
    out, weights = attention(block.q(t), block.k(F), block.v(F), block.heads,
                             block.p, train, rng, return_weights=True)
    res = block.o(out) + t
    return (res, weights) if return_weights else res


class InteractionStage(Module):
    """One cross-attention layer and one FFN, both residual."""

    def __init__(self, rng: np.random.Generator, width: int, heads: int,
                 dropout: float = 0.1, expansion: int = 4):
        self.attn = CrossAttentionBlock(rng, width, heads, dropout)
        self.ffn = MLP(rng, width, expansion * width, width)


def stage_forward(t_in: Tensor, F: Tensor, stage: InteractionStage, train: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    t_mid = cross_attend(t_in, F, stage.attn, train, rng)
    return stage.ffn(t_mid) + t_mid


class FusionWeights(Module):
    def __init__(self, init: float = 0.1):
        self.lambda1 = Tensor(init, requires_grad=True)
        self.lambda2 = Tensor(init, requires_grad=True)


def fuse(t: Tensor, t1: Tensor, t2: Tensor, weights: FusionWeights,
         drop_first: bool = False) -> Tensor:
    """``t + λ1·t1 + λ2·t2``; ``drop_first`` removes the λ1 term entirely.

    Any operand may be the shared [N, d] prompt while the others are
    per-image [b, N, d]; shared operands broadcast over images.
    """
    if len({x.shape[-2:] for x in (t, t1, t2)}) != 1:
        raise DimensionError(f"fuse: shapes {t.shape}, {t1.shape}, {t2.shape} do not agree")
    out = t + ad.mul(weights.lambda2, t2)
    if not drop_first:
        out = out + ad.mul(weights.lambda1, t1)
    return out


class BranchInteraction(Module):
    """Both stages plus fusion weights for one prompt branch.

    ``use_stage1``/``use_stage2`` set to False replace that stage by the
    identity (its parameters are not created).
    """

    def __init__(self, rng: np.random.Generator, width: int, config: InteractionConfig,
                 use_stage1: bool = True, use_stage2: bool = True, drop_first: bool = False):
        heads = config.heads or default_heads(width)
        self.stage1 = InteractionStage(rng, width, heads, config.dropout, config.ffn_expansion) \
            if use_stage1 else None
        self.stage2 = InteractionStage(rng, width, heads, config.dropout, config.ffn_expansion) \
            if use_stage2 else None
        self.fusion = FusionWeights(config.lambda_init)
        self.drop_first = drop_first

    def __call__(self, t: Tensor, F_low: Tensor, F_high: Tensor, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        t1 = stage_forward(t, F_low, self.stage1, train, rng) if self.stage1 else t
        t2 = stage_forward(t1, F_high, self.stage2, train, rng) if self.stage2 else t1
        return fuse(t, t1, t2, self.fusion, self.drop_first)
