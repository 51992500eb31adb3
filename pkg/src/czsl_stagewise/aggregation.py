"""Self-adaptive aggregation of the first N / last M encoder layers.

``F_low = Dropout(ReLU(LayerNorm(W·concat(F_1..F_N) + b)))`` and likewise for
``F_high`` over ``F_{S-M+1}..F_S``, with separate parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import FeatureStack
from .errors import ConfigurationError, DimensionError, ParameterError
from .layers import Linear, Module


@dataclass
class AggregationConfig:
    n_low: int = 3
    m_high: int = 3
    dropout: float = 0.1


@dataclass(frozen=True)
class Window:
    side: Literal["first", "last"]
    size: int

    def layer_indices(self, depth: int) -> list[int]:
        """Zero-based layer indices covered by the window, in order."""
        if self.size < 1 or self.size > depth:
            raise ConfigurationError(f"window {self.side}-{self.size} does not fit {depth} layers")
        if self.side == "first":
            return list(range(self.size))
        return list(range(depth - self.size, depth))


def concat_window(stack: FeatureStack, window: Window) -> Tensor:
    """Concatenate the window's layers along the feature axis -> [b, l, K·d]."""
    idx = window.layer_indices(stack.depth)
    if len(idx) == 1:
        return stack.layers[idx[0]]
    return ad.concat_last_axis([stack.layers[i] for i in idx])


def mean_window(stack: FeatureStack, window: Window) -> Tensor:
    """Layerwise average over the window (ablation baseline)."""
    return ad.stack_mean([stack.layers[i] for i in window.layer_indices(stack.depth)])


class Aggregator(Module):
    """Linear K·d -> d, layer norm with gain/offset, ReLU, dropout."""

    def __init__(self, rng: np.random.Generator, window: Window, width: int, dropout: float = 0.1):
        if not 0.0 <= dropout < 1.0:
            raise ParameterError(f"aggregator dropout must lie in [0, 1), got {dropout}")
        self.window = window
        self.p = dropout
        self.linear = Linear.init(rng, window.size * width, width)
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.offset = Tensor(np.zeros(width), requires_grad=True)

    def __call__(self, stack: FeatureStack, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        return aggregate(concat_window(stack, self.window), self, train, rng)


def aggregate(concat: Tensor, params: Aggregator, train: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
    if concat.shape[-1] != params.linear.d_in:
        raise DimensionError(
            f"aggregator sized for {params.linear.d_in} features, got {concat.shape[-1]}")
    y = ad.layer_norm(params.linear(concat), params.gain, params.offset)
    return ad.dropout(ad.relu(y), params.p, train, rng)
