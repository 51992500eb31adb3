"""Full three-branch model: encoder -> aggregators -> staged interaction -> scores."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregation import AggregationConfig, Aggregator, Window, concat_window, mean_window
from .autodiff import Tensor
from .encoders import (EncoderConfig, FeatureStack, PromptEncoder, StandInEncoder, VisualHeads,
                       encode_image)
from .errors import ConfigurationError, UsageError
from .interaction import BranchInteraction, InteractionConfig
from .layers import Module
from .objective import (BranchScores, LossConfig, LossWeights, branch_logits, branch_loss,
                        total_loss)

VARIANTS = ("full", "agg_a", "agg_b", "ms_a", "ms_b", "df")
BRANCHES = ("com", "state", "obj")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    variant: str = "full"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.encoder.validate()
        n, m, depth = self.aggregation.n_low, self.aggregation.m_high, self.encoder.layers
        if n < 1 or m < 1 or n + m > depth:
            raise ConfigurationError(f"windows N={n}, M={m} need 1 <= N, M and N + M <= S={depth}")


@dataclass
class LossParts:
    total: Tensor
    state: Tensor
    obj: Tensor
    com: Tensor
    scores: BranchScores


class CompositionalModel(Module):
    """Trainable surfaces: token tables, visual heads, aggregators, interaction stacks,
    fusion weights and (optionally) LoRA adapters. The rest is frozen."""

    def __init__(self, config: ModelConfig, n_states: int, n_objects: int, seed: int = 0):
        config.validate()
        self._config = config
        rng = np.random.default_rng(seed)
        d = config.encoder.width
        self.encoder = StandInEncoder(config.encoder)
        self.prompts = PromptEncoder(n_states, n_objects, d, rng, frozen_seed=config.encoder.seed)
        self.heads = VisualHeads(rng, d)
        agg = config.aggregation
        if config.variant not in ("agg_a", "agg_b"):
            self.agg_low = Aggregator(rng, Window("first", agg.n_low), d, agg.dropout)
            self.agg_high = Aggregator(rng, Window("last", agg.m_high), d, agg.dropout)
        v = config.variant
        self.interact = {
            b: BranchInteraction(rng, d, config.interaction, use_stage1=v != "ms_a",
                                 use_stage2=v != "ms_b", drop_first=v == "df")
            for b in BRANCHES
        }

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def variant(self) -> str:
        return self._config.variant

    @property
    def lora_enabled(self) -> bool:
        return self._config.encoder.lora_rank > 0

    def loss_weights(self) -> LossWeights:
        c = self._config.loss
        return LossWeights(c.alpha_s, c.alpha_o, c.alpha_c)

    def features(self, x: np.ndarray) -> FeatureStack:
        return encode_image(self.encoder, x)

    def visual_context(self, stack: FeatureStack, train: bool = False,
                       rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """F_low and F_high for the configured variant."""
        agg = self._config.aggregation
        low, high = Window("first", agg.n_low), Window("last", agg.m_high)
        if self.variant == "agg_a":
            return (concat_window(stack, Window("first", 1)),
                    concat_window(stack, Window("last", 1)))
        if self.variant == "agg_b":
            return mean_window(stack, low), mean_window(stack, high)
        return self.agg_low(stack, train, rng), self.agg_high(stack, train, rng)

    def prompt_embeddings(self, stack: FeatureStack, pairs: np.ndarray, train: bool = False,
                          rng: np.random.Generator | None = None) -> dict[str, Tensor]:
        """Final (interaction-updated) prompt embeddings T_com, T_state, T_obj."""
        F_low, F_high = self.visual_context(stack, train, rng)
        bank = self.prompts(pairs)
        raw = {"com": bank.t_com, "state": bank.t_state, "obj": bank.t_obj}
        return {b: self.interact[b](raw[b], F_low, F_high, train, rng) for b in BRANCHES}

    def forward(self, stack: FeatureStack, pairs: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> BranchScores:
        tau, norm = self._config.loss.temperature, self._config.loss.normalize
        V = dict(zip(BRANCHES, self.heads(stack.cls())))
        T = self.prompt_embeddings(stack, pairs, train, rng)
        logits = {b: branch_logits(V[b], T[b], tau, norm) for b in BRANCHES}
        return BranchScores(
            logits["com"], logits["state"], logits["obj"],
            ad.softmax(logits["com"]), ad.softmax(logits["state"]), ad.softmax(logits["obj"]),
            tau,
        )

    __call__ = forward

    def loss(self, stack: FeatureStack, pairs: np.ndarray, pair_labels, state_labels,
             obj_labels, train: bool = False, rng: np.random.Generator | None = None) -> LossParts:
        scores = self.forward(stack, pairs, train, rng)
        L_s = branch_loss(scores.probs_state, state_labels)
        L_o = branch_loss(scores.probs_obj, obj_labels)
        L_c = branch_loss(scores.probs_com, pair_labels)
        return LossParts(total_loss(L_s, L_o, L_c, self.loss_weights()), L_s, L_o, L_c, scores)
