"""Frozen stand-in visual encoder, soft-prompt text pathway, visual heads, LoRA.

The visual encoder is a pre-layernorm transformer with random orthogonal
weights. Each patch token is a fixed random projection of one contiguous
chunk of the input vector, so low layers keep per-patch (local) evidence
that attention progressively mixes into every token.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, ParameterError, VocabularyError
from .layers import MLP, Linear, Module, attention, orthogonal


@dataclass
class EncoderConfig:
    input_dim: int = 64
    width: int = 64
    tokens: int = 9
    layers: int = 8
    heads: int = 4
    mlp_ratio: int = 2
    lora_rank: int = 0
    lora_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.tokens < 2:
            raise ConfigurationError("encoder needs a [CLS] token and at least one patch")
        if self.input_dim % (self.tokens - 1):
            raise ConfigurationError(
                f"input_dim {self.input_dim} must split evenly over {self.tokens - 1} patches")
        if self.width % self.heads:
            raise ConfigurationError(f"width {self.width} not divisible by {self.heads} heads")
        if self.layers < 1:
            raise ConfigurationError("encoder needs at least one block")
        if self.lora_rank < 0 or self.lora_rank > self.width:
            raise ParameterError(f"lora rank {self.lora_rank} outside [0, {self.width}]")


@dataclass
class FeatureStack:
    """Per-block encoder outputs F_1..F_S, each [b, l, d]."""

    layers: list[Tensor]
    cls_index: int = 0

    def __post_init__(self):
        shapes = {t.shape for t in self.layers}
        if len(shapes) != 1:
            raise DimensionError(f"feature stack layers disagree in shape: {sorted(shapes)}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.layers[0].shape

    def cls(self) -> Tensor:
        return self.layers[-1][:, self.cls_index, :]

    @classmethod
    def from_array(cls, arr: np.ndarray, cls_index: int = 0) -> FeatureStack:
        """Wrap a cached [S, b, l, d] array (no gradient)."""
        return cls([Tensor(a) for a in arr], cls_index)


class LowRankAdapter(Module):
    """Frozen linear map plus a trainable rank-r update ``s·B·A``."""

    def __init__(self, base: Linear, rank: int, scale: float = 1.0,
                 rng: np.random.Generator | None = None):
        d_out, d_in = base.weight.shape
        if not 1 <= rank <= min(d_in, d_out):
            raise ParameterError(f"LoRA rank {rank} must lie in [1, {min(d_in, d_out)}]")
        rng = rng or np.random.default_rng(0)
        self.base = base
        self.A = Tensor(rng.standard_normal((rank, d_in)) / np.sqrt(d_in), requires_grad=True)
        self.B = Tensor(np.zeros((d_out, rank)), requires_grad=True)
        self.rank = rank
        self.scale = float(scale)

    def effective_weight(self) -> np.ndarray:
        return self.base.weight.data + self.scale * self.B.data @ self.A.data

    def __call__(self, x: Tensor) -> Tensor:
        return apply_lora(self.base, self, x)


def apply_lora(layer: Linear, adapter: LowRankAdapter, x: Tensor) -> Tensor:
    """``layer(x)`` with the adapter's low-rank update added; only A and B learn."""
    if adapter.base is not layer:
        raise ParameterError("adapter was built for a different layer")
    low = ad.matmul(ad.matmul(x, ad.transpose(adapter.A)), ad.transpose(adapter.B))
    return layer(x) + ad.scale(low, adapter.scale)


class EncoderBlock(Module):
    def __init__(self, rng: np.random.Generator, width: int, heads: int, mlp_ratio: int):
        self.heads = heads
        self.q = Linear(orthogonal(rng, width, width), trainable=False)
        self.k = Linear(orthogonal(rng, width, width), trainable=False)
        self.v = Linear(orthogonal(rng, width, width), trainable=False)
        self.o = Linear(orthogonal(rng, width, width), trainable=False)
        self.fc1 = Linear(orthogonal(rng, mlp_ratio * width, width), trainable=False)
        self.fc2 = Linear(orthogonal(rng, width, mlp_ratio * width), trainable=False)
        self.adapters: dict[str, LowRankAdapter] = {}

    def add_lora(self, rank: int, scale: float, rng: np.random.Generator) -> None:
        self.adapters = {name: LowRankAdapter(getattr(self, name), rank, scale, rng)
                         for name in ("q", "k", "v", "o")}

    def _proj(self, name: str, x: Tensor) -> Tensor:
        adapter = self.adapters.get(name)
        return adapter(x) if adapter is not None else getattr(self, name)(x)

    def __call__(self, h: Tensor) -> Tensor:
        x = ad.layer_norm(h)
        att = attention(self._proj("q", x), self._proj("k", x), self._proj("v", x), self.heads)
        h = h + self._proj("o", att)
        x = ad.layer_norm(h)
        return h + self.fc2(ad.relu(self.fc1(x)))


class StandInEncoder(Module):
    """Frozen random transformer exposing every block's output."""

    def __init__(self, config: EncoderConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, n_patch = config.width, config.tokens - 1
        chunk = config.input_dim // n_patch
        self.patch_proj = Tensor(np.stack([orthogonal(rng, chunk, d, gain=np.sqrt(d / chunk))
                                           for _ in range(n_patch)]))
        self.cls_token = Tensor(rng.standard_normal(d))
        self.positions = Tensor(0.1 * rng.standard_normal((config.tokens, d)))
        self.blocks = [EncoderBlock(rng, d, config.heads, config.mlp_ratio)
                       for _ in range(config.layers)]
        if config.lora_rank:
            lora_rng = np.random.default_rng(config.seed + 1)
            for block in self.blocks:
                block.add_lora(config.lora_rank, config.lora_scale, lora_rng)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def embed(self, x: np.ndarray) -> np.ndarray:
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise DimensionError(f"encoder expects [b, {cfg.input_dim}] input, got {x.shape}")
        chunks = x.reshape(x.shape[0], cfg.tokens - 1, -1)
        patches = np.einsum("bpc,pcd->bpd", chunks, self.patch_proj.data)
        cls = np.broadcast_to(self.cls_token.data, (x.shape[0], 1, cfg.width))
        return np.concatenate([cls, patches], axis=1) + self.positions.data

    def __call__(self, x: np.ndarray) -> FeatureStack:
        return encode_image(self, x)


def encode_image(encoder: StandInEncoder, x: np.ndarray) -> FeatureStack:
    """Run the stand-in encoder and return all block outputs."""
    h = Tensor(encoder.embed(x))
    layers = []
    for block in encoder.blocks:
        h = block(h)
        layers.append(h)
    return FeatureStack(layers, cls_index=0)


def encode_dataset(encoder: StandInEncoder, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Cache features for a whole array as [S, n, l, d] (evaluation mode, no graph)."""
    with ad.no_grad():
        parts = [np.stack([t.data for t in encode_image(encoder, x[i:i + batch_size]).layers])
                 for i in range(0, len(x), batch_size)]
    return np.concatenate(parts, axis=1)


# -- text side -----------------------------------------------------------------------

CONTEXT_WORDS = ("a", "photo", "of", "object")


@dataclass
class PromptBank:
    """Prompt embeddings for the three branches."""

    t_com: Tensor
    t_state: Tensor
    t_obj: Tensor
    pairs: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 2), dtype=np.int64))


class PromptEncoder(Module):
    """Trainable state/object token tables behind a frozen pooling text pathway.

    A prompt is the mean of its token embeddings passed through one frozen
    orthogonal mixing layer. Templates: "a photo of [state] [object]",
    "a photo of [state] object", "a photo of [object]". The context words
    are frozen.
    """

    def __init__(self, n_states: int, n_objects: int, width: int,
                 rng: np.random.Generator, frozen_seed: int = 0):
        frozen = np.random.default_rng(frozen_seed + 7919)
        self.state_tokens = Tensor(rng.standard_normal((n_states, width)), requires_grad=True)
        self.object_tokens = Tensor(rng.standard_normal((n_objects, width)), requires_grad=True)
        self.context = Tensor(frozen.standard_normal((len(CONTEXT_WORDS), width)))
        self.mix = Linear(orthogonal(frozen, width, width), trainable=False)

    @property
    def n_states(self) -> int:
        return self.state_tokens.shape[0]

    @property
    def n_objects(self) -> int:
        return self.object_tokens.shape[0]

    def _ctx(self, *words: str) -> Tensor:
        rows = [CONTEXT_WORDS.index(w) for w in words]
        return ad.sum(self.context[np.array(rows)], axis=0)

    def __call__(self, pairs) -> PromptBank:
        return build_prompts(self, pairs)


def build_prompts(encoder: PromptEncoder, pairs: Sequence[tuple[int, int]] | np.ndarray) -> PromptBank:
    """Prompt embeddings for candidate pairs, all states and all objects."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size:
        bad_s = pairs[:, 0][(pairs[:, 0] < 0) | (pairs[:, 0] >= encoder.n_states)]
        bad_o = pairs[:, 1][(pairs[:, 1] < 0) | (pairs[:, 1] >= encoder.n_objects)]
        if bad_s.size or bad_o.size:
            raise VocabularyError(f"unknown token ids: states {bad_s.tolist()} objects {bad_o.tolist()}")
    base = encoder._ctx("a", "photo", "of")
    com = base + encoder.state_tokens[pairs[:, 0]] + encoder.object_tokens[pairs[:, 1]]
    state = encoder._ctx("a", "photo", "of", "object") + encoder.state_tokens
    obj = base + encoder.object_tokens
    return PromptBank(
        t_com=encoder.mix(ad.scale(com, 1 / 5)),
        t_state=encoder.mix(ad.scale(state, 1 / 5)),
        t_obj=encoder.mix(ad.scale(obj, 1 / 4)),
        pairs=pairs,
    )


class VisualHeads(Module):
    """Three independent MLPs mapping the [CLS] embedding to V_com, V_state, V_obj."""

    def __init__(self, rng: np.random.Generator, width: int, hidden: int | None = None):
        hidden = hidden or width
        self.com = MLP(rng, width, hidden, width)
        self.state = MLP(rng, width, hidden, width)
        self.obj = MLP(rng, width, hidden, width)

    def __call__(self, cls: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        return visual_heads_forward(self, cls)


def visual_heads_forward(heads: VisualHeads, cls: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    if cls.ndim != 2:
        raise DimensionError(f"visual heads expect [b, d], got {cls.shape}")
    return heads.com(cls), heads.state(cls), heads.obj(cls)
