"""Parameter containers and the small layers shared by the model parts."""
from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError


class Module:
    """Attribute-walking parameter container.

    Any attribute holding a :class:`Tensor`, a ``Module`` or a list/dict of
    modules is visited by :meth:`named_parameters`. Frozen weights are tensors
    with ``requires_grad=False``; they are still listed so they can be
    checkpointed and checksummed.
    """

    def named_parameters(self, prefix: str = "", _seen: set | None = None) -> Iterator[tuple[str, Tensor]]:
        seen = set() if _seen is None else _seen
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.", seen)
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.", seen)
                    elif isinstance(item, Tensor) and id(item) not in seen:
                        seen.add(id(item))
                        yield f"{name}.{k}", item

    def parameters(self, trainable: bool | None = None) -> list[Tensor]:
        return [p for _, p in self.named_parameters()
                if trainable is None or p.requires_grad == trainable]

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.named_parameters() if p.requires_grad}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ad.DimensionError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            p.data[...] = arr


def checksum(params: dict[str, Tensor] | list[tuple[str, Tensor]]) -> str:
    """SHA-256 over names and raw bytes, for frozen-weight audits."""
    items = params.items() if isinstance(params, dict) else params
    h = hashlib.sha256()
    for name, p in sorted(items, key=lambda kv: kv[0]):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def uniform_scaled(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Variance-scaled uniform init (Glorot)."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class Linear(Module):
    """``y = x Wᵀ + b`` with ``W`` stored as [d_out, d_in]."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None = None, trainable: bool = True):
        self.weight = Tensor(weight, requires_grad=trainable)
        self.bias = Tensor(np.zeros(weight.shape[0]) if bias is None else bias, requires_grad=trainable)

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, trainable: bool = True) -> Linear:
        return cls(uniform_scaled(rng, d_out, d_in), trainable=trainable)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ad.DimensionError(f"linear expects last axis {self.d_in}, got {x.shape}")
        return ad.matmul(x, ad.transpose(self.weight)) + self.bias


class MLP(Module):
    """Two-layer perceptron with ReLU."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int):
        self.fc1 = Linear.init(rng, d_in, d_hidden)
        self.fc2 = Linear.init(rng, d_hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., n, d] -> [..., heads, n, d/heads]."""
    *lead, n, d = x.shape
    x = ad.reshape(x, (*lead, n, heads, d // heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return ad.transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    """[..., heads, n, dh] -> [..., n, heads*dh]."""
    *lead, h, n, dh = x.shape
    k = len(lead)
    x = ad.transpose(x, list(range(k)) + [k + 1, k, k + 2])
    return ad.reshape(x, (*lead, n, h * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, dropout_p: float = 0.0,
              train: bool = False, rng: np.random.Generator | None = None,
              return_weights: bool = False):
    """Multi-head scaled dot-product attention on already-projected inputs.

    ``q`` is [..., n_q, d]; ``k``/``v`` are [..., n_k, d]. Leading axes
    broadcast, so a shared query set can attend to per-image keys.
    """
    d = q.shape[-1]
    if d % heads:
        raise ConfigurationError(f"model width {d} is not divisible by {heads} heads")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    logits = ad.scale(ad.matmul(qh, ad.transpose(kh, _swap_last(kh.ndim))), 1.0 / np.sqrt(d // heads))
    weights = ad.softmax(logits, axis=-1)
    dropped = ad.dropout(weights, dropout_p, train, rng)
    out = merge_heads(ad.matmul(dropped, vh))
    return (out, weights) if return_weights else out


def _swap_last(ndim: int) -> list[int]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return axes
