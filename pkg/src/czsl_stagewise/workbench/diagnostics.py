"""Gradient check of the complete training loss on a tiny instance."""
from __future__ import annotations

import numpy as np

from ..aggregation import AggregationConfig
from .. import autodiff as ad
from ..autodiff import GradCheckReport, Tensor, grad_check, no_grad
from ..encoders import EncoderConfig
from ..interaction import InteractionConfig
from ..model import CompositionalModel, ModelConfig


def micro_instance(seed: int = 0, variant: str = "full", lora_rank: int = 1):
    """2 states x 2 objects, width 8, four encoder blocks, dropout off.

    Returns ``(model, loss_fn)`` where ``loss_fn()`` rebuilds the total loss
    from the current parameter values (deterministic, as the check requires).
    Inputs are redrawn if any visual-head output is the zero vector. LoRA ``B`` factors are given nonzero values so both adapter factors
    receive gradient.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        encoder=EncoderConfig(input_dim=8, width=8, tokens=3, layers=4, heads=2,
                              lora_rank=lora_rank, seed=seed),
        aggregation=AggregationConfig(n_low=2, m_high=2, dropout=0.0),
        interaction=InteractionConfig(heads=2, dropout=0.0),
        variant=variant,
    )
    model = CompositionalModel(cfg, 2, 2, seed)
    for name, p in model.named_parameters():
        if name.endswith(".B"):
            p.data[...] = 0.1 * rng.standard_normal(p.shape)
    # A visual-head output of exactly zero sits on the kink of the unit
    # normalization, where finite differences are meaningless; redraw inputs.
    for _ in range(100):
        x = rng.standard_normal((3, 8))
        with no_grad():
            heads = model.heads(model.features(x).cls())
        if all((np.abs(v.data).sum(axis=-1) > 0).all() for v in heads):
            break
    pairs = np.array([(0, 0), (0, 1), (1, 0)])
    pair_labels = np.array([0, 1, 2])
    states, objects = pairs[pair_labels, 0], pairs[pair_labels, 1]

    def loss_fn():
        stack = model.features(x)
        return model.loss(stack, pairs, pair_labels, states, objects, train=False).total

    return model, loss_fn


# Central differences of an O(1) loss carry about eps*|L|/step ~ 1e-10 of
# rounding noise, so relative error is measured against max(|a|, |n|, 1e-5).
GRAD_FLOOR = 1e-5


def run_gradcheck(seed: int = 0, tolerance: float = 1e-4, step: float = 1e-5,
                  max_coords: int = 24, floor: float = GRAD_FLOOR) -> GradCheckReport:
    model, loss_fn = micro_instance(seed)
    return grad_check(loss_fn, model.trainable_parameters(), step=step, tolerance=tolerance,
                      max_coords=max_coords, seed=seed, floor=floor)


def op_checks(seed: int = 0, tolerance: float = 1e-4, step: float = 1e-5,
              floor: float = GRAD_FLOOR) -> dict[str, GradCheckReport]:
    """Per-operation gradient checks on small random operands."""
    rng = np.random.default_rng(seed)

    def leaf(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    a, b, c, w = leaf(2, 3, 4), leaf(4, 5), leaf(2, 3, 4), leaf(4)
    r = Tensor(rng.standard_normal((2, 3, 4)))
    labels = np.array([0, 2])
    cases = {
        "matmul": (lambda: ad.sum(ad.matmul(a, b) * Tensor(rng_fixed(seed, (2, 3, 5)))), [a, b]),
        "add_mul": (lambda: ad.sum((a + c) * a * w), [a, c, w]),
        "relu": (lambda: ad.sum(ad.relu(a) * r), [a]),
        "softmax": (lambda: ad.sum(ad.softmax(a, axis=-1) * r), [a]),
        "layer_norm": (lambda: ad.sum(ad.layer_norm(a, w, w) * r), [a, w]),
        "l2_normalize": (lambda: ad.sum(ad.l2_normalize(a) * r), [a]),
        "concat_mean": (lambda: ad.sum(ad.concat_last_axis([a, c]))
                        + ad.sum(ad.stack_mean([a, c]) * r), [a, c]),
        "reshape_transpose_index": (lambda: ad.sum(ad.transpose(ad.reshape(a, (6, 4)))[1:3]
                                                   * Tensor(rng_fixed(seed, (2, 6)))), [a]),
        "cross_entropy": (lambda: ad.cross_entropy_from_probs(
            ad.softmax(ad.reshape(a, (2, 12))), labels), [a]),
    }
    out = {}
    for name, (f, leaves) in cases.items():
        out[name] = grad_check(f, {f"x{i}": t for i, t in enumerate(leaves)}, step=step,
                               tolerance=tolerance, seed=seed, floor=floor)
    return out


def rng_fixed(seed: int, shape) -> np.ndarray:
    return np.random.default_rng(seed + 1000).standard_normal(shape)
