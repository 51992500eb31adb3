"""Adam with decoupled weight decay, step decay schedule, training loop, checkpoints."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, make_rng
from .data import CompositionData
from .encoders import FeatureStack, encode_dataset
from .errors import NonFiniteLossError, ParameterError
from .evaluation import evaluate
from .model import BRANCHES, CompositionalModel, ModelConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 5e-4
    decay_factor: float = 0.5
    decay_every: int = 5
    weight_decay: float = 1e-5
    seed: int = 0
    eval_batch_size: int = 256
    beta: float = 0.5

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ParameterError("epochs, batch_size and lr must be positive")
        if not 0 < self.decay_factor <= 1 or self.decay_every < 1:
            raise ParameterError("decay factor must lie in (0, 1] and interval be >= 1")


def step_decay(base_lr: float, epoch: int, factor: float, every: int) -> float:
    """Learning rate for a zero-based epoch: multiplied by ``factor`` every ``every`` epochs."""
    return base_lr * factor ** (epoch // every)


class Adam:
    """Adaptive-moment optimizer with decoupled weight decay.

    Only tensors with ``requires_grad`` set are ever touched.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = {n: p for n, p in params.items() if p.requires_grad}
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1, c2 = 1 - self.beta1 ** t, 1 - self.beta2 ** t
        for name, p in self.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class StepResult:
    loss: float
    branch_losses: dict[str, float]
    grad_norms: dict[str, float]


def _group(name: str) -> str:
    return name.split(".")[0]


def train_step(model: CompositionalModel, optimizer: Adam, stack: FeatureStack, pairs: np.ndarray,
               pair_labels, state_labels, obj_labels,
               rng: np.random.Generator | None = None) -> StepResult:
    """One forward over all three branches, one backward, one optimizer update."""
    optimizer.zero_grad()
    parts = model.loss(stack, pairs, pair_labels, state_labels, obj_labels, train=True, rng=rng)
    branch = {"state": parts.state.item(), "obj": parts.obj.item(), "com": parts.com.item()}
    total = parts.total.item()
    if not np.isfinite(total):
        raise NonFiniteLossError(f"non-finite loss {total}; branch losses {branch}")
    parts.total.backward()
    norms: dict[str, float] = {}
    for name, p in optimizer.params.items():
        if p.grad is not None:
            key = _group(name)
            norms[key] = norms.get(key, 0.0) + float((p.grad ** 2).sum())
    optimizer.step()
    return StepResult(total, branch, {k: float(np.sqrt(v)) for k, v in norms.items()})


@dataclass
class FitResult:
    model: CompositionalModel
    history: list[dict]
    best_epoch: int
    best_val: dict
    initial_val: dict = field(default_factory=dict)


def validation_summary(model: CompositionalModel, data: CompositionData,
                       train_config: TrainConfig, features: np.ndarray | None = None) -> dict:
    """Closed-world validation metrics exactly as computed during ``fit``."""
    if features is None and not model.lora_enabled:
        features = encode_dataset(model.encoder, data.features[data.indices("val")])
    res = evaluate(model, data, "val", "closed", train_config.beta,
                   batch_size=train_config.eval_batch_size, features=features)
    return res.summary()


def fit(model_config: ModelConfig, train_config: TrainConfig, data: CompositionData,
        model: CompositionalModel | None = None) -> FitResult:
    """Train from a seed and return the weights with the best validation AUC.

    Frozen-encoder features are computed once when no LoRA adapter is
    configured; otherwise the encoder runs inside every step.
    """
    train_config.validate()
    seed = train_config.seed
    if model is None:
        model = CompositionalModel(model_config, len(data.state_names), len(data.object_names), seed)
    train_idx, val_idx = data.indices("train"), data.indices("val")
    pairs = np.asarray(data.train_pairs, dtype=np.int64)
    pair_labels = data.pair_labels(train_idx)
    state_labels, obj_labels = data.states[train_idx], data.objects[train_idx]
    cached = not model.lora_enabled
    if cached:
        train_feats = encode_dataset(model.encoder, data.features[train_idx])
        val_feats = encode_dataset(model.encoder, data.features[val_idx])
    else:
        val_feats = None

    def validate() -> dict:
        return validation_summary(model, data, train_config, val_feats)

    optimizer = Adam(model.trainable_parameters(), train_config.lr,
                     weight_decay=train_config.weight_decay)
    shuffle = np.random.default_rng(seed)
    drop_rng = make_rng(seed + 1)
    initial = validate()
    history: list[dict] = []
    best_auc, best_epoch, best_state, best_val = -np.inf, -1, None, {}
    n = len(train_idx)
    for epoch in range(train_config.epochs):
        optimizer.lr = step_decay(train_config.lr, epoch, train_config.decay_factor,
                                  train_config.decay_every)
        order = shuffle.permutation(n)
        total, parts = 0.0, {b: 0.0 for b in BRANCHES}
        for i in range(0, n, train_config.batch_size):
            b = order[i:i + train_config.batch_size]
            if cached:
                stack = FeatureStack.from_array(train_feats[:, b])
            else:
                stack = model.features(data.features[train_idx[b]])
            res = train_step(model, optimizer, stack, pairs, pair_labels[b], state_labels[b],
                             obj_labels[b], drop_rng)
            total += res.loss * len(b)
            for k in parts:
                parts[k] += res.branch_losses[k] * len(b)
        val = validate()
        row = {"epoch": epoch, "lr": optimizer.lr, "train_loss": total / n,
               **{f"loss_{k}": v / n for k, v in parts.items()},
               **{f"val_{k}": v for k, v in val.items()}}
        history.append(row)
        log.info("epoch %d loss %.4f val AUC %.4f", epoch, row["train_loss"], val["AUC"])
        if val["AUC"] > best_auc:
            best_auc, best_epoch, best_val = val["AUC"], epoch, val
            best_state = model.state_dict()
    model.load_state_dict(best_state)
    return FitResult(model, history, best_epoch, best_val, initial)


# -- checkpoints ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, model: CompositionalModel, meta: dict | None = None) -> None:
    """Write every parameter array (frozen ones included) to an ``.npz`` file.

    Keys are ``param/<dotted name>``; ``meta`` is stored as JSON under ``__meta__``.
    """
    arrays = {f"param/{name}": p.data for name, p in model.named_parameters()}
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        state = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        meta = json.loads(str(z["__meta__"])) if "__meta__" in z.files else {}
    return state, meta
