"""Experiment configuration: nested JSON with strict key checking.

Schema (every key optional; omitted keys take the defaults below)::

    {
      "variant": "full",                     # full | agg_a | agg_b | ms_a | ms_b | df
      "data":        {SyntheticTaskSpec fields},
      "encoder":     {EncoderConfig fields},
      "aggregation": {"n_low", "m_high", "dropout"},
      "interaction": {"heads", "dropout", "ffn_expansion", "lambda_init"},
      "loss":        {"alpha_s", "alpha_o", "alpha_c", "temperature", "normalize"},
      "train":       {TrainConfig fields},
      "eval":        {"beta", "world", "theta", "batch_size"}
    }

Unknown keys at any level raise ``UsageError`` naming every offender.
The defaults are sized so one training run of the synthetic task finishes
in well under a minute on one CPU core.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..aggregation import AggregationConfig
from ..encoders import EncoderConfig
from ..errors import UsageError
from ..evaluation import WORLDS
from ..interaction import InteractionConfig
from ..model import VARIANTS, ModelConfig
from ..objective import LossConfig
from ..training import TrainConfig
from .synthetic import SyntheticTaskSpec


@dataclass
class EvalConfig:
    beta: float = 0.5
    world: str = "closed"
    theta: float | str | None = None
    batch_size: int = 256


def _default_encoder() -> EncoderConfig:
    return EncoderConfig(width=32)


def _default_train() -> TrainConfig:
    return TrainConfig(epochs=10, lr=2e-3)


@dataclass
class ExperimentConfig:
    variant: str = "full"
    data: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    encoder: EncoderConfig = field(default_factory=_default_encoder)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=_default_train)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.encoder, self.aggregation, self.interaction, self.loss, self.variant)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.eval.world not in WORLDS:
            raise UsageError(f"eval.world must be one of {WORLDS}")
        if self.eval.world == "closed" and self.eval.theta is not None:
            raise UsageError("eval.theta only applies to the open world")
        if isinstance(self.eval.theta, str) and self.eval.theta != "auto":
            raise UsageError("eval.theta must be a number, \"auto\" or null")
        self.data.validate()
        self.model_config().validate()
        self.train.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> ExperimentConfig:
        out = copy.deepcopy(self)
        out.train.seed = seed
        out.data.seed = seed
        return out

    def digest(self) -> str:
        """Hash of everything except the seeds; runs differing only by seed share it."""
        d = self.to_dict()
        d["train"].pop("seed")
        d["data"].pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _merge(obj, updates: dict, path: str, bad: list[str]) -> None:
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in updates.items():
        where = f"{path}{key}"
        if key not in names:
            bad.append(where)
            continue
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                bad.append(f"{where} (expected an object)")
                continue
            _merge(current, value, where + ".", bad)
        else:
            setattr(obj, key, value)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise UsageError("config root must be a JSON object")
    cfg = ExperimentConfig()
    bad: list[str] = []
    _merge(cfg, raw, "", bad)
    if bad:
        raise UsageError(f"unknown or malformed config keys: {', '.join(bad)}")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(raw)


def save_config(path: str | Path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
