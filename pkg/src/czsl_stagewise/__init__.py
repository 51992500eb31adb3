"""Compositional zero-shot recognition with staged prompt/visual-layer interaction.

Everything runs on a small numpy autodiff engine with a frozen random
stand-in encoder, so the full pipeline trains on a CPU in seconds.
"""
from .autodiff import Tensor, grad_check, no_grad
from .data import CompositionData
from .evaluation import CompositionSpace, EvalCurve, bias_sweep, combined_score, evaluate
from .model import VARIANTS, CompositionalModel, ModelConfig
from .training import Adam, TrainConfig, fit

__all__ = [
    "Tensor", "grad_check", "no_grad", "CompositionData", "CompositionSpace", "EvalCurve",
    "bias_sweep", "combined_score", "evaluate", "VARIANTS", "CompositionalModel", "ModelConfig",
    "Adam", "TrainConfig", "fit",
]

__version__ = "0.1.0"
