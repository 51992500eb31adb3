"""In-memory compositional dataset: feature vectors with (state, object) labels and splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError
from .evaluation import CompositionSpace

SPLITS = ("train", "val", "test")


@dataclass
class CompositionData:
    features: np.ndarray
    states: np.ndarray
    objects: np.ndarray
    split: np.ndarray
    state_names: list[str]
    object_names: list[str]
    train_pairs: list[tuple[int, int]]
    val_seen_pairs: list[tuple[int, int]]
    val_unseen_pairs: list[tuple[int, int]]
    test_seen_pairs: list[tuple[int, int]]
    test_unseen_pairs: list[tuple[int, int]]
    name: str = "synthetic"

    def __post_init__(self):
        n = len(self.features)
        if not (len(self.states) == len(self.objects) == len(self.split) == n):
            raise IntegrityError("feature/label/split arrays differ in length")
        train = set(self.train_pairs)
        for tag in ("val", "test"):
            if set(getattr(self, f"{tag}_unseen_pairs")) & train:
                raise IntegrityError(f"{tag} unseen pairs overlap the training pairs")

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise IntegrityError(f"unknown split {split!r}")
        return np.flatnonzero(self.split == split)

    def space(self, split: str = "test", world: str = "closed") -> CompositionSpace:
        unseen = [] if split == "train" else getattr(self, f"{split}_unseen_pairs")
        return CompositionSpace(self.state_names, self.object_names, self.train_pairs, unseen, world)

    def pair_labels(self, idx: np.ndarray) -> np.ndarray:
        """Index of each item's pair within ``train_pairs``."""
        lookup = {p: i for i, p in enumerate(self.train_pairs)}
        try:
            return np.array([lookup[(int(s), int(o))]
                             for s, o in zip(self.states[idx], self.objects[idx])], dtype=np.int64)
        except KeyError as exc:
            raise IntegrityError(f"item pair {exc.args[0]} is not a training pair") from None
