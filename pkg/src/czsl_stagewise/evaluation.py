"""Inference rule, candidate spaces, feasibility pruning and the calibration-bias sweep.

Bias convention: the bias is *added to unseen-pair scores*. Seen accuracy is
therefore non-increasing in the bias and unseen accuracy non-decreasing; S is
read at bias -inf and U at +inf.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import IntegrityError, ParameterError, UndefinedMetricError, VocabularyError

if TYPE_CHECKING:
    from .data import CompositionData
    from .model import CompositionalModel

WORLDS = ("closed", "open")

# Per-dataset inference mixing weights reported for the real benchmarks.
REFERENCE_BETA = {
    ("mit-states", "closed"): 0.1, ("ut-zappos", "closed"): 1.0, ("cgqa", "closed"): 0.1,
    ("mit-states", "open"): 0.3, ("ut-zappos", "open"): 1.0, ("cgqa", "open"): 0.3,
}


@dataclass
class CompositionSpace:
    """State/object vocabularies with seen (training) and unseen pairs, as index tuples."""

    states: list[str]
    objects: list[str]
    seen_pairs: list[tuple[int, int]]
    unseen_pairs: list[tuple[int, int]]
    world: str = "closed"

    def __post_init__(self):
        if self.world not in WORLDS:
            raise ParameterError(f"world must be one of {WORLDS}, got {self.world!r}")
        self.seen_pairs = [tuple(map(int, p)) for p in self.seen_pairs]
        self.unseen_pairs = [tuple(map(int, p)) for p in self.unseen_pairs]
        for s, o in self.seen_pairs + self.unseen_pairs:
            if not (0 <= s < len(self.states) and 0 <= o < len(self.objects)):
                raise VocabularyError(f"pair ({s}, {o}) outside vocabulary")
        overlap = set(self.seen_pairs) & set(self.unseen_pairs)
        if overlap:
            raise IntegrityError(f"seen and unseen pairs overlap: {sorted(overlap)[:5]}")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def with_world(self, world: str) -> CompositionSpace:
        return CompositionSpace(self.states, self.objects, self.seen_pairs, self.unseen_pairs, world)

    def candidates(self) -> np.ndarray:
        """Test-time search space as [N, 2] (state, object) indices."""
        if self.world == "closed":
            pairs = self.seen_pairs + self.unseen_pairs
        else:
            pairs = [(s, o) for s in range(self.n_states) for o in range(self.n_objects)]
        return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

    def seen_mask(self, pairs: np.ndarray) -> np.ndarray:
        seen = set(self.seen_pairs)
        return np.array([(int(s), int(o)) in seen for s, o in pairs], dtype=bool)


# -- inference rule ----------------------------------------------------------------

def combined_score(p_com: np.ndarray, p_state: np.ndarray, p_obj: np.ndarray, beta: float,
                   pairs: np.ndarray) -> np.ndarray:
    """``β·p(c) + (1-β)·p(s)·p(o)`` for every candidate pair."""
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if p_com.shape[1] != len(pairs):
        raise IntegrityError(f"{p_com.shape[1]} combination columns for {len(pairs)} pairs")
    if len(pairs) and (pairs[:, 0].max() >= p_state.shape[1] or pairs[:, 1].max() >= p_obj.shape[1]
                       or pairs.min() < 0):
        raise IntegrityError("pair index outside the state/object probability tables")
    return beta * p_com + (1.0 - beta) * p_state[:, pairs[:, 0]] * p_obj[:, pairs[:, 1]]


def predict(scores: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest candidate index."""
    return np.argmax(scores, axis=1)


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


# -- feasibility ------------------------------------------------------------------------

def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)


def feasibility_scores(space: CompositionSpace, state_emb: np.ndarray,
                       obj_emb: np.ndarray) -> np.ndarray:
    """Plausibility of every (state, object) pair as an [|S|, |O|] array.

    For (s, o): the best cosine similarity between o and any other object seen
    with s, averaged with the best similarity between s and any other state
    seen with o. A side with no such neighbour contributes -1.
    """
    S, O = _unit_rows(np.asarray(state_emb)), _unit_rows(np.asarray(obj_emb))
    nS, nO = S.shape[0], O.shape[0]
    seen = np.zeros((nS, nO), dtype=bool)
    for s, o in space.seen_pairs:
        seen[s, o] = True
    cos_o, cos_s = O @ O.T, S @ S.T
    mask_o = seen[:, None, :] & ~np.eye(nO, dtype=bool)[None]
    obj_term = np.where(mask_o, cos_o[None], -np.inf).max(axis=2)
    mask_s = seen.T[:, None, :] & ~np.eye(nS, dtype=bool)[None]
    state_term = np.where(mask_s, cos_s[None], -np.inf).max(axis=2).T
    obj_term = np.where(np.isfinite(obj_term), obj_term, -1.0)
    state_term = np.where(np.isfinite(state_term), state_term, -1.0)
    return 0.5 * (obj_term + state_term)


def feasibility_filter(space: CompositionSpace, scores: np.ndarray, theta: float) -> np.ndarray:
    """Candidate pairs after pruning unseen pairs scoring below ``theta``.

    Seen pairs are always kept. In the closed world the candidate set is
    returned unchanged.
    """
    pairs = space.candidates()
    if space.world == "closed":
        return pairs
    seen = space.seen_mask(pairs)
    pair_scores = scores[pairs[:, 0], pairs[:, 1]]
    unseen_scores = pair_scores[~seen]
    if np.isfinite(theta) and unseen_scores.size and not (
            unseen_scores.min() <= theta <= unseen_scores.max()):
        warnings.warn(f"feasibility threshold {theta} outside observed range "
                      f"[{unseen_scores.min():.4f}, {unseen_scores.max():.4f}]", stacklevel=2)
    return pairs[seen | (pair_scores >= theta)]


# -- bias sweep -------------------------------------------------------------------------

@dataclass
class EvalCurve:
    bias: np.ndarray
    seen_acc: np.ndarray
    unseen_acc: np.ndarray
    S: float
    U: float
    HM: float
    AUC: float

    @property
    def harmonic(self) -> np.ndarray:
        tot = self.seen_acc + self.unseen_acc
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, 2 * self.seen_acc * self.unseen_acc / np.where(tot > 0, tot, 1), 0.0)

    def summary(self) -> dict[str, float]:
        return {"S": self.S, "U": self.U, "HM": self.HM, "AUC": self.AUC}


def trapezoid_area(x: Sequence[float], y: Sequence[float]) -> float:
    """Area under the polyline (x_i, y_i), correctly rounded via ``math.fsum``."""
    return math.fsum((x[i + 1] - x[i]) * (y[i] + y[i + 1]) / 2 for i in range(len(x) - 1))


def harmonic_mean(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def bias_sweep(scores: np.ndarray, true_cols: np.ndarray, seen_cols: np.ndarray,
               item_seen: np.ndarray | None = None) -> EvalCurve:
    """Exact seen/unseen accuracy curve over every distinct calibration bias.

    ``true_cols`` holds each item's true candidate column, or -1 when the
    true pair is not a candidate (the item is then always wrong).
    ``item_seen`` marks items whose true pair is seen; it defaults to
    ``seen_cols[true_cols]``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    true_cols = np.asarray(true_cols, dtype=np.int64)
    seen_cols = np.asarray(seen_cols, dtype=bool)
    n, N = scores.shape
    if seen_cols.shape != (N,) or true_cols.shape != (n,):
        raise IntegrityError("bias_sweep: mask/label shapes do not match the score matrix")
    if item_seen is None:
        if (true_cols < 0).any():
            raise IntegrityError("item_seen is required when some true pairs are not candidates")
        item_seen = seen_cols[true_cols]
    item_seen = np.asarray(item_seen, dtype=bool)
    n_seen, n_unseen = int(item_seen.sum()), int((~item_seen).sum())
    if n_seen == 0:
        raise UndefinedMetricError("seen subset is empty")
    if n_unseen == 0:
        raise UndefinedMetricError("unseen subset is empty")

    rows = np.arange(n)
    s_scores = np.where(seen_cols, scores, -np.inf)
    u_scores = np.where(~seen_cols, scores, -np.inf)
    best_s, best_u = s_scores.argmax(axis=1), u_scores.argmax(axis=1)
    ms, mu = s_scores[rows, best_s], u_scores[rows, best_u]
    with np.errstate(invalid="ignore"):
        thr = ms - mu
    seen_hit = item_seen & (best_s == true_cols) & np.isfinite(ms)
    unseen_hit = ~item_seen & (best_u == true_cols) & np.isfinite(mu)

    cuts = np.unique(thr[np.isfinite(thr)])
    mids = cuts[:-1] / 2 + cuts[1:] / 2
    bias = np.concatenate([[-np.inf], mids, [np.inf]])
    st, ut = np.sort(thr[seen_hit]), np.sort(thr[unseen_hit])
    seen_acc = (st.size - np.searchsorted(st, bias, side="right")) / n_seen
    unseen_acc = np.searchsorted(ut, bias, side="left") / n_unseen

    hm = max(harmonic_mean(a, b) for a, b in zip(seen_acc, unseen_acc))
    auc = trapezoid_area(unseen_acc, seen_acc)
    return EvalCurve(bias, seen_acc, unseen_acc, float(seen_acc.max()), float(unseen_acc.max()),
                     float(hm), float(auc))


# -- model-level evaluation ----------------------------------------------------------------

@dataclass
class BranchLogits:
    com: np.ndarray
    state: np.ndarray
    obj: np.ndarray
    pairs: np.ndarray


@dataclass
class EvalResult:
    curve: EvalCurve
    candidates: np.ndarray
    state_acc: float
    object_acc: float
    seen_acc: float
    unseen_acc: float
    theta: float | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict[str, float]:
        return {**self.curve.summary(), "state_acc": self.state_acc, "object_acc": self.object_acc,
                "seen_acc_bias0": self.seen_acc, "unseen_acc_bias0": self.unseen_acc,
                "n_candidates": int(len(self.candidates))}


def collect_logits(model: CompositionalModel, features, pairs: np.ndarray,
                   batch_size: int = 128) -> BranchLogits:
    """Evaluation-mode logits for every item; ``features`` is a raw input array
    [n, input_dim] or a cached [S, n, l, d] feature array."""
    from .encoders import FeatureStack

    cached = features.ndim == 4
    n = features.shape[1] if cached else features.shape[0]
    out = {"com": [], "state": [], "obj": []}
    with ad.no_grad():
        for i in range(0, n, batch_size):
            if cached:
                stack = FeatureStack.from_array(features[:, i:i + batch_size])
            else:
                stack = model.features(features[i:i + batch_size])
            scores = model.forward(stack, pairs, train=False)
            out["com"].append(scores.logits_com.data)
            out["state"].append(scores.logits_state.data)
            out["obj"].append(scores.logits_obj.data)
    return BranchLogits(*(np.concatenate(out[k]) for k in ("com", "state", "obj")), pairs=pairs)


def score_logits(logits: BranchLogits, keep_pairs: np.ndarray, beta: float) -> np.ndarray:
    """Inference scores over ``keep_pairs`` (a subset of ``logits.pairs``)."""
    col = {tuple(p): i for i, p in enumerate(logits.pairs.tolist())}
    idx = np.array([col[tuple(p)] for p in keep_pairs.tolist()], dtype=np.int64)
    p_com = softmax_np(logits.com[:, idx])
    return combined_score(p_com, softmax_np(logits.state), softmax_np(logits.obj), beta, keep_pairs)


def curve_from_scores(scores: np.ndarray, pairs: np.ndarray, space: CompositionSpace,
                      states: np.ndarray, objects: np.ndarray) -> tuple[EvalCurve, np.ndarray, np.ndarray]:
    col = {tuple(p): i for i, p in enumerate(pairs.tolist())}
    true_cols = np.array([col.get((int(s), int(o)), -1) for s, o in zip(states, objects)])
    seen = set(space.seen_pairs)
    item_seen = np.array([(int(s), int(o)) in seen for s, o in zip(states, objects)])
    curve = bias_sweep(scores, true_cols, space.seen_mask(pairs), item_seen)
    return curve, true_cols, item_seen


def _token_tables(model: CompositionalModel) -> tuple[np.ndarray, np.ndarray]:
    return model.prompts.state_tokens.data, model.prompts.object_tokens.data


def select_threshold(logits: BranchLogits, space: CompositionSpace, states: np.ndarray,
                     objects: np.ndarray, feas: np.ndarray, beta: float) -> float:
    """Feasibility threshold maximizing AUC on the given (validation) items.

    Candidates are -inf and every distinct unseen-pair score; ties keep the
    smallest threshold.
    """
    pairs = space.candidates()
    unseen_scores = np.unique(feas[pairs[:, 0], pairs[:, 1]][~space.seen_mask(pairs)])
    best_theta, best_auc = -np.inf, -1.0
    for theta in np.concatenate([[-np.inf], unseen_scores]):
        keep = feasibility_filter(space, feas, theta)
        curve, _, _ = curve_from_scores(score_logits(logits, keep, beta), keep, space, states, objects)
        if curve.AUC > best_auc:
            best_theta, best_auc = float(theta), curve.AUC
    return best_theta


def evaluate(model: CompositionalModel, data: CompositionData, split: str = "val",
             world: str = "closed", beta: float = 1.0, theta: float | str | None = None,
             batch_size: int = 128, features=None) -> EvalResult:
    """Evaluate ``model`` on one split.

    ``theta`` applies to the open world only: a number prunes by feasibility,
    ``"auto"`` picks the threshold maximizing validation AUC, ``None`` keeps
    the full Cartesian product.
    """
    space = data.space(split, world)
    idx = data.indices(split)
    feats = features if features is not None else data.features[idx]
    states, objects = data.states[idx], data.objects[idx]
    pairs = space.candidates()
    logits = collect_logits(model, feats, pairs, batch_size)
    keep, used_theta = pairs, None
    if world == "open" and theta is not None:
        feas = feasibility_scores(space, *_token_tables(model))
        if theta == "auto":
            vspace = data.space("val", "open")
            vidx = data.indices("val")
            vlogits = logits if split == "val" else collect_logits(
                model, data.features[vidx], vspace.candidates(), batch_size)
            used_theta = select_threshold(vlogits, vspace, data.states[vidx], data.objects[vidx],
                                          feas, beta)
        else:
            used_theta = float(theta)
        keep = feasibility_filter(space, feas, used_theta)
    scores = score_logits(logits, keep, beta)
    curve, true_cols, item_seen = curve_from_scores(scores, keep, space, states, objects)
    pred = predict(scores)
    hit = pred == true_cols
    return EvalResult(
        curve=curve,
        candidates=keep,
        state_acc=float((logits.state.argmax(1) == states).mean()),
        object_acc=float((logits.obj.argmax(1) == objects).mean()),
        seen_acc=float(hit[item_seen].mean()),
        unseen_acc=float(hit[~item_seen].mean()),
        theta=used_theta,
        extra={"n_items": int(len(idx)), "n_unseen_items": int((~item_seen).sum())},
    )


# -- persistence ------------------------------------------------------------------------------

CURVE_COLUMNS = ("bias", "seen_acc", "unseen_acc")
SUMMARY_COLUMNS = ("dataset", "world", "seed", "S", "U", "HM", "AUC")


def write_curve(path: str | Path, curve: EvalCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for row in zip(curve.bias, curve.seen_acc, curve.unseen_acc):
            w.writerow([repr(float(v)) for v in row])


def read_curve(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return tuple(np.array([float(r[c]) for r in rows]) for c in CURVE_COLUMNS)


def write_summary(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if k in ("S", "U", "HM", "AUC") else v)
                        for k, v in row.items()})


def read_summary(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("S", "U", "HM", "AUC"):
            r[k] = float(r[k])
    return rows
