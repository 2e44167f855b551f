"""Text cross-entropy, one-step vision loss with Vision Smoothing, and their sum.

All math is float64. A :class:`SequenceBatch` holds one sequence; the
``targets`` entry at a position is what that position's logits must
predict (``NONE`` where nothing is supervised).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

VISUAL, PROMPT, RESPONSE = 0, 1, 2
NONE = -1
DENOMINATORS = ("labeled_count", "all_visual")


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.3
    lam: float = 2e-3
    vision_denominator: str = "labeled_count"

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.vision_denominator not in DENOMINATORS:
            raise ValueError(f"vision_denominator must be one of {DENOMINATORS}")


@dataclass
class SequenceBatch:
    kinds: np.ndarray
    targets: np.ndarray
    logits: np.ndarray
    vision_label_set: tuple[int, ...] = ()

    def __post_init__(self):
        self.kinds = np.asarray(self.kinds, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.vision_label_set = tuple(sorted(set(int(t) for t in self.vision_label_set)))
        T = len(self.kinds)
        if self.targets.shape != (T,) or self.logits.ndim != 2 or self.logits.shape[0] != T:
            raise ValueError("kinds, targets and logits must agree on sequence length")
        resp = self.kinds == RESPONSE
        if np.any(self.targets[resp] == NONE):
            raise ValueError("every response position needs a target")
        if np.any(self.targets[self.kinds == PROMPT] != NONE):
            raise ValueError("prompt positions carry no targets")
        vis = self.labeled_positions
        if len(vis) and not self.vision_label_set:
            raise ValueError("visual targets present but vision_label_set is empty")
        missing = set(self.targets[vis].tolist()) - set(self.vision_label_set)
        if missing:
            raise ValueError(f"visual targets {sorted(missing)} not in vision_label_set")

    @property
    def response_positions(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == RESPONSE)

    @property
    def labeled_positions(self) -> np.ndarray:
        return np.flatnonzero((self.kinds == VISUAL) & (self.targets != NONE))

    @property
    def visual_count(self) -> int:
        return int(np.sum(self.kinds == VISUAL))


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("log_softmax input contains NaN or Inf")
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(x))


def text_loss(batch: SequenceBatch) -> float:
    pos = batch.response_positions
    if len(pos) == 0:
        raise ValueError("text loss needs at least one response position")
    lp = log_softmax(batch.logits[pos])
    return float(-np.mean(lp[np.arange(len(pos)), batch.targets[pos]]))


def smoothing_weights(target_id: int, V: Sequence[int], beta: float) -> dict[int, float]:
    """Target distribution for one labeled visual token.

    ``1 - beta`` on its own label, ``beta / (|V| - 1)`` on every other label
    in the image; a single-label image degenerates to plain cross-entropy.
    """
    labels = sorted(set(int(t) for t in V))
    if target_id not in labels:
        raise ValueError(f"target {target_id} not among the image's vision labels")
    if len(labels) == 1:
        return {target_id: 1.0}
    other = beta / (len(labels) - 1)
    return {t: (1.0 - beta if t == target_id else other) for t in labels}


def _vision_targets(batch: SequenceBatch, beta: float) -> tuple[np.ndarray, np.ndarray]:
    pos = batch.labeled_positions
    q = np.zeros((len(pos), batch.logits.shape[1]))
    for r, p in enumerate(pos):
        for t, w in smoothing_weights(int(batch.targets[p]), batch.vision_label_set, beta).items():
            q[r, t] = w
    return pos, q


def _vision_denominator(batch: SequenceBatch, cfg: LossConfig, n_labeled: int) -> int:
    return n_labeled if cfg.vision_denominator == "labeled_count" else batch.visual_count


def vision_loss(batch: SequenceBatch, cfg: LossConfig = LossConfig()) -> float:
    pos, q = _vision_targets(batch, cfg.beta)
    if len(pos) == 0:
        raise ValueError("vision loss inapplicable: no labeled visual positions")
    per_pos = -np.sum(q * log_softmax(batch.logits[pos]), axis=1)
    return float(np.sum(per_pos) / _vision_denominator(batch, cfg, len(pos)))


def combined_loss(batch: SequenceBatch, cfg: LossConfig = LossConfig()) -> tuple[float, float, float]:
    lt = text_loss(batch)
    lv = vision_loss(batch, cfg) if len(batch.labeled_positions) else 0.0
    return lt + cfg.lam * lv, lt, lv


def loss_gradient(batch: SequenceBatch, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """d(combined_loss)/d(logits), same shape as ``batch.logits``."""
    grad = np.zeros_like(batch.logits)
    pos = batch.response_positions
    if len(pos) == 0:
        raise ValueError("text loss needs at least one response position")
    g = softmax(batch.logits[pos])
    g[np.arange(len(pos)), batch.targets[pos]] -= 1.0
    grad[pos] = g / len(pos)
    vpos, q = _vision_targets(batch, cfg.beta)
    if len(vpos) and cfg.lam:
        denom = _vision_denominator(batch, cfg, len(vpos))
        grad[vpos] += cfg.lam * (softmax(batch.logits[vpos]) - q) / denom
    return grad


def mean_combined_loss(
    batches: Sequence[SequenceBatch], cfg: LossConfig = LossConfig()
) -> tuple[float, float, float, list[np.ndarray]]:
    """Per-sample losses averaged uniformly over samples, with gradients."""
    parts = np.array([combined_loss(b, cfg) for b in batches])
    grads = [loss_gradient(b, cfg) / len(batches) for b in batches]
    total, lt, lv = parts.mean(axis=0)
    return float(total), float(lt), float(lv), grads
