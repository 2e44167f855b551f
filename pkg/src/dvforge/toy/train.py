"""Training, evaluation and probing for the toy model."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..dv_loss import LossConfig, SequenceBatch, combined_loss, mean_combined_loss
from ..errors import TrainingDiverged, ValidationError
from .data import ToyExample, batch_inputs, sequence_targets
from .model import EOS, Inputs, ToyConfig, backward, forward, init_params

logger = logging.getLogger(__name__)

MAGIC = b"DVTOYPRM"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    step: int
    text_loss: float
    vision_loss: float
    extraction_accuracy: float
    vision_top1: float
    train_loss: float


@dataclass
class TrainReport:
    header: dict = field(default_factory=dict)
    checkpoints: list[Checkpoint] = field(default_factory=list)

    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    def records(self) -> list[dict]:
        return [{"header": self.header}] + [asdict(c) for c in self.checkpoints]


def sequence_batches(logits: np.ndarray, examples: Sequence[ToyExample]) -> list[SequenceBatch]:
    m = examples[0].sample.grid.token_count
    out = []
    for b, e in enumerate(examples):
        kinds, targets, V = sequence_targets(e.sample, m)
        out.append(SequenceBatch(kinds, targets, logits[b, : len(kinds)], V))
    return out


def loss_and_grads(params: dict, cfg: ToyConfig, examples: Sequence[ToyExample], loss_cfg: LossConfig):
    """Mean combined loss over ``examples`` and its gradient for every parameter."""
    inp, _ = batch_inputs(list(examples))
    logits, cache = forward(params, cfg, inp, keep_cache=True)
    batches = sequence_batches(logits, examples)
    total, lt, lv, grads = mean_combined_loss(batches, loss_cfg)
    dlogits = np.zeros_like(logits)
    for b, gb in enumerate(grads):
        dlogits[b, : len(gb)] = gb
    return (total, lt, lv), backward(params, cfg, inp, cache, dlogits)


def _batches_by_grid(examples: Sequence[ToyExample], size: int):
    groups: dict = {}
    for i, e in enumerate(examples):
        groups.setdefault(e.sample.grid, []).append(i)
    for idx in groups.values():
        for s in range(0, len(idx), size):
            yield idx[s : s + size]


def greedy_decode(params: dict, cfg: ToyConfig, examples: Sequence[ToyExample], max_new: int = 48, batch_size: int = 64) -> list[str]:
    """Greedy answers for each example's prompt, stopping at EOS."""
    out: list[str] = [""] * len(examples)
    for idx in _batches_by_grid(examples, batch_size):
        group = [examples[i] for i in idx]
        inp, lens = batch_inputs(group, with_response=False)
        m = inp.patches.shape[1]
        seqs = [list(inp.tokens[b, :n]) for b, n in enumerate(lens)]
        done = [False] * len(group)
        gen: list[list[int]] = [[] for _ in group]
        limit = min(max_new, cfg.max_seq - m - max(lens))
        for _ in range(limit):
            L = max(len(s) for s in seqs)
            tokens = np.full((len(seqs), L), EOS, dtype=np.int64)
            for b, s in enumerate(seqs):
                tokens[b, : len(s)] = s
            logits = forward(params, cfg, Inputs(inp.patches, tokens, inp.grid))
            for b, s in enumerate(seqs):
                if done[b]:
                    continue
                nxt = int(np.argmax(logits[b, m + len(s) - 1]))
                if nxt == EOS:
                    done[b] = True
                else:
                    s.append(nxt)
                    gen[b].append(nxt)
            if all(done):
                break
        for b, i in enumerate(idx):
            out[i] = bytes(t for t in gen[b] if t < 256).decode("utf-8", errors="replace")
    return out


def evaluate_extraction(params: dict, cfg: ToyConfig, examples: Sequence[ToyExample]) -> float:
    """Exact-match rate of greedy answers against the reference responses."""
    if not examples:
        return 0.0
    preds = greedy_decode(params, cfg, examples)
    return float(np.mean([p == e.sample.response for p, e in zip(preds, examples)]))


def evaluate(params: dict, cfg: ToyConfig, examples: Sequence[ToyExample], loss_cfg: LossConfig, batch_size: int = 64) -> dict:
    """Teacher-forced losses and vision-label top-1 accuracy on ``examples``."""
    lts, lvs, hits, labeled = [], [], 0, 0
    for idx in _batches_by_grid(examples, batch_size):
        group = [examples[i] for i in idx]
        inp, _ = batch_inputs(group)
        logits = forward(params, cfg, inp)
        for sb in sequence_batches(logits, group):
            _, lt, lv = combined_loss(sb, loss_cfg)
            lts.append(lt)
            lvs.append(lv)
            pos = sb.labeled_positions
            hits += int(np.sum(np.argmax(sb.logits[pos], axis=1) == sb.targets[pos]))
            labeled += len(pos)
    return {
        "text_loss": float(np.mean(lts)),
        "vision_loss": float(np.mean(lvs)),
        "vision_top1": hits / labeled if labeled else 0.0,
    }


def train(
    cfg: ToyConfig,
    train_set: Sequence[ToyExample],
    val_set: Sequence[ToyExample],
    loss_cfg: LossConfig,
    callback: Callable[[Checkpoint], None] | None = None,
) -> tuple[dict, TrainReport]:
    """Plain SGD at a constant learning rate, checkpointing every ``eval_every`` steps.

    Batches are drawn from a seeded permutation of ``train_set``; the run is
    a pure function of its arguments.
    """
    cfg.check_trainable()
    if not train_set:
        raise ValidationError("empty training set")
    params = init_params(cfg)
    report = TrainReport(header={
        "config_hash": cfg.digest(),
        "loss": asdict(loss_cfg),
        "optimizer": "sgd, constant learning rate",
        "note": "patch embedder is trained from scratch (no pretrained vision encoder)",
    })
    rng = np.random.default_rng(cfg.seed + 1)
    order = rng.permutation(len(train_set))
    cursor = 0
    for step in range(1, cfg.steps + 1):
        if cursor + cfg.batch_size > len(order):
            order, cursor = rng.permutation(len(train_set)), 0
        batch = [train_set[i] for i in order[cursor : cursor + cfg.batch_size]]
        cursor += cfg.batch_size
        (total, _, _), grads = loss_and_grads(params, cfg, batch, loss_cfg)
        if not np.isfinite(total):
            raise TrainingDiverged(step, report)
        if cfg.grad_clip > 0:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > cfg.grad_clip:
                for g in grads.values():
                    g *= cfg.grad_clip / norm
        for k, g in grads.items():
            params[k] -= cfg.learning_rate * g
        if step % cfg.eval_every == 0 or step == cfg.steps:
            ev = evaluate(params, cfg, val_set, loss_cfg)
            ck = Checkpoint(
                step=step,
                text_loss=ev["text_loss"],
                vision_loss=ev["vision_loss"],
                extraction_accuracy=evaluate_extraction(params, cfg, val_set),
                vision_top1=ev["vision_top1"],
                train_loss=float(total),
            )
            report.checkpoints.append(ck)
            logger.info("step %d  Lt=%.4f  Lv=%.4f  acc=%.3f  top1=%.3f", step, ck.text_loss, ck.vision_loss, ck.extraction_accuracy, ck.vision_top1)
            if callback:
                callback(ck)
    return params, report


def probe_visual_logits(params: dict, cfg: ToyConfig, example: ToyExample, k: int = 5) -> np.ndarray:
    """Top-``k`` token ids (highest logit first) at every visual position."""
    inp, _ = batch_inputs([example], with_response=False)
    logits = forward(params, cfg, inp)[0, : inp.patches.shape[1]]
    return np.argsort(-logits, axis=1, kind="stable")[:, :k]


def probe_table(ids: np.ndarray, cols: int) -> str:
    def show(t: int) -> str:
        return chr(t) if 32 < t < 127 else f"<{t}>"

    lines = []
    for i, row in enumerate(ids):
        r, c = divmod(i, cols)
        lines.append(f"({r:2d},{c:2d}) " + " ".join(show(int(t)) for t in row))
    return "\n".join(lines)


# --- parameter files ----------------------------------------------------


def save_params(path, params: dict, cfg: ToyConfig) -> None:
    """Flat binary: magic, version, header length, JSON header, float64 tensors.

    Tensors are always stored as little-endian float64 whatever the compute dtype.
    """
    directory, offset = [], 0
    for name, arr in params.items():
        n = arr.size * 8
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": n})
        offset += n
    header = json.dumps(
        {"version": FORMAT_VERSION, "config": asdict(cfg), "config_hash": cfg.digest(), "tensors": directory},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> tuple[ToyConfig, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValidationError(f"{path}: not a toy parameter file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format version {version}")
    header = json.loads(data[16 : 16 + hlen])
    cfg = ToyConfig(**header["config"])
    if cfg.digest() != header["config_hash"]:
        raise ValidationError(f"{path}: config hash mismatch")
    base = 16 + hlen
    params = {}
    for t in header["tensors"]:
        arr = np.frombuffer(data, dtype="<f8", count=t["nbytes"] // 8, offset=base + t["offset"])
        params[t["name"]] = arr.reshape(t["shape"]).astype(cfg.dtype)
    return cfg, params
