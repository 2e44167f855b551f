"""Self-checks for the loss and the toy model: identities and finite-difference gradients."""

from __future__ import annotations

import time
from decimal import Decimal, localcontext
from dataclasses import dataclass

import numpy as np

from .dv_loss import (
    NONE, PROMPT, RESPONSE, VISUAL,
    LossConfig, SequenceBatch, combined_loss, log_softmax, loss_gradient, mean_combined_loss,
    smoothing_weights, text_loss, vision_loss,
)
from .patch_grid import PatchGrid


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3e} (threshold {self.threshold:.0e}, {self.seconds:.2f}s)"


def random_batch(rng: np.random.Generator, vocab: int = 32, m: int = 6, n_prompt: int = 3, n_resp: int = 5, scale: float = 3.0) -> SequenceBatch:
    """One sequence with ``m`` visual positions (about half labeled), a prompt and a response."""
    kinds = np.array([VISUAL] * m + [PROMPT] * n_prompt + [RESPONSE] * n_resp)
    targets = np.full(len(kinds), NONE)
    labeled = rng.random(m) < 0.5
    labeled[rng.integers(m)] = True
    targets[:m][labeled] = rng.integers(0, vocab, labeled.sum())
    targets[m + n_prompt :] = rng.integers(0, vocab, n_resp)
    V = set(targets[:m][labeled].tolist()) | set(rng.integers(0, vocab, 2).tolist())
    logits = rng.normal(0, scale, (len(kinds), vocab))
    return SequenceBatch(kinds, targets, logits, tuple(V))


def _timed(name: str, threshold: float, fn, lower_is_pass: bool = True) -> CheckResult:
    t = time.perf_counter()
    value = float(fn())
    if lower_is_pass:
        ok = value == 0.0 if threshold == 0.0 else value < threshold
    else:
        ok = value > threshold
    return CheckResult(name, ok, value, threshold, time.perf_counter() - t)


def beta_zero_identity(seed: int, n: int = 100) -> float:
    """Max relative gap between beta=0 vision loss and plain first-token cross-entropy."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        b = random_batch(rng)
        pos = b.labeled_positions
        ce = -np.mean(log_softmax(b.logits[pos])[np.arange(len(pos)), b.targets[pos]])
        lv = vision_loss(b, LossConfig(beta=0.0))
        worst = max(worst, abs(lv - ce) / abs(ce))
    return worst


def lambda_zero_identity(seed: int, n: int = 100) -> float:
    """Largest |combined - text| with lambda=0 (exactly zero when the identity holds)."""
    rng = np.random.default_rng(seed)
    return max(abs(combined_loss(b, LossConfig(lam=0.0))[0] - text_loss(b)) for b in (random_batch(rng) for _ in range(n)))


def smoothing_gap() -> float:
    """Distance of the smoothing weights from their closed forms."""
    w = smoothing_weights(1, (1, 2, 3), 0.3)
    gaps = [abs(w[1] - 0.7), abs(w[2] - 0.15), abs(w[3] - 0.15)]
    gaps.append(abs(smoothing_weights(4, (4,), 0.3)[4] - 1.0))
    w0 = smoothing_weights(2, (1, 2, 3), 0.0)
    gaps += [abs(w0[2] - 1.0), abs(w0[1]), abs(w0[3])]
    return max(gaps)


def _rel_err(num: np.ndarray, ana: np.ndarray, floor: float = 1e-8) -> float:
    return float(np.max(np.abs(num - ana) / np.maximum(np.maximum(np.abs(num), np.abs(ana)), floor)))


def _decimal_row_gradient(row, kind: int, target: int, V, n_resp: int, denom: int, cfg: LossConfig) -> list[float]:
    """Central differences of one position's loss term, in 50-digit decimal arithmetic.

    Terms of other positions do not depend on this row, so they cancel
    exactly in the difference and are skipped.
    """
    if kind != RESPONSE and target == NONE:
        return [0.0] * len(row)
    h = Decimal("1e-20")
    z = [Decimal(float(x)) for x in row]
    ez = [x.exp() for x in z]
    total = sum(ez, Decimal(0))
    if kind == RESPONSE:
        weights = {target: Decimal(1) / n_resp}
    else:
        beta, scale = Decimal(repr(cfg.beta)), Decimal(repr(cfg.lam)) / denom
        if len(V) == 1:
            weights = {target: scale}
        else:
            other = beta / (len(V) - 1)
            weights = {t: scale * (1 - beta if t == target else other) for t in V}
    wsum = sum(weights.values(), Decimal(0))
    out = []
    for j, x in enumerate(z):
        # term(z) = wsum * logsumexp(z) - sum_t w_t z_t
        up = (total - ez[j] + (x + h).exp()).ln()
        down = (total - ez[j] + (x - h).exp()).ln()
        d = wsum * (up - down) - weights.get(j, Decimal(0)) * 2 * h
        out.append(float(d / (2 * h)))
    return out


def loss_gradient_error(seed: int, n: int = 100, vocab: int = 16, cfg: LossConfig = LossConfig()) -> float:
    """Max relative error of the analytic logit gradient against central differences.

    The differences are taken in 50-digit decimal arithmetic so that rounding
    does not swamp the small, lambda-scaled vision entries.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    with localcontext() as ctx:
        ctx.prec = 50
        for _ in range(n):
            b = random_batch(rng, vocab=vocab, scale=1.0)
            ana = loss_gradient(b, cfg)
            n_resp = len(b.response_positions)
            denom = len(b.labeled_positions) if cfg.vision_denominator == "labeled_count" else b.visual_count
            num = np.array([
                _decimal_row_gradient(b.logits[p], int(b.kinds[p]), int(b.targets[p]), b.vision_label_set, n_resp, denom, cfg)
                for p in range(len(b.kinds))
            ])
            worst = max(worst, _rel_err(num, ana, floor=1e-300))
    return worst


def model_gradient_error(seed: int, cfg: LossConfig = LossConfig(), h: float = 1e-5) -> float:
    """Full-model parameter gradients vs central differences on a micro configuration."""
    from .toy.model import Inputs, ToyConfig, backward, forward, init_params

    tc = ToyConfig(d_model=8, n_layers=2, n_heads=2, vocab_size=16, mixer_layers=1, cell=2,
                   max_rows=3, max_cols=3, max_seq=12, init_scale=0.5, seed=seed)
    rng = np.random.default_rng(seed)
    params = {k: v + rng.normal(0, 0.1, v.shape) for k, v in init_params(tc).items()}
    grid = PatchGrid(2, 2, 2)
    B = 2
    inp = Inputs(rng.random((B, grid.token_count, tc.patch_dim)), rng.integers(0, 16, (B, 6)), grid)
    kinds = np.array([VISUAL] * 4 + [PROMPT] * 2 + [RESPONSE] * 4)
    targets = np.array([3, NONE, 5, 7, NONE, NONE, 1, 2, 3, 4])

    def loss(p, with_grad=False):
        logits, cache = forward(p, tc, inp, keep_cache=True)
        bs = [SequenceBatch(kinds, targets, logits[b], (3, 5, 7, 9)) for b in range(B)]
        total, _, _, gs = mean_combined_loss(bs, cfg)
        if with_grad:
            return total, backward(p, tc, inp, cache, np.stack(gs))
        return total

    _, grads = loss(params, True)
    worst = 0.0
    for k, arr in params.items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(*arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss(params)
            arr[idx] = old - h
            down = loss(params)
            arr[idx] = old
            num[idx] = (up - down) / (2 * h)
        worst = max(worst, _rel_err(num, grads[k], floor=1e-6))
    return worst


def loss_suite(seed: int, include_model: bool = True) -> list[CheckResult]:
    """Identity and gradient checks, as run by ``dv-forge losscheck``."""
    out = [
        _timed("vision loss at beta=0 equals first-token CE (rel)", 1e-12, lambda: beta_zero_identity(seed)),
        _timed("combined loss at lambda=0 equals text loss (abs)", 0.0, lambda: lambda_zero_identity(seed)),
        _timed("smoothing weights closed form (abs)", 0.0, smoothing_gap),
        _timed("logit gradient vs finite differences (rel)", 1e-6, lambda: loss_gradient_error(seed)),
    ]
    if include_model:
        out.append(_timed("toy model gradient vs finite differences (rel)", 1e-4, lambda: model_gradient_error(seed)))
    return out
