"""OCR-style evaluation: corpus generators, edit-distance metrics and resolution sweeps."""

from __future__ import annotations

import math
import random
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .patch_grid import PatchGrid

TASKS = ("contextual", "noncontextual", "extraction")


@dataclass
class EvalRecord:
    task: str
    prediction: str
    truth: str
    ned: float
    exact: bool
    resolution: int
    doc_id: str = ""

    def to_record(self) -> dict:
        return asdict(self)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs (two-row dynamic programme)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalize(s: str, lowercase: bool = False) -> str:
    s = s.strip()
    return s.lower() if lowercase else s


def ned(pred: str, truth: str, lowercase: bool = False) -> float:
    """Normalized edit distance in [0, 1] after trimming; two empty strings score 0."""
    pred, truth = normalize(pred, lowercase), normalize(truth, lowercase)
    longest = max(len(pred), len(truth))
    if longest == 0:
        return 0.0
    return edit_distance(pred, truth) / longest


def make_record(task: str, prediction: str, truth: str, resolution: int, doc_id: str = "", lowercase: bool = False) -> EvalRecord:
    d = ned(prediction, truth, lowercase)
    return EvalRecord(task, prediction, truth, d, d == 0.0, resolution, doc_id)


# --- corpus generation --------------------------------------------------

_WORD_RE = re.compile(r"\S+")


def word_frequencies(texts: Iterable[str]) -> dict[str, int]:
    counts: Counter = Counter()
    for t in texts:
        counts.update(_WORD_RE.findall(t))
    return dict(sorted(counts.items()))


def gen_noncontextual(
    freq: Mapping[str, float], seed: int, min_chars: int = 200, max_chars: int = 500
) -> list[str]:
    """Frequency-weighted i.i.d. word sequence of ``min_chars``..``max_chars`` characters.

    Length counts single spaces between words. Words are appended until the
    text first reaches ``min_chars``; whole words past ``max_chars`` are
    dropped.
    """
    if not freq:
        raise ValidationError("word frequency table is empty")
    if not 0 < min_chars <= max_chars:
        raise ValidationError(f"need 0 < min_chars <= max_chars, got {min_chars}, {max_chars}")
    words = sorted(freq)
    weights = [float(freq[w]) for w in words]
    rng = random.Random(seed)
    out: list[str] = []
    length = 0
    while length < min_chars:
        w = rng.choices(words, weights)[0]
        length += len(w) + (1 if out else 0)
        out.append(w)
    while length > max_chars and len(out) > 1:
        length -= len(out.pop()) + 1
    return out


def gen_contextual(passages: Sequence[str], seed: int, n: int, min_chars: int = 0, max_chars: int | None = None) -> list[str]:
    """Sample ``n`` passages (with replacement when ``n`` exceeds the corpus), trimmed to whole words."""
    pool = [p for p in passages if len(p.strip()) >= max(min_chars, 1)]
    if not pool:
        raise ValidationError("no passages satisfy the length bounds")
    rng = random.Random(seed)
    picks = rng.sample(pool, n) if n <= len(pool) else [rng.choice(pool) for _ in range(n)]
    out = []
    for p in picks:
        words = p.split()
        if max_chars is not None:
            kept, length = [], -1
            for w in words:
                if length + 1 + len(w) > max_chars:
                    break
                kept.append(w)
                length += 1 + len(w)
            words = kept or words[:1]
        out.append(" ".join(words))
    return out


# --- resolution sweeps --------------------------------------------------


def grid_for_tokens(tokens: int, aspect: float, cell: int, max_distortion: float = 2.0) -> PatchGrid | None:
    """Grid with exactly ``tokens`` cells closest to the aspect ratio ``rows/cols``."""
    best = None
    for rows in range(1, tokens + 1):
        if tokens % rows:
            continue
        cols = tokens // rows
        dist = abs(math.log((rows / cols) / aspect))
        if best is None or dist < best[0]:
            best = (dist, rows, cols)
    if best is None or best[0] > math.log(max_distortion):
        return None
    return PatchGrid(best[1], best[2], cell)


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.fromarray(image).resize((width, height), Image.BILINEAR))


def resolution_sweep(
    eval_fn: Callable[[np.ndarray, PatchGrid], str],
    image: np.ndarray,
    truth: str,
    token_counts: Sequence[int],
    cell: int,
    task: str = "contextual",
    doc_id: str = "",
) -> tuple[list[EvalRecord], list[int]]:
    """Resize one document image to each token budget and score ``eval_fn``.

    Returns records for realizable budgets and the list of skipped ones.
    """
    h, w = image.shape[:2]
    records, skipped = [], []
    for t in token_counts:
        grid = grid_for_tokens(t, h / w, cell)
        if grid is None:
            skipped.append(t)
            continue
        resized = image if (grid.height, grid.width) == (h, w) else resize_image(image, grid.height, grid.width)
        pred = eval_fn(resized, grid)
        records.append(make_record(task, pred, truth, grid.token_count, doc_id))
    return records, skipped


@dataclass
class ScorePolicy:
    lowercase: bool = True
    contains: bool = False


def score_answers(records: Sequence[EvalRecord], policy: ScorePolicy = ScorePolicy()) -> dict:
    """Mean NED, exact-match rate and count under a normalization policy."""
    if not records:
        return {"count": 0, "mean_ned": None, "exact_match": None}
    neds, hits = [], []
    for r in records:
        p, t = normalize(r.prediction, policy.lowercase), normalize(r.truth, policy.lowercase)
        neds.append(ned(p, t))
        hits.append(t in p if policy.contains else p == t)
    return {
        "count": len(records),
        "mean_ned": float(np.mean(neds)),
        "exact_match": float(np.mean(hits)),
    }
