"""Image-to-label: turn word-level OCR boxes into per-visual-token labels.

Words are filtered (too many subword tokens, too tall), scaled into the
resized image, and assigned to the visual token under their bottom-right
corner. A token that receives more than one word keeps none of them.
"""

from __future__ import annotations

import enum
import json
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .errors import ValidationError
from .patch_grid import GridConfig, PatchGrid, WordBox, grid_of, scale_box, smart_resize, token_index
from .tokenizer import Vocabulary, encode, first_token, token_len

logger = logging.getLogger(__name__)

MAX_WORD_TOKENS = 3
MAX_HEIGHT_CELLS = 3

FORMAT_INSTRUCTIONS = (
    "Answer the question using a single word or phrase.",
    "Answer with the exact text as it appears in the image.",
    "Respond with only the answer, no explanation.",
    "Copy the answer span verbatim from the document.",
    "Give a short answer taken directly from the image.",
    "Reply with the answer in as few words as possible.",
)


class Outcome(str, enum.Enum):
    LABELED = "labeled"
    TOO_MANY_TOKENS = "too_many_tokens"
    TOO_TALL = "too_tall"
    OUT_OF_BOUNDS = "out_of_bounds"
    CONFLICT = "conflict"


@dataclass(frozen=True)
class VisionLabel:
    token_index: int
    word: str
    first_token_id: int

    def to_list(self) -> list:
        return [self.token_index, self.word, self.first_token_id]


@dataclass
class LabeledSample:
    image_ref: str
    grid: PatchGrid
    prompt: str
    response: str
    vision_labels: list[VisionLabel]
    source: str = "image_to_label"
    sample_id: str = ""
    image_id: str = ""

    def __post_init__(self):
        if not self.response:
            raise ValidationError(f"sample {self.sample_id!r}: empty response")
        idx = [lab.token_index for lab in self.vision_labels]
        if len(set(idx)) != len(idx):
            raise ValidationError(f"sample {self.sample_id!r}: duplicate vision-label token index")
        for i in idx:
            if not 0 <= i < self.grid.token_count:
                raise ValidationError(f"sample {self.sample_id!r}: token index {i} outside grid")

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "image_id": self.image_id,
            "image_ref": self.image_ref,
            "source": self.source,
            "grid": {"rows": self.grid.rows, "cols": self.grid.cols, "cell": self.grid.cell},
            "prompt": self.prompt,
            "response": self.response,
            "vision_labels": [lab.to_list() for lab in self.vision_labels],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledSample":
        g = rec["grid"]
        return cls(
            image_ref=rec["image_ref"],
            grid=PatchGrid(g["rows"], g["cols"], g["cell"]),
            prompt=rec["prompt"],
            response=rec["response"],
            vision_labels=[VisionLabel(int(i), w, int(t)) for i, w, t in rec["vision_labels"]],
            source=rec.get("source", "image_to_label"),
            sample_id=rec.get("sample_id", ""),
            image_id=rec.get("image_id", ""),
        )


@dataclass
class CorpusStats:
    samples: int = 0
    images: int = 0
    text_labels: int = 0
    vision_labels: int = 0
    visual_tokens: int = 0
    vision_coverage: float = 0.0

    def to_record(self) -> dict:
        return {
            "samples": self.samples,
            "images": self.images,
            "text_labels": self.text_labels,
            "vision_labels": self.vision_labels,
            "visual_tokens": self.visual_tokens,
            "vision_coverage": self.vision_coverage,
        }

    def table(self, name: str = "corpus") -> str:
        head = f"{'Dataset':<16}{'Samples':>10}{'Images':>10}{'Text Labels':>13}{'Vision Labels':>15}{'Vision Coverage':>17}"
        row = (
            f"{name:<16}{self.samples:>10,}{self.images:>10,}{self.text_labels:>13,}"
            f"{self.vision_labels:>15,}{self.vision_coverage * 100:>16.2f}%"
        )
        return head + "\n" + row


def filter_word(b: WordBox, cell: int, v: Vocabulary, prefix: str = "") -> Outcome | None:
    """Return a discard reason, or None when the word is kept."""
    if token_len(v, b.text, prefix) > MAX_WORD_TOKENS:
        return Outcome.TOO_MANY_TOKENS
    if b.height > MAX_HEIGHT_CELLS * cell:
        return Outcome.TOO_TALL
    return None


def _in_bounds(b: WordBox, h: float, w: float, tol: float) -> bool:
    return b.x0 >= -tol and b.y0 >= -tol and b.x1 <= w + tol and b.y1 <= h + tol


def align_words(
    words: Iterable[WordBox],
    grid: PatchGrid,
    orig_dims: tuple[int, int],
    v: Vocabulary,
    prefix: str = "",
    edge_tolerance: float = 1.0,
) -> tuple[list[VisionLabel], list[tuple[WordBox, Outcome]]]:
    """Assign surviving words to the visual token at their bottom-right corner.

    Returns labels sorted by token index and an audit with one outcome per
    input word, in input order.
    """
    h, w = orig_dims
    dst = (grid.height, grid.width)
    audit: list[list] = []
    by_cell: dict[int, list[int]] = defaultdict(list)
    for b in words:
        if not _in_bounds(b, h, w, edge_tolerance):
            audit.append([b, Outcome.OUT_OF_BOUNDS])
            continue
        s = scale_box(b, (h, w), dst)
        reason = filter_word(s, grid.cell, v, prefix)
        if reason is not None:
            audit.append([b, reason])
            continue
        x = min(max(s.x1, 0.0), grid.width)
        y = min(max(s.y1, 0.0), grid.height)
        by_cell[token_index(grid, x, y)].append(len(audit))
        audit.append([b, Outcome.LABELED])

    labels = []
    for idx in sorted(by_cell):
        slots = by_cell[idx]
        if len(slots) > 1:
            for k in slots:
                audit[k][1] = Outcome.CONFLICT
            continue
        word = audit[slots[0]][0].text
        labels.append(VisionLabel(idx, word, first_token(v, word, prefix)))
    return labels, [(b, o) for b, o in audit]


def compute_stats(
    samples: Iterable[LabeledSample], v: Vocabulary, coverage_mode: str = "per_image"
) -> CorpusStats:
    """Corpus counts in the layout of a training-data statistics table.

    ``per_image`` counts each distinct image's tokens once with the union of
    its samples' labels; ``per_sample`` counts every sample's grid and labels.
    """
    if coverage_mode not in ("per_image", "per_sample"):
        raise ValidationError(f"unknown coverage_mode {coverage_mode!r}")
    st = CorpusStats()
    cells: dict[str, set[int]] = {}
    sizes: dict[str, int] = {}
    sample_labels = sample_tokens = 0
    for s in samples:
        st.samples += 1
        st.text_labels += len(encode(v, s.response))
        key = s.image_ref
        cells.setdefault(key, set()).update(lab.token_index for lab in s.vision_labels)
        sizes[key] = s.grid.token_count
        sample_labels += len(s.vision_labels)
        sample_tokens += s.grid.token_count
    st.images = len(cells)
    if coverage_mode == "per_image":
        st.vision_labels = sum(len(c) for c in cells.values())
        st.visual_tokens = sum(sizes.values())
    else:
        st.vision_labels = sample_labels
        st.visual_tokens = sample_tokens
    st.vision_coverage = st.vision_labels / st.visual_tokens if st.visual_tokens else 0.0
    return st


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise ValidationError(f"{path}:{lineno}: {e}") from None


def parse_ocr_record(rec: dict) -> tuple[str, int, int, list[WordBox]]:
    try:
        words = []
        for w in rec["words"]:
            if isinstance(w, dict):
                words.append(WordBox(w["text"], w["x0"], w["y0"], w["x1"], w["y1"], w.get("confidence")))
            else:
                words.append(WordBox(*w))
        return str(rec["image_id"]), int(rec["width"]), int(rec["height"]), words
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed OCR record {rec.get('image_id')!r}: {e}") from None


def pick_instruction(choice, rng: random.Random) -> str | None:
    if choice in (None, "", "none"):
        return None
    if choice == "random":
        return rng.choice(FORMAT_INSTRUCTIONS)
    try:
        return FORMAT_INSTRUCTIONS[int(choice)]
    except (ValueError, IndexError):
        raise ValidationError(
            f"instruction must be 'none', 'random' or an index below {len(FORMAT_INSTRUCTIONS)}, got {choice!r}"
        ) from None


def build_prompt(question: str, instruction: str | None) -> str:
    return question if instruction is None else f"{question}\n{instruction}"


@dataclass
class AlignConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    qa_per_image: int = 0
    instruction: str = "none"
    label_prefix: str = ""
    seed: int = 0


def _label_image(job) -> tuple[list[LabeledSample], list[dict]]:
    rec, pairs, cfg, v = job
    image_id, width, height, words = parse_ocr_record(rec)
    rng = random.Random(f"{cfg.seed}:{image_id}")
    if 0 < cfg.qa_per_image < len(pairs):
        pairs = sorted(rng.sample(pairs, cfg.qa_per_image), key=lambda p: p[0])
    h2, w2 = smart_resize(height, width, cfg.grid)
    grid = grid_of(h2, w2, cfg.grid.cell)
    labels, audit = align_words(words, grid, (height, width), v, cfg.label_prefix)
    rows = [
        {"image_id": image_id, "word": b.text, "box": [b.x0, b.y0, b.x1, b.y1], "outcome": outcome.value}
        for b, outcome in audit
    ]
    samples = []
    for k, pair in pairs:
        instr = pick_instruction(cfg.instruction, rng)
        samples.append(
            LabeledSample(
                image_ref=rec.get("image_path", image_id),
                grid=grid,
                prompt=build_prompt(pair["question"], instr),
                response=pair["answer"],
                vision_labels=list(labels),
                source="image_to_label",
                sample_id=f"{image_id}#{k:04d}",
                image_id=image_id,
            )
        )
    return samples, rows


def build_samples(
    ocr_file,
    qa_file,
    cfg: AlignConfig,
    v: Vocabulary,
    audit_sink: Callable[[dict], None] | None = None,
    workers: int = 1,
) -> list[LabeledSample]:
    """Join OCR records with QA pairs by image id and label every sample.

    ``qa_per_image > 0`` keeps that many QA pairs per image, chosen by a
    sampler seeded from ``(seed, image_id)``. Images are independent, so
    ``workers > 1`` shards them over processes; output is sorted by
    ``(image_id, sample_id)`` and audit rows keep input order either way.
    """
    qa: dict[str, list[dict]] = defaultdict(list)
    for rec in read_jsonl(qa_file):
        qa[str(rec["image_id"])].append(rec)

    jobs = []
    for rec in read_jsonl(ocr_file):
        image_id = str(rec.get("image_id", ""))
        pairs = list(enumerate(qa.get(image_id, [])))
        if not pairs:
            logger.debug("image %s has no QA pairs", image_id)
            continue
        jobs.append((rec, pairs, cfg, v))

    out: list[LabeledSample] = []
    for samples, rows in parallel_map(_label_image, jobs, workers):
        out.extend(samples)
        if audit_sink is not None:
            for row in rows:
                audit_sink(row)
    out.sort(key=lambda s: (s.image_id, s.sample_id))
    return out


def parallel_map(fn, items: list, workers: int = 1) -> list:
    """Order-preserving map, over a process pool when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def write_samples(samples: Iterable[LabeledSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def read_samples(path) -> list[LabeledSample]:
    return [LabeledSample.from_record(r) for r in read_jsonl(path)]


def write_jsonl(records: Iterable[dict], path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")
