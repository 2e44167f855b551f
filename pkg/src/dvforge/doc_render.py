"""Label-to-image: draw words onto a blank patch grid with exact labels.

Every word starts at the left edge of a fresh cell, occupies one cell row,
and is followed by one empty separator cell. A word spanning several cells
labels only its last cell.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import font
from .errors import ValidationError
from .label_align import LabeledSample, VisionLabel, parallel_map
from .patch_grid import GridConfig, PatchGrid
from .tokenizer import Vocabulary, first_token

logger = logging.getLogger(__name__)

RGB = tuple[int, int, int]

DARK_MAX = 95
LIGHT_MIN = 161


def _tone(color) -> str:
    if len(color) != 3 or not all(0 <= c <= 255 for c in color):
        raise ValidationError(f"color must be three channels in 0..255, got {color!r}")
    if max(color) <= DARK_MAX:
        return "dark"
    if min(color) >= LIGHT_MIN:
        return "light"
    raise ValidationError(f"color {color!r} is neither dark (all <= {DARK_MAX}) nor light (all >= {LIGHT_MIN})")


@dataclass(frozen=True)
class RenderSpec:
    cell: int = 32
    cols: int | None = None
    rows: int | None = None
    glyph_scale: int = 2
    fg_color: RGB | None = None
    bg_color: RGB | None = None
    margin_cells: int = 0
    seed: int = 0
    polarity: str = "dark_bg"

    def __post_init__(self):
        if self.glyph_scale < 1 or font.GLYPH_H * self.glyph_scale > self.cell:
            raise ValidationError(
                f"glyph height {font.GLYPH_H}x{self.glyph_scale} does not fit cell {self.cell}"
            )
        if self.margin_cells < 0:
            raise ValidationError("margin_cells must be >= 0")
        if self.polarity not in ("dark_bg", "random"):
            raise ValidationError(f"unknown polarity {self.polarity!r}")
        tones = [_tone(c) for c in (self.bg_color, self.fg_color) if c is not None]
        if len(tones) == 2 and tones[0] == tones[1]:
            raise ValidationError("bg_color and fg_color must be one dark and one light color")

    @property
    def glyph_height(self) -> int:
        return font.GLYPH_H * self.glyph_scale

    def word_width(self, word: str) -> int:
        return len(word) * font.GLYPH_W * self.glyph_scale

    def word_span(self, word: str) -> int:
        return max(1, math.ceil(self.word_width(word) / self.cell))


@dataclass(frozen=True)
class Placement:
    word: str
    start_cell: tuple[int, int]
    span_cells: int
    pixel_box: tuple[int, int, int, int]


def derive_seed(seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def pick_colors(seed: int, polarity: str = "dark_bg") -> tuple[RGB, RGB]:
    """Draw one dark and one light color; returns ``(bg, fg)``.

    Dark channels are all <= 95 and light channels all >= 161. With
    ``polarity="dark_bg"`` the dark color is the background; ``"random"``
    flips a seeded coin for the assignment.
    """
    rng = random.Random(seed)
    dark = tuple(rng.randint(0, DARK_MAX) for _ in range(3))
    light = tuple(rng.randint(LIGHT_MIN, 255) for _ in range(3))
    dark_bg = rng.random() < 0.5 if polarity == "random" else True
    return (dark, light) if dark_bg else (light, dark)


def _resolve_colors(spec: RenderSpec) -> tuple[RGB, RGB]:
    """Drawn colors, with any override taking its slot and the other slot the opposite tone."""
    bg, fg = pick_colors(spec.seed, spec.polarity)
    drawn = {_tone(bg): bg, _tone(fg): fg}
    opposite = {"dark": "light", "light": "dark"}
    if spec.bg_color is not None:
        bg = tuple(spec.bg_color)
        fg = tuple(spec.fg_color) if spec.fg_color is not None else drawn[opposite[_tone(bg)]]
    elif spec.fg_color is not None:
        fg = tuple(spec.fg_color)
        bg = drawn[opposite[_tone(fg)]]
    return bg, fg


def layout(words: Sequence[str], spec: RenderSpec, cols: int | None = None, rows: int | None = None) -> list[Placement]:
    """Place words left to right, wrapping at the right margin.

    ``rows=None`` lets the layout grow downward without limit.
    """
    cols = cols if cols is not None else spec.cols
    rows = rows if rows is not None else spec.rows
    if cols is None:
        raise ValidationError("layout needs a column count")
    m = spec.margin_cells
    usable = cols - 2 * m
    out = []
    row, col = m, m
    for word in words:
        if not word:
            raise ValidationError("cannot place an empty word")
        span = spec.word_span(word)
        if span > usable:
            raise ValidationError(
                f"word {word!r} needs {span} cells but rows hold {max(usable, 0)}"
            )
        if col + span > cols - m:
            row, col = row + 1, m
        if rows is not None and row >= rows - m:
            raise ValidationError(f"word {word!r} does not fit in {rows} rows")
        x0 = col * spec.cell
        y0 = row * spec.cell + (spec.cell - spec.glyph_height) // 2
        box = (x0, y0, x0 + spec.word_width(word), y0 + spec.glyph_height)
        out.append(Placement(word, (row, col), span, box))
        col += span + 1
    return out


def rows_needed(placements: Sequence[Placement], spec: RenderSpec) -> int:
    last = max((p.start_cell[0] for p in placements), default=spec.margin_cells - 1)
    return last + 1 + spec.margin_cells


def auto_grid(words: Sequence[str], spec: RenderSpec, cfg: GridConfig) -> tuple[int, int]:
    """Smallest ``(rows, cols)`` that fits the content inside the pixel budget.

    Candidates are ranked by token count, then squareness, then width.
    """
    if cfg.cell != spec.cell:
        raise ValidationError(f"grid cell {cfg.cell} != render cell {spec.cell}")
    area = spec.cell * spec.cell
    min_tok, max_tok = cfg.min_pixels // area, cfg.max_pixels // area
    widest = max((spec.word_span(w) for w in words), default=1)
    # every word needs its own span cells, whatever the grid shape
    if sum(spec.word_span(w) for w in words) > max_tok:
        raise ValidationError(f"{len(words)} words do not fit within max_pixels={cfg.max_pixels}")
    best = None
    for cols in range(widest + 2 * spec.margin_cells, max_tok + 1):
        if spec.cols is not None and cols != spec.cols:
            continue
        need = rows_needed(layout(words, spec, cols=cols, rows=None), spec)
        rows = max(need, 1, math.ceil(min_tok / cols))
        if spec.rows is not None:
            if spec.rows < need:
                continue
            rows = spec.rows
        if rows * cols > max_tok:
            continue
        key = (rows * cols, abs(rows - cols), cols)
        if best is None or key < best[0]:
            best = (key, rows, cols)
        if cols >= best[0][0]:
            break
    if best is None:
        raise ValidationError(f"{len(words)} words do not fit within max_pixels={cfg.max_pixels}")
    return best[1], best[2]


def render(placements: Iterable[Placement], spec: RenderSpec, rows: int, cols: int) -> np.ndarray:
    """Rasterize placements to an ``(rows*cell, cols*cell, 3)`` uint8 image."""
    bg, fg = _resolve_colors(spec)
    img = np.empty((rows * spec.cell, cols * spec.cell, 3), dtype=np.uint8)
    img[...] = bg
    for p in placements:
        mask = font.text_mask(p.word, spec.glyph_scale)
        x0, y0, x1, y1 = p.pixel_box
        img[y0:y1, x0:x1][mask] = fg
    return img


def labels_from_layout(placements: Iterable[Placement], grid: PatchGrid, v: Vocabulary, prefix: str = "") -> list[VisionLabel]:
    out = []
    for p in placements:
        row, col = p.start_cell
        idx = row * grid.cols + col + p.span_cells - 1
        out.append(VisionLabel(idx, p.word, first_token(v, p.word, prefix)))
    return out


def write_ppm(img: np.ndarray, path) -> None:
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValidationError(f"{path}: not a binary 8-bit PPM")
    w, h = int(fields[1]), int(fields[2])
    # exactly one whitespace byte separates the header from the raster
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1).reshape(h, w, 3)


@dataclass
class RenderedDoc:
    sample: LabeledSample
    image: np.ndarray
    placements: list[Placement]


def render_document(
    words: Sequence[str],
    qa: tuple[str, str],
    spec: RenderSpec,
    v: Vocabulary,
    cfg: GridConfig | None = None,
    doc_id: str = "doc",
    out_dir=None,
    png: bool = False,
    prefix: str = "",
) -> RenderedDoc:
    """Lay out, rasterize and label one document; optionally write it to disk."""
    cfg = cfg or GridConfig(cell=spec.cell, min_pixels=spec.cell**2, max_pixels=spec.cell**2 * 4096)
    rows, cols = auto_grid(words, spec, cfg)
    placements = layout(words, spec, cols=cols, rows=rows)
    grid = PatchGrid(rows, cols, spec.cell)
    img = render(placements, spec, rows, cols)
    image_ref = f"{doc_id}.ppm"
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_ppm(img, out_dir / image_ref)
        if png:
            from PIL import Image

            Image.fromarray(img).save(out_dir / f"{doc_id}.png", optimize=False)
    question, answer = qa
    sample = LabeledSample(
        image_ref=image_ref,
        grid=grid,
        prompt=question,
        response=answer,
        vision_labels=labels_from_layout(placements, grid, v, prefix),
        source="label_to_image",
        sample_id=doc_id,
        image_id=doc_id,
    )
    return RenderedDoc(sample, img, placements)


def _render_job(job) -> LabeledSample:
    rec, spec, v, cfg, out_dir, png, prefix = job
    doc_id = str(rec["doc_id"])
    dspec = replace(spec, seed=derive_seed(spec.seed, doc_id))
    r = render_document(
        rec["text"].split(), (rec["question"], rec["answer"]), dspec, v, cfg,
        doc_id=doc_id, out_dir=out_dir, png=png, prefix=prefix,
    )
    return r.sample


def render_corpus(
    docs: Iterable[dict],
    spec: RenderSpec,
    v: Vocabulary,
    cfg: GridConfig,
    out_dir,
    qa_filter: Callable[[dict], bool] | None = None,
    png: bool = False,
    prefix: str = "",
    workers: int = 1,
) -> list[LabeledSample]:
    """Render ``{doc_id, text, question, answer}`` records.

    ``qa_filter`` is an accept/reject hook for QA records, e.g. a
    perplexity-based relevance check backed by an external language model.
    Each document's colors come from a seed derived from its id, so the
    output does not depend on ``workers``.
    """
    jobs = []
    for rec in docs:
        if qa_filter is not None and not qa_filter(rec):
            logger.info("qa filter rejected %s", rec["doc_id"])
            continue
        missing = [k for k in ("doc_id", "text", "question", "answer") if k not in rec]
        if missing:
            raise ValidationError(f"document record lacks {missing}")
        jobs.append((rec, spec, v, cfg, out_dir, png, prefix))
    samples = parallel_map(_render_job, jobs, workers)
    samples.sort(key=lambda s: s.sample_id)
    return samples
