"""Synthetic rendered-extraction task for the toy model.

Each document is a handful of short words drawn onto a fixed grid by the
label-to-image renderer. Questions are extractive: transcribe everything
(``read``), copy one grid line (``line 1``), give the k-th word
(``word 3``) or the word after a given one (``after it``).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

import numpy as np

from ..doc_render import RenderSpec, derive_seed, layout, render_document
from ..dv_loss import NONE, PROMPT, RESPONSE, VISUAL
from ..label_align import LabeledSample
from ..patch_grid import GridConfig, PatchGrid
from ..tokenizer import Vocabulary, byte_vocab
from .model import BOS, EOS, NEWLINE, Inputs, patchify

TWO_LETTER_WORDS = (
    "am an as at be by do go he if in is it me my no of ok on or so to up us we"
).split()

READ_PROMPT = "read"


@dataclass(frozen=True)
class TaskConfig:
    rows: int = 2
    cols: int = 8
    cell: int = 16
    glyph_scale: int = 1
    min_words: int = 2
    max_words: int = 6
    mix: tuple[tuple[str, float], ...] = (("read", 1.0), ("line", 1.0))
    words: tuple[str, ...] = field(default_factory=lambda: tuple(TWO_LETTER_WORDS))

    def render_spec(self, seed: int = 0) -> RenderSpec:
        return RenderSpec(cell=self.cell, cols=self.cols, rows=self.rows, glyph_scale=self.glyph_scale, seed=seed)

    def grid_config(self) -> GridConfig:
        area = self.cell * self.cell
        return GridConfig(cell=self.cell, min_pixels=area, max_pixels=area * self.rows * self.cols)


@dataclass
class ToyExample:
    sample: LabeledSample
    image: np.ndarray
    words: list[str]


QUESTION_KINDS = ("read", "line", "word", "follows")


def make_question(kind: str, words: list[str], task: TaskConfig, rng: random.Random) -> tuple[str, str] | None:
    """Question/answer pair of the given kind, or None when the document cannot support it."""
    if kind == "read":
        return READ_PROMPT, " ".join(words)
    if kind == "line":
        spec = task.render_spec()
        rows: dict[int, list[str]] = {}
        for p in layout(words, spec):
            rows.setdefault(p.start_cell[0], []).append(p.word)
        k = rng.choice(sorted(rows))
        return f"line {k}", " ".join(rows[k])
    if kind == "word":
        k = rng.randrange(len(words))
        return f"word {k}", words[k]
    if kind == "follows":
        unique = [i for i, w in enumerate(words[:-1]) if words.count(w) == 1]
        if not unique:
            return None
        i = rng.choice(unique)
        return f"after {words[i]}", words[i + 1]
    raise ValueError(f"unknown question kind {kind!r}")


def make_example(words: list[str], question: str, answer: str, task: TaskConfig, seed: int, doc_id: str, v: Vocabulary) -> ToyExample:
    spec = task.render_spec(derive_seed(seed, doc_id))
    r = render_document(words, (question, answer), spec, v, task.grid_config(), doc_id=doc_id)
    return ToyExample(r.sample, r.image, list(words))


def make_dataset(n: int, seed: int, task: TaskConfig = TaskConfig(), v: Vocabulary | None = None, prefix: str = "doc") -> list[ToyExample]:
    """``n`` rendered documents with one QA pair each, fully determined by ``seed``."""
    v = v or byte_vocab()
    rng = random.Random(f"toy-data:{seed}:{prefix}")
    kinds = [k for k, _ in task.mix]
    weights = [w for _, w in task.mix]
    out = []
    for i in range(n):
        qa = None
        while qa is None:
            words = [rng.choice(task.words) for _ in range(rng.randint(task.min_words, task.max_words))]
            kind = rng.choices(kinds, weights)[0]
            qa = make_question(kind, words, task, rng)
        q, a = qa
        out.append(make_example(words, q, a, task, seed, f"{prefix}{i:05d}", v))
    return out


def text_ids(prompt: str, response: str | None) -> list[int]:
    ids = [BOS, *prompt.encode("utf-8"), NEWLINE]
    if response is not None:
        ids.extend(response.encode("utf-8"))
    return ids


def sequence_targets(sample: LabeledSample, m: int) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Per-position roles and targets for ``[visual | BOS prompt \\n response]``."""
    prompt_len = len(sample.prompt.encode("utf-8")) + 2
    resp = list(sample.response.encode("utf-8")) + [EOS]
    T = m + prompt_len + len(resp) - 1
    kinds = np.full(T, PROMPT)
    targets = np.full(T, NONE)
    kinds[:m] = VISUAL
    for lab in sample.vision_labels:
        targets[lab.token_index] = lab.first_token_id
    start = m + prompt_len - 1
    kinds[start:] = RESPONSE
    targets[start:] = resp
    V = tuple(sorted({lab.first_token_id for lab in sample.vision_labels}))
    return kinds, targets, V


def batch_inputs(examples: list[ToyExample], with_response: bool = True) -> tuple[Inputs, list[int]]:
    """Stack examples sharing one grid; text is right-padded with EOS."""
    grid = examples[0].sample.grid
    if any(e.sample.grid != grid for e in examples):
        raise ValueError("a batch must share one grid")
    seqs = [text_ids(e.sample.prompt, e.sample.response if with_response else None) for e in examples]
    L = max(len(s) for s in seqs)
    tokens = np.full((len(seqs), L), EOS, dtype=np.int64)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = s
    patches = np.stack([patchify(e.image, grid) for e in examples])
    return Inputs(patches, tokens, grid), [len(s) for s in seqs]


def regrid(example: ToyExample, grid: PatchGrid, image: np.ndarray) -> ToyExample:
    s = replace(example.sample, grid=grid, vision_labels=[])
    return ToyExample(s, image, example.words)
