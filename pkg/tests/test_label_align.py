import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvforge.errors import ValidationError
from dvforge.label_align import (
    FORMAT_INSTRUCTIONS, AlignConfig, LabeledSample, Outcome, VisionLabel, align_words, build_prompt,
    build_samples, compute_stats, filter_word, parse_ocr_record, pick_instruction, read_samples, write_samples,
)
from dvforge.patch_grid import GridConfig, PatchGrid, WordBox
from dvforge.tokenizer import Vocabulary, byte_vocab

from oracles import brute_align, random_layout

V = Vocabulary((("the", 300), ("mod", 301), ("el", 302)), 0)
G8 = PatchGrid(8, 8, 32)


def box(text, x1, y1, w=10, h=10):
    return WordBox(text, x1 - w, y1 - h, x1, y1)


def test_filter_examples():
    assert filter_word(WordBox("the", 0, 0, 30, 20), 32, V) is None
    assert filter_word(WordBox("abcd", 0, 0, 30, 20), 32, V) is Outcome.TOO_MANY_TOKENS
    assert filter_word(WordBox("the", 0, 0, 30, 97), 32, V) is Outcome.TOO_TALL
    assert filter_word(WordBox("the", 0, 0, 30, 96), 32, V) is None


def test_filter_three_tokens_is_kept():
    assert filter_word(WordBox("abc", 0, 0, 1, 1), 32, V) is None
    assert filter_word(WordBox("model", 0, 0, 1, 1), 32, V) is None


def test_two_words_two_tokens():
    # corners at (70, 40) -> 10 and (100, 100) -> row 3 col 3 = 27
    labels, audit = align_words([box("the", 70, 40), box("el", 100, 100)], G8, (256, 256), V)
    assert [(lab.token_index, lab.word, lab.first_token_id) for lab in labels] == [(10, "the", 300), (27, "el", 302)]
    assert [o for _, o in audit] == [Outcome.LABELED, Outcome.LABELED]


def test_conflict_drops_both():
    labels, audit = align_words([box("the", 70, 40), box("el", 75, 60, w=3, h=3)], G8, (256, 256), V)
    assert labels == []
    assert [o for _, o in audit] == [Outcome.CONFLICT, Outcome.CONFLICT]


def test_conflict_leaves_other_tokens():
    words = [box("the", 70, 40), box("el", 75, 60, w=3, h=3), box("mod", 200, 200)]
    labels, _ = align_words(words, G8, (256, 256), V)
    assert [lab.word for lab in labels] == ["mod"]


def test_empty_words():
    assert align_words([], G8, (256, 256), V) == ([], [])


def test_scaling_before_indexing():
    # 128x128 source doubled to 256x256: corner (35, 20) -> (70, 40) -> token 10
    labels, _ = align_words([box("the", 35, 20, w=5, h=5)], G8, (128, 128), V)
    assert labels[0].token_index == 10


def test_height_filter_in_resized_space():
    # 40px tall at source, 3.2x upscale -> 128 > 96
    _, audit = align_words([WordBox("the", 0, 0, 10, 40)], PatchGrid(8, 8, 32), (80, 80), V)
    assert audit[0][1] is Outcome.TOO_TALL


def test_edge_tolerance_and_clamp():
    words = [WordBox("the", 240, 240, 256.8, 256.9), WordBox("el", 0, 0, 10, 258)]
    labels, audit = align_words(words, G8, (256, 256), V)
    assert [o for _, o in audit] == [Outcome.LABELED, Outcome.OUT_OF_BOUNDS]
    assert labels[0].token_index == 63


def test_first_token_with_prefix():
    v = Vocabulary((("▁the", 7), ("the", 8)), 300)
    labels, _ = align_words([box("the", 70, 40)], G8, (256, 256), v, prefix="▁")
    assert labels[0].first_token_id == 7


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_align_matches_brute_force(seed):
    words, grid, dims = random_layout(random.Random(seed))
    labels, audit = align_words(words, grid, dims, V)
    cells, outcomes = brute_align(words, grid, dims, V)
    assert {lab.token_index: (lab.word, lab.first_token_id) for lab in labels} == cells
    assert [o.value for _, o in audit] == outcomes


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_audit_covers_every_word_once(seed):
    words, grid, dims = random_layout(random.Random(seed))
    labels, audit = align_words(words, grid, dims, V)
    assert [b for b, _ in audit] == words
    idx = [lab.token_index for lab in labels]
    assert len(idx) == len(set(idx)) and idx == sorted(idx)
    assert sum(o is Outcome.LABELED for _, o in audit) == len(labels)


def sample(grid, labels, image_ref="img", sid="s"):
    return LabeledSample(image_ref, grid, "q", "ans", labels, sample_id=sid, image_id=image_ref)


def test_stats_single_sample():
    labs = [VisionLabel(i, "a", 97) for i in range(16)]
    st_ = compute_stats([sample(PatchGrid(8, 8, 32), labs)], byte_vocab())
    assert st_.vision_coverage == 0.25
    assert (st_.samples, st_.images, st_.text_labels) == (1, 1, 3)


def test_stats_union_per_image():
    g = PatchGrid(10, 10, 32)
    a = [VisionLabel(i, "a", 97) for i in range(10)]
    b = [VisionLabel(i, "a", 97) for i in range(5, 25)]
    st_ = compute_stats([sample(g, a, sid="1"), sample(g, b, sid="2")], byte_vocab())
    assert st_.images == 1
    assert st_.visual_tokens == 100
    assert st_.vision_labels == 25
    assert st_.vision_coverage == 0.25
    ps = compute_stats([sample(g, a, sid="1"), sample(g, b, sid="2")], byte_vocab(), "per_sample")
    assert (ps.vision_labels, ps.visual_tokens) == (30, 200)


def test_stats_table_layout():
    st_ = compute_stats([sample(PatchGrid(8, 8, 32), [VisionLabel(0, "a", 97)])], byte_vocab())
    head, row = st_.table("DocVQA").splitlines()
    assert head.split() == ["Dataset", "Samples", "Images", "Text", "Labels", "Vision", "Labels", "Vision", "Coverage"]
    assert row.split() == ["DocVQA", "1", "1", "3", "1", "1.56%"]


def test_sample_validation():
    g = PatchGrid(2, 2, 32)
    with pytest.raises(ValidationError):
        LabeledSample("i", g, "q", "", [])
    with pytest.raises(ValidationError):
        LabeledSample("i", g, "q", "a", [VisionLabel(1, "x", 1), VisionLabel(1, "y", 2)])
    with pytest.raises(ValidationError):
        LabeledSample("i", g, "q", "a", [VisionLabel(4, "x", 1)])


def test_record_roundtrip(tmp_path):
    s = sample(PatchGrid(3, 4, 16), [VisionLabel(2, "été", 195)])
    write_samples([s], tmp_path / "s.jsonl")
    assert read_samples(tmp_path / "s.jsonl") == [s]


def test_parse_ocr_record_forms():
    rec = {"image_id": 5, "width": 10, "height": 20,
           "words": [["a", 0, 0, 1, 1, 0.9], {"text": "b", "x0": 1, "y0": 1, "x1": 2, "y1": 2}]}
    image_id, w, h, words = parse_ocr_record(rec)
    assert (image_id, w, h) == ("5", 10, 20)
    assert words[0].confidence == 0.9 and words[1].text == "b"
    with pytest.raises(ValidationError):
        parse_ocr_record({"image_id": 1, "width": 1})


def test_instructions():
    rng = random.Random(0)
    assert pick_instruction("none", rng) is None
    assert pick_instruction(0, rng) == "Answer the question using a single word or phrase."
    assert pick_instruction("random", rng) in FORMAT_INSTRUCTIONS
    assert build_prompt("q?", "Do it.") == "q?\nDo it."
    with pytest.raises(ValidationError):
        pick_instruction(99, rng)


def write_lines(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs), encoding="utf-8")
    return path


@pytest.fixture
def corpus(tmp_path):
    ocr = write_lines(tmp_path / "ocr.jsonl", [
        {"image_id": "b", "width": 256, "height": 256, "words": [["the", 60, 30, 70, 40]]},
        {"image_id": "a", "width": 96, "height": 96, "words": [["el", 1, 1, 20, 12]]},
        {"image_id": "c", "width": 96, "height": 96, "words": []},
    ])
    qa = write_lines(tmp_path / "qa.jsonl", [
        {"image_id": "b", "question": f"q{i}", "answer": f"a{i}"} for i in range(5)
    ] + [{"image_id": "a", "question": "q", "answer": "el"}])
    return ocr, qa


def test_build_samples(corpus):
    ocr, qa = corpus
    audit = []
    out = build_samples(ocr, qa, AlignConfig(), V, audit.append)
    assert [s.sample_id for s in out] == ["a#0000"] + [f"b#{k:04d}" for k in range(5)]
    assert out[1].vision_labels == [VisionLabel(10, "the", 300)]
    assert [r["image_id"] for r in audit] == ["b", "a"]


def test_build_samples_qa_sampling_is_seeded(corpus):
    ocr, qa = corpus
    cfg = AlignConfig(qa_per_image=2, seed=4, instruction="random")
    one = build_samples(ocr, qa, cfg, V)
    assert len(one) == 3
    assert build_samples(ocr, qa, cfg, V) == one
    assert build_samples(ocr, qa, cfg, V, workers=2) == one


def test_build_samples_custom_grid(corpus):
    ocr, qa = corpus
    out = build_samples(ocr, qa, AlignConfig(grid=GridConfig(cell=16, min_pixels=256, max_pixels=256 * 1024)), V)
    assert out[0].grid == PatchGrid(6, 6, 16)
